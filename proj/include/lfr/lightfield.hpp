#pragma once

// 4D light field data model: storage, patch grids, metrics.
//
// Index convention everywhere: value(x, y, theta, phi) with x fastest,
// then y, then theta, then phi. The same order is used for vectorized
// patches, the LF4D container and the sensing operator columns.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "lfr/error.hpp"

namespace lfr {

struct Dims4 {
    std::size_t x = 0;
    std::size_t y = 0;
    std::size_t theta = 5;
    std::size_t phi = 5;

    constexpr std::size_t spatial() const noexcept { return x * y; }
    constexpr std::size_t angular() const noexcept { return theta * phi; }
    constexpr std::size_t count() const noexcept { return x * y * theta * phi; }

    friend constexpr bool operator==(const Dims4&, const Dims4&) = default;
};

inline std::string to_string(const Dims4& d)
{
    return "(" + std::to_string(d.x) + "," + std::to_string(d.y) + "," + std::to_string(d.theta) + ","
        + std::to_string(d.phi) + ")";
}

/// Default patch shape used throughout: 9x9 spatial, 5x5 angular.
inline constexpr Dims4 kDefaultPatch{9, 9, 5, 5};

template <typename T>
class BasicLightField {
public:
    using value_type = T;

    BasicLightField() = default;

    explicit BasicLightField(Dims4 dims, T fill = T(0))
        : dims_(dims)
        , values_(dims.count(), fill)
    {
    }

    BasicLightField(Dims4 dims, std::vector<T> values)
        : dims_(dims)
        , values_(std::move(values))
    {
        if (values_.size() != dims_.count())
            throw DimensionError("light field: " + std::to_string(values_.size()) + " values for dims "
                + to_string(dims_));
        for (T v : values_)
            if (!std::isfinite(v))
                throw NumericError("light field: non-finite value");
    }

    const Dims4& dims() const noexcept { return dims_; }
    std::size_t size() const noexcept { return values_.size(); }

    std::size_t index(std::size_t x, std::size_t y, std::size_t t, std::size_t p) const noexcept
    {
        return x + dims_.x * (y + dims_.y * (t + dims_.theta * p));
    }

    T& operator()(std::size_t x, std::size_t y, std::size_t t, std::size_t p) noexcept
    {
        return values_[index(x, y, t, p)];
    }
    T operator()(std::size_t x, std::size_t y, std::size_t t, std::size_t p) const noexcept
    {
        return values_[index(x, y, t, p)];
    }

    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }

    template <typename U>
    BasicLightField<U> cast() const
    {
        std::vector<U> out(values_.begin(), values_.end());
        return BasicLightField<U>(dims_, std::move(out));
    }

    friend bool operator==(const BasicLightField&, const BasicLightField&) = default;

private:
    Dims4 dims_{0, 0, 0, 0};
    std::vector<T> values_;
};

using LightField = BasicLightField<float>;

/// 2D image, x fastest.
template <typename T>
class BasicImage {
public:
    BasicImage() = default;
    BasicImage(std::size_t width, std::size_t height, T fill = T(0))
        : width_(width)
        , height_(height)
        , values_(width * height, fill)
    {
    }

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    T& operator()(std::size_t x, std::size_t y) noexcept { return values_[x + width_ * y]; }
    T operator()(std::size_t x, std::size_t y) const noexcept { return values_[x + width_ * y]; }
    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<T> values_;
};

using Image = BasicImage<float>;

/// Coded samples: shape (X, Y, N), x fastest, then y, then sample index.
template <typename T>
class BasicMeasurement {
public:
    BasicMeasurement() = default;
    BasicMeasurement(std::size_t x, std::size_t y, std::size_t n, T fill = T(0))
        : x_(x)
        , y_(y)
        , n_(n)
        , values_(x * y * n, fill)
    {
        if (n == 0)
            throw DimensionError("measurement: N must be >= 1");
    }
    BasicMeasurement(std::size_t x, std::size_t y, std::size_t n, std::vector<T> values)
        : x_(x)
        , y_(y)
        , n_(n)
        , values_(std::move(values))
    {
        if (n == 0)
            throw DimensionError("measurement: N must be >= 1");
        if (values_.size() != x * y * n)
            throw DimensionError("measurement: value count does not match shape");
        for (T v : values_)
            if (!std::isfinite(v))
                throw NumericError("measurement: non-finite value");
    }

    std::size_t width() const noexcept { return x_; }
    std::size_t height() const noexcept { return y_; }
    std::size_t samples() const noexcept { return n_; }
    std::size_t size() const noexcept { return values_.size(); }

    std::size_t index(std::size_t x, std::size_t y, std::size_t n) const noexcept { return x + x_ * (y + y_ * n); }
    T& operator()(std::size_t x, std::size_t y, std::size_t n) noexcept { return values_[index(x, y, n)]; }
    T operator()(std::size_t x, std::size_t y, std::size_t n) const noexcept { return values_[index(x, y, n)]; }

    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }

    friend bool operator==(const BasicMeasurement&, const BasicMeasurement&) = default;

private:
    std::size_t x_ = 0;
    std::size_t y_ = 0;
    std::size_t n_ = 1;
    std::vector<T> values_;
};

using Measurement = BasicMeasurement<float>;

struct Origin {
    std::size_t x = 0;
    std::size_t y = 0;
    friend constexpr bool operator==(const Origin&, const Origin&) = default;
};

template <typename T>
struct BasicPatch4D {
    BasicLightField<T> values;
    Origin origin;
};

using Patch4D = BasicPatch4D<float>;

struct PatchGridSpec {
    Dims4 patch = kDefaultPatch;
    std::size_t stride = 9;
};

// ---------------------------------------------------------------------------

/// Patch origins along one axis: 0, s, 2s, ... with a final origin clamped
/// so the last patch ends exactly at the border.
inline std::vector<std::size_t> grid_origins(std::size_t extent, std::size_t patch, std::size_t stride)
{
    if (stride == 0)
        throw Error("patch grid: stride must be >= 1");
    if (patch == 0 || patch > extent)
        throw DimensionError("patch grid: patch extent " + std::to_string(patch) + " exceeds light field extent "
            + std::to_string(extent));
    std::vector<std::size_t> out;
    for (std::size_t o = 0; o + patch <= extent; o += stride)
        out.push_back(o);
    if (out.back() + patch < extent)
        out.push_back(extent - patch);
    return out;
}

/// Origins in emission order: y outer, x inner. A stride larger than the
/// patch would leave uncovered pixels and is rejected.
inline std::vector<Origin> grid_origins(std::size_t width, std::size_t height, const PatchGridSpec& spec)
{
    if (spec.stride > spec.patch.x || spec.stride > spec.patch.y)
        throw Error("patch grid: stride " + std::to_string(spec.stride) + " exceeds the patch size and leaves gaps");
    auto xs = grid_origins(width, spec.patch.x, spec.stride);
    auto ys = grid_origins(height, spec.patch.y, spec.stride);
    std::vector<Origin> out;
    out.reserve(xs.size() * ys.size());
    for (auto y0 : ys)
        for (auto x0 : xs)
            out.push_back({x0, y0});
    return out;
}

/// Per-pixel mean over all angular views.
template <typename T>
BasicImage<T> integrate_views(const BasicLightField<T>& lf)
{
    const auto& d = lf.dims();
    BasicImage<T> img(d.x, d.y);
    const double inv = 1.0 / static_cast<double>(d.angular());
    for (std::size_t y = 0; y < d.y; ++y)
        for (std::size_t x = 0; x < d.x; ++x) {
            double acc = 0.0;
            for (std::size_t p = 0; p < d.phi; ++p)
                for (std::size_t t = 0; t < d.theta; ++t)
                    acc += lf(x, y, t, p);
            img(x, y) = static_cast<T>(acc * inv);
        }
    return img;
}

template <typename T>
BasicPatch4D<T> extract_patch(const BasicLightField<T>& lf, Origin o, Dims4 patch)
{
    const auto& d = lf.dims();
    if (patch.theta != d.theta || patch.phi != d.phi)
        throw DimensionError("extract_patch: angular dims " + to_string(patch) + " do not match light field "
            + to_string(d));
    if (o.x + patch.x > d.x || o.y + patch.y > d.y)
        throw DimensionError("extract_patch: patch at (" + std::to_string(o.x) + "," + std::to_string(o.y)
            + ") exceeds light field " + to_string(d));
    BasicLightField<T> out(patch);
    for (std::size_t p = 0; p < patch.phi; ++p)
        for (std::size_t t = 0; t < patch.theta; ++t)
            for (std::size_t y = 0; y < patch.y; ++y)
                for (std::size_t x = 0; x < patch.x; ++x)
                    out(x, y, t, p) = lf(o.x + x, o.y + y, t, p);
    return {std::move(out), o};
}

template <typename T>
std::vector<BasicPatch4D<T>> extract_patches(const BasicLightField<T>& lf, const PatchGridSpec& spec)
{
    const auto& d = lf.dims();
    if (spec.patch.x > d.x || spec.patch.y > d.y)
        throw DimensionError("extract_patches: patch " + to_string(spec.patch) + " larger than light field "
            + to_string(d));
    std::vector<BasicPatch4D<T>> out;
    for (const auto& o : grid_origins(d.x, d.y, spec))
        out.push_back(extract_patch(lf, o, spec.patch));
    return out;
}

/// Count-normalized accumulation of patches into a light field of `out`.
template <typename T>
BasicLightField<T> stitch_patches(std::span<const BasicPatch4D<T>> patches, Dims4 out)
{
    std::vector<double> acc(out.count(), 0.0);
    std::vector<std::uint32_t> hits(out.x * out.y, 0);
    BasicLightField<T> shape(Dims4{out.x, out.y, out.theta, out.phi}, T(0));

    for (const auto& pt : patches) {
        const auto& pd = pt.values.dims();
        if (pd.theta != out.theta || pd.phi != out.phi || pt.origin.x + pd.x > out.x || pt.origin.y + pd.y > out.y)
            throw DimensionError("stitch_patches: patch " + to_string(pd) + " at (" + std::to_string(pt.origin.x)
                + "," + std::to_string(pt.origin.y) + ") does not fit output " + to_string(out));
        for (std::size_t y = 0; y < pd.y; ++y)
            for (std::size_t x = 0; x < pd.x; ++x)
                ++hits[(pt.origin.x + x) + out.x * (pt.origin.y + y)];
        for (std::size_t p = 0; p < pd.phi; ++p)
            for (std::size_t t = 0; t < pd.theta; ++t)
                for (std::size_t y = 0; y < pd.y; ++y)
                    for (std::size_t x = 0; x < pd.x; ++x)
                        acc[shape.index(pt.origin.x + x, pt.origin.y + y, t, p)] += pt.values(x, y, t, p);
    }

    std::vector<T> values(out.count());
    for (std::size_t y = 0; y < out.y; ++y)
        for (std::size_t x = 0; x < out.x; ++x) {
            const auto n = hits[x + out.x * y];
            if (n == 0)
                throw Error("stitch_patches: pixel (" + std::to_string(x) + "," + std::to_string(y)
                    + ") is not covered by any patch");
            for (std::size_t p = 0; p < out.phi; ++p)
                for (std::size_t t = 0; t < out.theta; ++t) {
                    const auto i = shape.index(x, y, t, p);
                    values[i] = static_cast<T>(acc[i] / n);
                }
        }
    return BasicLightField<T>(out, std::move(values));
}

template <typename T>
BasicLightField<T> stitch_patches(const std::vector<BasicPatch4D<T>>& patches, Dims4 out)
{
    return stitch_patches(std::span<const BasicPatch4D<T>>(patches), out);
}

/// Mean squared error over all samples, accumulated in double.
template <typename A, typename B>
double mse(std::span<const A> a, std::span<const B> b)
{
    if (a.size() != b.size())
        throw DimensionError("mse: size mismatch");
    if (a.empty())
        throw DimensionError("mse: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

inline double psnr_from_mse(double mse_value, double peak = 1.0)
{
    if (mse_value == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse_value);
}

/// 10*log10(peak^2/MSE); +infinity when the inputs are identical.
template <typename T, typename U>
double psnr(const BasicLightField<T>& a, const BasicLightField<U>& b, double peak = 1.0)
{
    if (!(peak > 0.0))
        throw Error("psnr: peak must be positive");
    if (a.dims() != b.dims())
        throw DimensionError("psnr: dims " + to_string(a.dims()) + " vs " + to_string(b.dims()));
    return psnr_from_mse(mse(a.values(), b.values()), peak);
}

inline bool is_infinite_psnr(double db) { return std::isinf(db) && db > 0; }

template <typename T>
double mean_of(std::span<const T> v)
{
    if (v.empty())
        throw DimensionError("mean: empty input");
    double acc = 0.0;
    for (T x : v)
        acc += static_cast<double>(x);
    return acc / static_cast<double>(v.size());
}

/// Scales so the mean equals target_mean. Works for light fields,
/// measurements and images.
template <typename Container>
Container mean_scale(const Container& src, double target_mean)
{
    using T = std::remove_cvref_t<decltype(src.values()[0])>;
    const double m = mean_of<T>(src.values());
    if (m == 0.0)
        throw NumericError("mean_scale: input has zero mean");
    const double k = target_mean / m;
    Container out = src;
    for (auto& v : out.values())
        v = static_cast<T>(static_cast<double>(v) * k);
    return out;
}

} // namespace lfr
