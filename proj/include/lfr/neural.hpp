#pragma once

// Two-branch reconstruction network with hand-written backward passes.
//
// Batched tensors are Eigen matrices. Fully connected activations are
// (features x batch); 4D volumes are (channels x batch*P) where P is the
// number of patch samples and each sample owns a contiguous block of P
// columns in LF4D order.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "lfr/error.hpp"
#include "lfr/io.hpp"
#include "lfr/lightfield.hpp"
#include "lfr/optics.hpp"

namespace lfr::neural {

using Eigen::Index;

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

inline constexpr std::size_t kTaps = 81; // 3^4

// ---------------------------------------------------------------------------
// Loss

/// Per-view weights W(theta, phi), indexed w(t, p).
struct LossWeights {
    Eigen::MatrixXd w;

    /// sqrt(1 + |dt| + |dp|) about the central view; for 5x5 this is the
    /// table with sqrt(5) at the corners and 1 at the centre.
    static LossWeights angular(std::size_t n_theta = 5, std::size_t n_phi = 5)
    {
        LossWeights lw;
        lw.w.resize(static_cast<Index>(n_theta), static_cast<Index>(n_phi));
        const double ct = (static_cast<double>(n_theta) - 1.0) / 2.0;
        const double cp = (static_cast<double>(n_phi) - 1.0) / 2.0;
        for (std::size_t t = 0; t < n_theta; ++t)
            for (std::size_t p = 0; p < n_phi; ++p)
                lw.w(static_cast<Index>(t), static_cast<Index>(p))
                    = std::sqrt(1.0 + std::abs(static_cast<double>(t) - ct) + std::abs(static_cast<double>(p) - cp));
        return lw;
    }

    static LossWeights uniform(std::size_t n_theta = 5, std::size_t n_phi = 5)
    {
        return {Eigen::MatrixXd::Ones(static_cast<Index>(n_theta), static_cast<Index>(n_phi))};
    }

    /// Weight for every sample of a patch in LF4D order.
    template <typename S>
    Vec<S> per_sample(const Dims4& patch) const
    {
        if (static_cast<std::size_t>(w.rows()) != patch.theta || static_cast<std::size_t>(w.cols()) != patch.phi)
            throw DimensionError("loss weights: " + std::to_string(w.rows()) + "x" + std::to_string(w.cols())
                + " table does not match patch " + to_string(patch));
        Vec<S> out(static_cast<Index>(patch.count()));
        const std::size_t s = patch.spatial();
        for (std::size_t i = 0; i < patch.count(); ++i) {
            const std::size_t a = i / s;
            out[static_cast<Index>(i)] = static_cast<S>(w(static_cast<Index>(a % patch.theta), static_cast<Index>(a / patch.theta)));
        }
        return out;
    }
};

/// Sum over the batch of  sum_{t,p} W(t,p) sum_{x,y} (pred - target)^2;
/// writes d(loss)/d(pred) into `grad` when non-null.
template <typename S>
double weighted_l2_loss(const Mat<S>& pred, const Mat<S>& target, const Vec<S>& weights, Mat<S>* grad = nullptr)
{
    if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.rows() != weights.size())
        throw DimensionError("weighted loss: shape mismatch");
    const Mat<S> diff = pred - target;
    double loss = 0.0;
    for (Index b = 0; b < diff.cols(); ++b)
        for (Index i = 0; i < diff.rows(); ++i)
            loss += static_cast<double>(weights[i]) * static_cast<double>(diff(i, b)) * static_cast<double>(diff(i, b));
    if (grad)
        *grad = S(2) * (diff.array().colwise() * weights.array()).matrix();
    return loss;
}

template <typename S>
std::pair<double, BasicLightField<S>> weighted_l2_loss(
    const BasicLightField<S>& pred, const BasicLightField<S>& target, const LossWeights& w)
{
    if (!(pred.dims() == target.dims()))
        throw DimensionError("weighted loss: " + to_string(pred.dims()) + " vs " + to_string(target.dims()));
    const Index p = static_cast<Index>(pred.size());
    const Mat<S> a = Eigen::Map<const Mat<S>>(pred.values().data(), p, 1);
    const Mat<S> b = Eigen::Map<const Mat<S>>(target.values().data(), p, 1);
    Mat<S> g;
    const double loss = weighted_l2_loss<S>(a, b, w.per_sample<S>(pred.dims()), &g);
    return {loss, BasicLightField<S>(pred.dims(), std::vector<S>(g.data(), g.data() + p))};
}

// ---------------------------------------------------------------------------
// Fully connected layer

template <typename S>
struct FcLayer {
    Mat<S> w; // out x in
    Vec<S> b;
    bool relu = true;

    Index in() const noexcept { return w.cols(); }
    Index out() const noexcept { return w.rows(); }
};

template <typename S>
Mat<S> fc_forward(const FcLayer<S>& l, const Mat<S>& x)
{
    if (x.rows() != l.in())
        throw DimensionError("fc: input has " + std::to_string(x.rows()) + " features, layer expects "
            + std::to_string(l.in()));
    Mat<S> y = l.w * x;
    y.colwise() += l.b;
    if (l.relu)
        y = y.cwiseMax(S(0));
    return y;
}

/// Accumulates parameter gradients into `g` and returns d/dx when asked.
/// `y` is the forward output (used for the ReLU mask).
template <typename S>
Mat<S> fc_backward(const FcLayer<S>& l, const Mat<S>& x, const Mat<S>& y, const Mat<S>& dy, FcLayer<S>& g,
    bool need_dx = true)
{
    if (dy.rows() != l.out() || dy.cols() != x.cols())
        throw DimensionError("fc backward: gradient shape mismatch");
    Mat<S> dz = dy;
    if (l.relu)
        dz = (y.array() > S(0)).select(dy.array(), S(0)).matrix();
    g.w.noalias() += dz * x.transpose();
    g.b += dz.rowwise().sum();
    if (!need_dx)
        return {};
    return l.w.transpose() * dz;
}

template <typename S>
Mat<S> fc_backward(const FcLayer<S>& l, const Mat<S>& x, const Mat<S>& dy, FcLayer<S>& g)
{
    return fc_backward(l, x, fc_forward(l, x), dy, g);
}

// ---------------------------------------------------------------------------
// 4D convolution, 3x3x3x3 taps, zero "same" padding

/// Neighbour table: nbr[p * 81 + t] is the input sample seen by tap t at
/// output sample p; samples outside the patch map to the padding index P.
/// Tap t = a + 3(b + 3(c + 3d)) for offsets (a-1, b-1, c-1, d-1) along
/// (x, y, theta, phi).
struct ConvGeometry {
    Dims4 dims;
    std::size_t positions = 0;
    std::vector<std::int32_t> nbr;

    ConvGeometry() = default;
    explicit ConvGeometry(Dims4 d)
        : dims(d)
        , positions(d.count())
        , nbr(kTaps * d.count())
    {
        const std::array<std::size_t, 4> ext{d.x, d.y, d.theta, d.phi};
        for (std::size_t p = 0; p < positions; ++p) {
            const std::array<long, 4> base{static_cast<long>(p % d.x), static_cast<long>(p / d.x % d.y),
                static_cast<long>(p / d.spatial() % d.theta), static_cast<long>(p / (d.spatial() * d.theta))};
            for (std::size_t t = 0; t < kTaps; ++t) {
                const std::array<long, 4> off{static_cast<long>(t % 3) - 1, static_cast<long>(t / 3 % 3) - 1,
                    static_cast<long>(t / 9 % 3) - 1, static_cast<long>(t / 27) - 1};
                std::array<long, 4> c{};
                bool inside = true;
                for (int k = 0; k < 4; ++k) {
                    c[k] = base[k] + off[k];
                    inside = inside && c[k] >= 0 && c[k] < static_cast<long>(ext[k]);
                }
                const long lin = c[0] + static_cast<long>(d.x) * (c[1] + static_cast<long>(d.y) * (c[2] + static_cast<long>(d.theta) * c[3]));
                nbr[p * kTaps + t] = static_cast<std::int32_t>(inside ? lin : static_cast<long>(positions));
            }
        }
    }
};

template <typename S>
struct Conv4DLayer {
    Mat<S> k; // out_channels x (81 * in_channels), column = tap * in_channels + c
    Vec<S> b;
    bool relu = true;

    Index in_channels() const noexcept { return k.cols() / static_cast<Index>(kTaps); }
    Index out_channels() const noexcept { return k.rows(); }
};

namespace detail {

template <std::size_t C, typename S>
void gather_taps(const S* src, const std::int32_t* nb, std::size_t n, S* dst, std::size_t c)
{
    if constexpr (C == 0) {
        for (std::size_t i = 0; i < n; ++i, dst += c)
            std::copy_n(src + c * static_cast<std::size_t>(nb[i]), c, dst);
    } else {
        for (std::size_t i = 0; i < n; ++i, dst += C) {
            const S* s = src + C * static_cast<std::size_t>(nb[i]);
            for (std::size_t k = 0; k < C; ++k)
                dst[k] = s[k];
        }
    }
}

/// One sample: `in` is channels x P (contiguous), cols becomes (81*C) x P.
template <typename S>
void im2col(const ConvGeometry& g, const S* in, Index channels, Mat<S>& padded, Mat<S>& cols)
{
    const Index p_count = static_cast<Index>(g.positions);
    padded.resize(channels, p_count + 1);
    std::copy(in, in + channels * p_count, padded.data());
    padded.col(p_count).setZero();
    cols.resize(channels * static_cast<Index>(kTaps), p_count);
    const std::size_t n = g.positions * kTaps, c = static_cast<std::size_t>(channels);
    if (c == 1)
        gather_taps<1>(padded.data(), g.nbr.data(), n, cols.data(), c);
    else if (c == 8)
        gather_taps<8>(padded.data(), g.nbr.data(), n, cols.data(), c);
    else
        gather_taps<0>(padded.data(), g.nbr.data(), n, cols.data(), c);
}

inline void check_volume(const ConvGeometry& g, Index rows, Index cols, Index channels, const char* who)
{
    if (rows != channels)
        throw DimensionError(std::string(who) + ": volume has " + std::to_string(rows) + " channels, layer expects "
            + std::to_string(channels));
    if (g.positions == 0 || cols % static_cast<Index>(g.positions) != 0)
        throw DimensionError(std::string(who) + ": volume length is not a multiple of the patch size");
}

} // namespace detail

/// vol: in_channels x (batch * P).
template <typename S>
Mat<S> conv4d_forward(const Conv4DLayer<S>& l, const ConvGeometry& g, const Mat<S>& vol)
{
    detail::check_volume(g, vol.rows(), vol.cols(), l.in_channels(), "conv4d");
    const Index p = static_cast<Index>(g.positions);
    const Index batch = vol.cols() / p;
    Mat<S> out(l.out_channels(), vol.cols());
    Mat<S> padded, cols;
    for (Index s = 0; s < batch; ++s) {
        detail::im2col(g, vol.data() + s * p * vol.rows(), vol.rows(), padded, cols);
        out.middleCols(s * p, p).noalias() = l.k * cols;
    }
    out.colwise() += l.b;
    if (l.relu)
        out = out.cwiseMax(S(0));
    return out;
}

template <typename S>
Mat<S> conv4d_backward(const Conv4DLayer<S>& l, const ConvGeometry& g, const Mat<S>& vol, const Mat<S>& out,
    const Mat<S>& dout, Conv4DLayer<S>& grad, bool need_dvol = true)
{
    detail::check_volume(g, vol.rows(), vol.cols(), l.in_channels(), "conv4d backward");
    if (dout.rows() != l.out_channels() || dout.cols() != vol.cols())
        throw DimensionError("conv4d backward: gradient shape mismatch");
    Mat<S> dz = dout;
    if (l.relu)
        dz = (out.array() > S(0)).select(dout.array(), S(0)).matrix();
    grad.b += dz.rowwise().sum();

    const Index p = static_cast<Index>(g.positions);
    const Index batch = vol.cols() / p;
    Mat<S> dvol;
    if (need_dvol)
        dvol.resize(vol.rows(), vol.cols());
    // d(vol) is the correlation of d(out) with the tap-reversed, channel
    // transposed kernel: tap t and tap 80 - t have opposite offsets.
    const Index cin = l.in_channels(), cout = l.out_channels();
    Mat<S> flipped;
    if (need_dvol) {
        flipped.resize(cin, cout * static_cast<Index>(kTaps));
        for (Index t = 0; t < static_cast<Index>(kTaps); ++t)
            flipped.middleCols(t * cout, cout) = l.k.middleCols((static_cast<Index>(kTaps) - 1 - t) * cin, cin).transpose();
    }
    Mat<S> padded, cols;
    for (Index s = 0; s < batch; ++s) {
        detail::im2col(g, vol.data() + s * p * cin, cin, padded, cols);
        const auto dzs = dz.middleCols(s * p, p);
        grad.k.noalias() += dzs * cols.transpose();
        if (need_dvol) {
            detail::im2col(g, dz.data() + s * p * cout, cout, padded, cols);
            dvol.middleCols(s * p, p).noalias() = flipped * cols;
        }
    }
    return dvol;
}

template <typename S>
Mat<S> conv4d_backward(const Conv4DLayer<S>& l, const ConvGeometry& g, const Mat<S>& vol, const Mat<S>& dout,
    Conv4DLayer<S>& grad)
{
    return conv4d_backward(l, g, vol, conv4d_forward(l, g, vol), dout, grad);
}

// ---------------------------------------------------------------------------
// Model

struct ModelSpec {
    Dims4 patch = kDefaultPatch;
    std::size_t n = 2;                                            // measurements per pixel
    std::vector<std::size_t> fc_widths{2025, 768, 2025, 768, 2025, 2025}; // last = patch size
    std::vector<std::size_t> lower_channels{8, 8, 8, 8};         // hidden channels of the lower branch
    bool trainable_combination = false;

    std::size_t inputs() const noexcept { return patch.spatial() * n; }

    void validate() const
    {
        if (patch.count() == 0 || n == 0)
            throw Error("model: empty patch or zero measurements per pixel");
        if (fc_widths.empty() || fc_widths.back() != patch.count())
            throw Error("model: the last fully connected width must equal the patch size "
                + std::to_string(patch.count()));
        for (auto w : fc_widths)
            if (w == 0)
                throw Error("model: zero layer width");
        for (auto c : lower_channels)
            if (c == 0)
                throw Error("model: zero channel count");
    }
};

enum class Branch { upper, lower, both };

template <typename S>
struct TwoBranchModel {
    Dims4 patch = kDefaultPatch;
    std::size_t n = 2;
    std::vector<FcLayer<S>> fc;
    Conv4DLayer<S> up_conv;
    std::vector<Conv4DLayer<S>> low;
    S w_up = S(0.5);
    S w_low = S(0.5);
    bool trainable_combination = false;

    ModelSpec spec() const
    {
        ModelSpec s;
        s.patch = patch;
        s.n = n;
        s.fc_widths.clear();
        for (const auto& l : fc)
            s.fc_widths.push_back(static_cast<std::size_t>(l.out()));
        s.lower_channels.clear();
        for (std::size_t i = 0; i + 1 < low.size(); ++i)
            s.lower_channels.push_back(static_cast<std::size_t>(low[i].out_channels()));
        s.trainable_combination = trainable_combination;
        return s;
    }

    /// Same architecture, every parameter zero (used as gradient storage).
    TwoBranchModel zeros_like() const
    {
        TwoBranchModel z = *this;
        for (auto& l : z.fc) {
            l.w.setZero();
            l.b.setZero();
        }
        z.up_conv.k.setZero();
        z.up_conv.b.setZero();
        for (auto& l : z.low) {
            l.k.setZero();
            l.b.setZero();
        }
        z.w_up = z.w_low = S(0);
        return z;
    }

    template <typename U>
    TwoBranchModel<U> cast() const
    {
        TwoBranchModel<U> m;
        m.patch = patch;
        m.n = n;
        for (const auto& l : fc)
            m.fc.push_back({l.w.template cast<U>(), l.b.template cast<U>(), l.relu});
        m.up_conv = {up_conv.k.template cast<U>(), up_conv.b.template cast<U>(), up_conv.relu};
        for (const auto& l : low)
            m.low.push_back({l.k.template cast<U>(), l.b.template cast<U>(), l.relu});
        m.w_up = static_cast<U>(w_up);
        m.w_low = static_cast<U>(w_low);
        m.trainable_combination = trainable_combination;
        return m;
    }
};

/// Visits every parameter block as f(name, data, size, branch).
template <typename M, typename F>
void for_each_block(M& m, F&& f)
{
    for (std::size_t i = 0; i < m.fc.size(); ++i) {
        const std::string base = "upper.fc" + std::to_string(i + 1);
        f(base + ".weight", m.fc[i].w.data(), static_cast<std::size_t>(m.fc[i].w.size()), Branch::upper);
        f(base + ".bias", m.fc[i].b.data(), static_cast<std::size_t>(m.fc[i].b.size()), Branch::upper);
    }
    f(std::string("upper.conv.weight"), m.up_conv.k.data(), static_cast<std::size_t>(m.up_conv.k.size()), Branch::upper);
    f(std::string("upper.conv.bias"), m.up_conv.b.data(), static_cast<std::size_t>(m.up_conv.b.size()), Branch::upper);
    for (std::size_t i = 0; i < m.low.size(); ++i) {
        const std::string base = "lower.conv" + std::to_string(i + 1);
        f(base + ".weight", m.low[i].k.data(), static_cast<std::size_t>(m.low[i].k.size()), Branch::lower);
        f(base + ".bias", m.low[i].b.data(), static_cast<std::size_t>(m.low[i].b.size()), Branch::lower);
    }
    if (m.trainable_combination) {
        f(std::string("combine.upper"), &m.w_up, std::size_t{1}, Branch::both);
        f(std::string("combine.lower"), &m.w_low, std::size_t{1}, Branch::both);
    }
}

template <typename S>
void set_zero(TwoBranchModel<S>& m)
{
    for_each_block(m, [](const std::string&, S* d, std::size_t sz, Branch) { std::fill(d, d + sz, S(0)); });
    m.w_up = m.w_low = S(0);
}

template <typename S>
std::size_t parameter_count(const TwoBranchModel<S>& m)
{
    std::size_t n = 0;
    for_each_block(const_cast<TwoBranchModel<S>&>(m), [&](const std::string&, S*, std::size_t sz, Branch) { n += sz; });
    return n;
}

/// He-normal weights for ReLU layers, variance 1/fan_in otherwise, zero
/// biases. The upper-branch convolution starts as the identity.
template <typename S>
TwoBranchModel<S> make_model(const ModelSpec& spec, std::uint64_t seed)
{
    spec.validate();
    std::mt19937_64 rng(seed);
    auto fill = [&](auto& mat, double fan_in, bool relu) {
        std::normal_distribution<double> nd(0.0, std::sqrt((relu ? 2.0 : 1.0) / fan_in));
        for (Index j = 0; j < mat.cols(); ++j)
            for (Index i = 0; i < mat.rows(); ++i)
                mat(i, j) = static_cast<S>(nd(rng));
    };
    TwoBranchModel<S> m;
    m.patch = spec.patch;
    m.n = spec.n;
    m.trainable_combination = spec.trainable_combination;
    std::size_t in = spec.inputs();
    for (std::size_t i = 0; i < spec.fc_widths.size(); ++i) {
        FcLayer<S> l;
        l.relu = i + 1 < spec.fc_widths.size();
        l.w.resize(static_cast<Index>(spec.fc_widths[i]), static_cast<Index>(in));
        fill(l.w, static_cast<double>(in), l.relu);
        l.b = Vec<S>::Zero(l.w.rows());
        m.fc.push_back(std::move(l));
        in = spec.fc_widths[i];
    }
    m.up_conv.k = Mat<S>::Zero(1, static_cast<Index>(kTaps));
    m.up_conv.k(0, static_cast<Index>(kTaps / 2)) = S(1);
    m.up_conv.b = Vec<S>::Zero(1);
    m.up_conv.relu = false;

    std::vector<std::size_t> ch{1};
    ch.insert(ch.end(), spec.lower_channels.begin(), spec.lower_channels.end());
    ch.push_back(1);
    for (std::size_t i = 0; i + 1 < ch.size(); ++i) {
        Conv4DLayer<S> l;
        l.relu = i + 2 < ch.size();
        l.k.resize(static_cast<Index>(ch[i + 1]), static_cast<Index>(ch[i] * kTaps));
        fill(l.k, static_cast<double>(ch[i] * kTaps), l.relu);
        l.b = Vec<S>::Zero(l.k.rows());
        m.low.push_back(std::move(l));
    }
    return m;
}

/// Activations kept for the backward pass.
template <typename S>
struct ForwardCache {
    std::vector<Mat<S>> fc;  // fc[0] = input, fc[i] = output of layer i
    Mat<S> up_in, up_out;    // 1 x B*P
    std::vector<Mat<S>> low; // low[0] = adjoint volume, low[i] = output of layer i
    Mat<S> upper, lower;     // P x B branch outputs
};

namespace detail {

template <typename S>
Mat<S> as_volume(const Mat<S>& m) // P x B -> 1 x B*P
{
    return Eigen::Map<const Mat<S>>(m.data(), 1, m.size());
}

template <typename S>
Mat<S> as_batch(const Mat<S>& v, Index p) // 1 x B*P -> P x B
{
    return Eigen::Map<const Mat<S>>(v.data(), p, v.size() / p);
}

} // namespace detail

/// meas: (px*py*N) x B, adjoint: P x B. Returns the requested branch output
/// (or their combination) as P x B.
template <typename S>
Mat<S> forward_batch(const TwoBranchModel<S>& m, const ConvGeometry& g, const Mat<S>& meas, const Mat<S>& adjoint,
    Branch which, ForwardCache<S>* cache = nullptr)
{
    const Index p = static_cast<Index>(m.patch.count());
    if (!(g.dims == m.patch))
        throw DimensionError("model: geometry does not match model patch");
    ForwardCache<S> local;
    ForwardCache<S>& c = cache ? *cache : local;
    if (which != Branch::lower) {
        if (meas.rows() != static_cast<Index>(m.patch.spatial() * m.n))
            throw DimensionError("model: measurement length " + std::to_string(meas.rows()) + " does not match model input "
                + std::to_string(m.patch.spatial() * m.n));
        c.fc.assign(1, meas);
        for (const auto& l : m.fc)
            c.fc.push_back(fc_forward(l, c.fc.back()));
        c.up_in = detail::as_volume(c.fc.back());
        c.up_out = conv4d_forward(m.up_conv, g, c.up_in);
        c.upper = detail::as_batch(c.up_out, p);
    }
    if (which != Branch::upper) {
        if (adjoint.rows() != p)
            throw DimensionError("model: adjoint length does not match patch size");
        c.low.assign(1, detail::as_volume(adjoint));
        for (const auto& l : m.low)
            c.low.push_back(conv4d_forward(l, g, c.low.back()));
        c.lower = detail::as_batch(c.low.back(), p);
    }
    if (which == Branch::upper)
        return c.upper;
    if (which == Branch::lower)
        return c.lower;
    return m.w_up * c.upper + m.w_low * c.lower;
}

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
template <typename S>
void backward_batch(const TwoBranchModel<S>& m, const ConvGeometry& g, const ForwardCache<S>& c, const Mat<S>& dout,
    Branch which, TwoBranchModel<S>& grad)
{
    if (which == Branch::both && m.trainable_combination) {
        grad.w_up += (dout.array() * c.upper.array()).sum();
        grad.w_low += (dout.array() * c.lower.array()).sum();
    }
    if (which != Branch::lower) {
        const Mat<S> d = which == Branch::both ? Mat<S>(m.w_up * dout) : dout;
        Mat<S> dv = conv4d_backward(m.up_conv, g, c.up_in, c.up_out, detail::as_volume(d), grad.up_conv);
        Mat<S> dx = detail::as_batch(dv, dout.rows());
        for (std::size_t i = m.fc.size(); i-- > 0;)
            dx = fc_backward(m.fc[i], c.fc[i], c.fc[i + 1], dx, grad.fc[i], i > 0);
    }
    if (which != Branch::upper) {
        Mat<S> dv = detail::as_volume(which == Branch::both ? Mat<S>(m.w_low * dout) : dout);
        for (std::size_t i = m.low.size(); i-- > 0;)
            dv = conv4d_backward(m.low[i], g, c.low[i], c.low[i + 1], dv, grad.low[i], i > 0);
    }
}

/// Single-patch inference: both branches from a measurement and its operator.
template <typename S, typename T>
BasicLightField<T> model_forward(
    const TwoBranchModel<S>& m, const BasicMeasurement<T>& meas, const optics::SensingOperator& op)
{
    if (!(op.patch == m.patch) || op.n != m.n)
        throw DimensionError("model_forward: model is for " + to_string(m.patch) + " N=" + std::to_string(m.n)
            + ", operator is " + to_string(op.patch) + " N=" + std::to_string(op.n));
    optics::check_measurement(op, meas, "model_forward");
    const Eigen::VectorXd y = optics::vectorize(meas.values());
    const Mat<S> x = y.cast<S>();
    const Mat<S> adj = (op.phi.transpose() * y).cast<S>();
    const Mat<S> out = forward_batch(m, ConvGeometry(m.patch), x, adj, Branch::both);
    return optics::unvectorize<T>(out.col(0).template cast<double>(), m.patch);
}

// ---------------------------------------------------------------------------
// ADAM

struct AdamConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename S>
struct ParamBlock {
    std::string name;
    S* value = nullptr;
    const S* grad = nullptr;
    std::size_t size = 0;
};

template <typename S>
struct AdamMoments {
    std::vector<S> m, v;
    std::uint64_t t = 0;
};

/// Per-block moments and step counts, keyed by block name.
template <typename S>
using AdamState = std::map<std::string, AdamMoments<S>>;

template <typename S>
void adam_step(const std::vector<ParamBlock<S>>& blocks, AdamState<S>& state, const AdamConfig& cfg)
{
    for (const auto& b : blocks)
        for (std::size_t i = 0; i < b.size; ++i)
            if (!std::isfinite(static_cast<double>(b.grad[i])))
                throw NumericError("adam: non-finite gradient in parameter block '" + b.name + "'");
    for (const auto& b : blocks) {
        auto& st = state[b.name];
        if (st.m.size() != b.size) {
            st.m.assign(b.size, S(0));
            st.v.assign(b.size, S(0));
            st.t = 0;
        }
        ++st.t;
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
        const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
        const S step = static_cast<S>(cfg.lr / c1);
        const S inv_c2 = static_cast<S>(1.0 / c2);
        const S eps = static_cast<S>(cfg.eps);
        for (std::size_t i = 0; i < b.size; ++i) {
            const S g = b.grad[i];
            st.m[i] = b1 * st.m[i] + (S(1) - b1) * g;
            st.v[i] = b2 * st.v[i] + (S(1) - b2) * g * g;
            b.value[i] -= step * st.m[i] / (std::sqrt(st.v[i] * inv_c2) + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Data

/// Training pairs stored column-wise.
struct Dataset {
    Dims4 patch = kDefaultPatch;
    std::size_t n = 2;
    Eigen::MatrixXf meas;    // (px*py*N) x count
    Eigen::MatrixXf adjoint; // P x count, Phi^T of the patch's own operator
    Eigen::MatrixXf target;  // P x count

    std::size_t size() const noexcept { return static_cast<std::size_t>(target.cols()); }
};

struct CaptureSource {
    const LightField* truth = nullptr;
    const optics::CodedCamera* camera = nullptr;
    const Measurement* frame = nullptr;
};

/// Draws `count` patches at seeded uniform-random origins (block-aligned for
/// the dense random model) from the given captures.
inline Dataset sample_patches(const std::vector<CaptureSource>& sources, std::size_t count, std::uint64_t seed)
{
    if (sources.empty())
        throw Error("dataset: no capture sources");
    const optics::CodedCamera& cam0 = *sources.front().camera;
    Dataset ds;
    ds.patch = cam0.patch();
    ds.n = cam0.samples_per_pixel();
    const Index p = static_cast<Index>(ds.patch.count());
    const Index m = static_cast<Index>(ds.patch.spatial() * ds.n);
    ds.meas.resize(m, static_cast<Index>(count));
    ds.adjoint.resize(p, static_cast<Index>(count));
    ds.target.resize(p, static_cast<Index>(count));
    for (const auto& s : sources) {
        if (!s.truth || !s.camera || !s.frame)
            throw Error("dataset: incomplete capture source");
        if (!(s.camera->patch() == ds.patch) || s.camera->samples_per_pixel() != ds.n)
            throw DimensionError("dataset: capture sources disagree on patch or N");
        if (s.frame->width() != s.truth->dims().x || s.frame->height() != s.truth->dims().y)
            throw DimensionError("dataset: frame and light field sizes differ");
    }

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, sources.size() - 1);
    for (std::size_t i = 0; i < count; ++i) {
        const auto& s = sources[pick(rng)];
        const auto& d = s.truth->dims();
        const bool aligned = !s.camera->pixel_local();
        const std::size_t step_x = aligned ? ds.patch.x : 1, step_y = aligned ? ds.patch.y : 1;
        std::uniform_int_distribution<std::size_t> ox(0, (d.x - ds.patch.x) / step_x);
        std::uniform_int_distribution<std::size_t> oy(0, (d.y - ds.patch.y) / step_y);
        const Origin o{ox(rng) * step_x, oy(rng) * step_y};
        const auto meas = s.camera->patch_measurement(*s.frame, o);
        const auto& op = s.camera->op_at(o);
        const Eigen::VectorXd y = optics::vectorize(meas.values());
        const Index col = static_cast<Index>(i);
        ds.meas.col(col) = y.cast<float>();
        ds.adjoint.col(col) = (op.phi.transpose() * y).cast<float>();
        ds.target.col(col) = optics::vectorize(extract_patch(*s.truth, o, ds.patch).values.values()).cast<float>();
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Training

enum class Phase { upper, lower, joint };
enum class LossMode { uniform, weighted };

inline std::string to_string(Phase p)
{
    switch (p) {
    case Phase::upper:
        return "upper";
    case Phase::lower:
        return "lower";
    case Phase::joint:
        return "joint";
    }
    return "?";
}

inline Phase parse_phase(const std::string& s)
{
    if (s == "upper")
        return Phase::upper;
    if (s == "lower")
        return Phase::lower;
    if (s == "joint")
        return Phase::joint;
    throw Error("unknown training phase '" + s + "' (expected upper, lower or joint)");
}

inline Branch branch_of(Phase p)
{
    return p == Phase::upper ? Branch::upper : p == Phase::lower ? Branch::lower : Branch::both;
}

struct PhaseSpec {
    Phase phase = Phase::joint;
    std::size_t epochs = 1;
};

struct TrainConfig {
    AdamConfig adam;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
    std::vector<PhaseSpec> schedule{{Phase::upper, 1}, {Phase::lower, 1}, {Phase::joint, 1}};
    LossMode loss = LossMode::weighted;
    double train_fraction = 0.85;
    bool reset_optimizer_between_phases = false;

    void validate() const
    {
        if (!(adam.lr > 0.0))
            throw Error("train: learning rate must be > 0");
        if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0))
            throw Error("train: invalid ADAM constants");
        if (batch_size == 0)
            throw Error("train: batch size must be >= 1");
        if (!(train_fraction > 0.0 && train_fraction < 1.0))
            throw Error("train: train/validation split must lie in (0, 1)");
        if (schedule.empty())
            throw Error("train: empty schedule");
    }
};

struct EpochRecord {
    std::size_t epoch = 0; // 1-based, counted across phases
    Phase phase = Phase::joint;
    double train_loss = 0.0; // mean per-patch loss over the epoch
    double val_loss = 0.0;   // NaN when the validation split is empty
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::vector<std::size_t> train_index, val_index;
};

/// Seeded 85:15-style split; both parts are non-empty when size >= 2.
inline void split_indices(std::size_t size, double fraction, std::uint64_t seed, std::vector<std::size_t>& train,
    std::vector<std::size_t>& val)
{
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed ^ 0x5bd1e995u);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t n_train = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(size)));
    n_train = std::clamp<std::size_t>(n_train, std::min<std::size_t>(1, size), size > 1 ? size - 1 : size);
    train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
}

namespace detail {

template <typename S>
void gather(const Dataset& ds, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end, Mat<S>& meas,
    Mat<S>& adj, Mat<S>& target, Branch which)
{
    const Index b = static_cast<Index>(end - begin);
    if (which != Branch::lower)
        meas.resize(ds.meas.rows(), b);
    if (which != Branch::upper)
        adj.resize(ds.adjoint.rows(), b);
    target.resize(ds.target.rows(), b);
    for (Index j = 0; j < b; ++j) {
        const Index c = static_cast<Index>(idx[begin + static_cast<std::size_t>(j)]);
        if (which != Branch::lower)
            meas.col(j) = ds.meas.col(c).cast<S>();
        if (which != Branch::upper)
            adj.col(j) = ds.adjoint.col(c).cast<S>();
        target.col(j) = ds.target.col(c).cast<S>();
    }
}

} // namespace detail

/// Mean per-patch loss of one branch output over `idx`.
template <typename S>
double evaluate_loss(const TwoBranchModel<S>& m, const Dataset& ds, const std::vector<std::size_t>& idx, Branch which,
    const LossWeights& w, std::size_t batch = 32)
{
    if (idx.empty())
        return std::numeric_limits<double>::quiet_NaN();
    const ConvGeometry g(m.patch);
    const Vec<S> wv = w.per_sample<S>(m.patch);
    double total = 0.0;
    Mat<S> x, a, t;
    for (std::size_t s = 0; s < idx.size(); s += batch) {
        const std::size_t e = std::min(idx.size(), s + batch);
        detail::gather(ds, idx, s, e, x, a, t, which);
        total += weighted_l2_loss<S>(forward_batch(m, g, x, a, which), t, wv);
    }
    return total / static_cast<double>(idx.size());
}

/// Mean squared error per view (theta x phi) of one branch output, the
/// combined output by default.
template <typename S>
Eigen::MatrixXd per_view_mse(const TwoBranchModel<S>& m, const Dataset& ds, const std::vector<std::size_t>& idx,
    Branch which = Branch::both, std::size_t batch = 32)
{
    const ConvGeometry g(m.patch);
    const std::size_t sp = m.patch.spatial();
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(static_cast<Index>(m.patch.theta), static_cast<Index>(m.patch.phi));
    Mat<S> x, a, t;
    for (std::size_t s = 0; s < idx.size(); s += batch) {
        const std::size_t e = std::min(idx.size(), s + batch);
        detail::gather(ds, idx, s, e, x, a, t, which);
        const Mat<S> out = forward_batch(m, g, x, a, which);
        for (Index b = 0; b < out.cols(); ++b)
            for (Index i = 0; i < out.rows(); ++i) {
                const double d = static_cast<double>(out(i, b)) - static_cast<double>(t(i, b));
                const std::size_t v = static_cast<std::size_t>(i) / sp;
                acc(static_cast<Index>(v % m.patch.theta), static_cast<Index>(v / m.patch.theta)) += d * d;
            }
    }
    if (!idx.empty())
        acc /= static_cast<double>(idx.size() * sp);
    return acc;
}

/// Runs the schedule phase by phase. Parameters outside the active branch
/// are never touched. Batches are processed in a fixed order on one thread,
/// so results depend only on (seed, config, dataset).
template <typename S>
TrainResult train(TwoBranchModel<S>& m, const Dataset& ds, const TrainConfig& cfg,
    const std::function<void(const EpochRecord&)>& progress = {})
{
    cfg.validate();
    if (ds.size() == 0)
        throw Error("train: empty dataset");
    if (!(ds.patch == m.patch) || ds.n != m.n)
        throw DimensionError("train: dataset (" + to_string(ds.patch) + ", N=" + std::to_string(ds.n)
            + ") does not match model (" + to_string(m.patch) + ", N=" + std::to_string(m.n) + ")");

    TrainResult res;
    split_indices(ds.size(), cfg.train_fraction, cfg.seed, res.train_index, res.val_index);
    const LossWeights lw = cfg.loss == LossMode::weighted ? LossWeights::angular(m.patch.theta, m.patch.phi)
                                                          : LossWeights::uniform(m.patch.theta, m.patch.phi);
    const Vec<S> wv = lw.per_sample<S>(m.patch);
    const ConvGeometry g(m.patch);
    std::mt19937_64 rng(cfg.seed);
    AdamState<S> adam;
    TwoBranchModel<S> grad = m.zeros_like();
    ForwardCache<S> cache;
    Mat<S> x, a, t, dout;
    std::vector<std::size_t> order = res.train_index;
    std::size_t epoch = 0;

    for (const auto& ph : cfg.schedule) {
        if (cfg.reset_optimizer_between_phases)
            adam.clear();
        const Branch which = branch_of(ph.phase);
        for (std::size_t e = 0; e < ph.epochs; ++e) {
            ++epoch;
            std::shuffle(order.begin(), order.end(), rng);
            double total = 0.0;
            for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
                const std::size_t end = std::min(order.size(), s + cfg.batch_size);
                detail::gather(ds, order, s, end, x, a, t, which);
                const Mat<S> out = forward_batch(m, g, x, a, which, &cache);
                const double loss = weighted_l2_loss<S>(out, t, wv, &dout);
                if (!std::isfinite(loss))
                    throw NumericError("train: loss diverged at epoch " + std::to_string(epoch));
                total += loss;
                const S scale = S(1) / static_cast<S>(end - s);
                dout *= scale;

                set_zero(grad);
                backward_batch(m, g, cache, dout, which, grad);
                std::vector<ParamBlock<S>> blocks;
                std::map<std::string, const S*> gptr;
                for_each_block(grad, [&](const std::string& name, S* d, std::size_t, Branch) { gptr[name] = d; });
                for_each_block(m, [&](const std::string& name, S* d, std::size_t sz, Branch b) {
                    if (which == Branch::both ? true : b == which)
                        blocks.push_back({name, d, gptr.at(name), sz});
                });
                adam_step(blocks, adam, cfg.adam);
            }
            EpochRecord rec;
            rec.epoch = epoch;
            rec.phase = ph.phase;
            rec.train_loss = total / static_cast<double>(order.size());
            if (!std::isfinite(rec.train_loss))
                throw NumericError("train: loss diverged at epoch " + std::to_string(epoch));
            rec.val_loss = evaluate_loss(m, ds, res.val_index, which, lw);
            res.history.push_back(rec);
            if (progress)
                progress(rec);
        }
    }
    return res;
}

inline std::string loss_csv(const std::vector<EpochRecord>& history)
{
    std::string out = "epoch,train_loss,val_loss\n";
    char buf[128];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_loss);
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full-frame inference

/// Runs the model over the patch grid of a full coded frame and stitches
/// the patches. Patches are grouped into fixed batches in grid order and
/// the batches are shared among `workers` threads, so the output does not
/// depend on the worker count.
template <typename S>
LightField reconstruct_lf(const TwoBranchModel<S>& m, const optics::CodedCamera& cam, const Measurement& frame,
    const PatchGridSpec& grid, std::size_t workers = 1, std::size_t batch = 32)
{
    if (!(cam.patch() == m.patch) || cam.samples_per_pixel() != m.n)
        throw DimensionError("reconstruct: camera and model disagree on patch or N");
    if (!(grid.patch == m.patch))
        throw DimensionError("reconstruct: grid patch does not match model");
    if (batch == 0)
        throw Error("reconstruct: batch must be >= 1");
    const auto origins = grid_origins(frame.width(), frame.height(), grid);
    if (!cam.pixel_local())
        for (const auto& o : origins)
            cam.phase_index(o); // validates alignment before any work starts
    const ConvGeometry g(m.patch);
    const Index p = static_cast<Index>(m.patch.count());
    std::vector<Patch4D> patches(origins.size());
    const std::size_t n_batches = (origins.size() + batch - 1) / batch;

    auto run = [&](std::size_t first, std::size_t stride) {
        Mat<S> x, a;
        for (std::size_t bi = first; bi < n_batches; bi += stride) {
            const std::size_t s = bi * batch, e = std::min(origins.size(), s + batch);
            x.resize(static_cast<Index>(m.patch.spatial() * m.n), static_cast<Index>(e - s));
            a.resize(p, static_cast<Index>(e - s));
            for (std::size_t i = s; i < e; ++i) {
                const auto meas = cam.patch_measurement(frame, origins[i]);
                const Eigen::VectorXd y = optics::vectorize(meas.values());
                x.col(static_cast<Index>(i - s)) = y.cast<S>();
                a.col(static_cast<Index>(i - s)) = (cam.op_at(origins[i]).phi.transpose() * y).cast<S>();
            }
            const Mat<S> out = forward_batch(m, g, x, a, Branch::both);
            for (std::size_t i = s; i < e; ++i) {
                const auto col = out.col(static_cast<Index>(i - s));
                std::vector<float> v(static_cast<std::size_t>(p));
                for (Index k = 0; k < p; ++k)
                    v[static_cast<std::size_t>(k)] = static_cast<float>(col[k]);
                patches[i] = {LightField(m.patch, std::move(v)), origins[i]};
            }
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, n_batches));
    if (workers == 1) {
        run(0, 1);
    } else {
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    run(w, workers);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        for (auto& t : pool)
            t.join();
        for (auto& e : errors)
            if (e)
                std::rethrow_exception(e);
    }
    return stitch_patches(patches, Dims4{frame.width(), frame.height(), m.patch.theta, m.patch.phi});
}

// ---------------------------------------------------------------------------
// LFNN checkpoint
//
// "LFNN", u16 version, u16 flags (bit 0: trainable combination),
// u32 px, py, ptheta, pphi, N, f32 w_up, w_low, u32 layer count, then per
// layer: u8 kind (0 fc, 1 conv4d), u8 branch (0 upper, 1 lower), u8 relu,
// u8 reserved, u32 rows, u32 cols, rows*cols f32 weights (column-major),
// rows f32 biases. Layers are stored upper fc..., upper conv, lower convs.

inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename S>
std::vector<std::uint8_t> encode_checkpoint(const TwoBranchModel<S>& m)
{
    using namespace io::detail;
    std::vector<std::uint8_t> out;
    for (char c : {'L', 'F', 'N', 'N'})
        out.push_back(static_cast<std::uint8_t>(c));
    put_u16(out, kCheckpointVersion);
    put_u16(out, m.trainable_combination ? 1 : 0);
    for (std::size_t v : {m.patch.x, m.patch.y, m.patch.theta, m.patch.phi, m.n})
        put_u32(out, checked_u32(v, "checkpoint dim"));
    put_f32(out, static_cast<float>(m.w_up));
    put_f32(out, static_cast<float>(m.w_low));
    put_u32(out, checked_u32(m.fc.size() + 1 + m.low.size(), "layer count"));
    auto layer = [&](std::uint8_t kind, std::uint8_t branch, bool relu, const Mat<S>& w, const Vec<S>& b) {
        out.push_back(kind);
        out.push_back(branch);
        out.push_back(relu ? 1 : 0);
        out.push_back(0);
        put_u32(out, checked_u32(static_cast<std::size_t>(w.rows()), "rows"));
        put_u32(out, checked_u32(static_cast<std::size_t>(w.cols()), "cols"));
        for (Index i = 0; i < w.size(); ++i)
            put_f32(out, static_cast<float>(w.data()[i]));
        for (Index i = 0; i < b.size(); ++i)
            put_f32(out, static_cast<float>(b[i]));
    };
    for (const auto& l : m.fc)
        layer(0, 0, l.relu, l.w, l.b);
    layer(1, 0, m.up_conv.relu, m.up_conv.k, m.up_conv.b);
    for (const auto& l : m.low)
        layer(1, 1, l.relu, l.k, l.b);
    return out;
}

template <typename S = float>
TwoBranchModel<S> decode_checkpoint(std::span<const std::uint8_t> bytes)
{
    using namespace io::detail;
    std::size_t off = 0;
    auto need = [&](std::size_t n) {
        if (bytes.size() - off < n)
            throw FormatError("LFNN: truncated file");
    };
    need(40);
    if (std::memcmp(bytes.data(), "LFNN", 4) != 0)
        throw FormatError("LFNN: bad magic");
    if (get_u16(bytes.data() + 4) != kCheckpointVersion)
        throw FormatError("LFNN: unsupported version " + std::to_string(get_u16(bytes.data() + 4)));
    TwoBranchModel<S> m;
    m.trainable_combination = (get_u16(bytes.data() + 6) & 1) != 0;
    m.patch = {get_u32(bytes.data() + 8), get_u32(bytes.data() + 12), get_u32(bytes.data() + 16), get_u32(bytes.data() + 20)};
    m.n = get_u32(bytes.data() + 24);
    m.w_up = static_cast<S>(get_f32(bytes.data() + 28));
    m.w_low = static_cast<S>(get_f32(bytes.data() + 32));
    const std::uint32_t count = get_u32(bytes.data() + 36);
    off = 40;
    bool have_up_conv = false;
    for (std::uint32_t li = 0; li < count; ++li) {
        need(12);
        const std::uint8_t kind = bytes[off], branch = bytes[off + 1];
        const bool relu = bytes[off + 2] != 0;
        const std::uint64_t rows = get_u32(bytes.data() + off + 4), cols = get_u32(bytes.data() + off + 8);
        off += 12;
        if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24))
            throw FormatError("LFNN: implausible layer shape");
        need((rows * cols + rows) * 4);
        Mat<S> w(static_cast<Index>(rows), static_cast<Index>(cols));
        Vec<S> b(static_cast<Index>(rows));
        for (Index i = 0; i < w.size(); ++i, off += 4)
            w.data()[i] = static_cast<S>(get_f32(bytes.data() + off));
        for (Index i = 0; i < b.size(); ++i, off += 4)
            b[i] = static_cast<S>(get_f32(bytes.data() + off));
        if (kind == 0 && branch == 0 && !have_up_conv) {
            m.fc.push_back({std::move(w), std::move(b), relu});
        } else if (kind == 1 && branch == 0 && !have_up_conv) {
            m.up_conv = {std::move(w), std::move(b), relu};
            have_up_conv = true;
        } else if (kind == 1 && branch == 1 && have_up_conv) {
            m.low.push_back({std::move(w), std::move(b), relu});
        } else {
            throw FormatError("LFNN: unexpected layer " + std::to_string(li));
        }
    }
    if (off != bytes.size())
        throw FormatError("LFNN: trailing bytes");

    // Structural checks: chain widths and channels must line up.
    if (m.fc.empty() || !have_up_conv || m.low.empty())
        throw FormatError("LFNN: missing layers");
    Index in = static_cast<Index>(m.patch.spatial() * m.n);
    for (const auto& l : m.fc) {
        if (l.in() != in)
            throw FormatError("LFNN: fully connected chain widths do not line up");
        in = l.out();
    }
    if (in != static_cast<Index>(m.patch.count()))
        throw FormatError("LFNN: upper branch does not end at the patch size");
    auto conv_ok = [](const Mat<S>& k) { return k.cols() % static_cast<Index>(kTaps) == 0; };
    if (!conv_ok(m.up_conv.k) || m.up_conv.k.rows() != 1 || m.up_conv.in_channels() != 1)
        throw FormatError("LFNN: upper convolution must be 1 -> 1");
    Index ch = 1;
    for (const auto& l : m.low) {
        if (!conv_ok(l.k) || l.in_channels() != ch)
            throw FormatError("LFNN: lower branch channels do not line up");
        ch = l.out_channels();
    }
    if (ch != 1)
        throw FormatError("LFNN: lower branch must end with one channel");
    return m;
}

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const TwoBranchModel<S>& m)
{
    io::write_file(path, encode_checkpoint(m));
}

template <typename S = float>
TwoBranchModel<S> load_checkpoint(const std::filesystem::path& path)
{
    const auto bytes = io::read_file(path);
    return decode_checkpoint<S>(bytes);
}

} // namespace lfr::neural
