#pragma once

// Sensing operators for coded light field cameras.
//
// An operator maps a vectorized patch (px*py*ptheta*pphi, LF4D order) to
// px*py*N coded samples, row index = x + px*(y + py*frame). Pixel-local
// models (mask, ASP, lenslet) are generated from a periodic angular code
// tile indexed by absolute sensor position, so a patch operator depends on
// the patch origin modulo the tile period (its "phase").

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lfr/error.hpp"
#include "lfr/lightfield.hpp"

namespace lfr::optics {

enum class CameraModel { random, mask, asp, lenslet };

inline std::string to_string(CameraModel m)
{
    switch (m) {
    case CameraModel::random: return "random";
    case CameraModel::mask: return "mask";
    case CameraModel::asp: return "asp";
    case CameraModel::lenslet: return "lenslet";
    }
    return "?";
}

inline CameraModel parse_camera_model(const std::string& s)
{
    if (s == "random")
        return CameraModel::random;
    if (s == "mask")
        return CameraModel::mask;
    if (s == "asp")
        return CameraModel::asp;
    if (s == "lenslet")
        return CameraModel::lenslet;
    throw Error("unknown camera model '" + s + "' (expected random|mask|asp|lenslet)");
}

/// One ASP pixel class: oriented sinusoidal response to incidence angle.
struct AspClass {
    double frequency = 1.0;
    double orientation = 0.0; // radians
    double phase = 0.0;       // radians
    double depth = 1.0;       // modulation depth in [0,1]

    friend bool operator==(const AspClass&, const AspClass&) = default;
};

inline std::vector<AspClass> default_asp_classes()
{
    constexpr double pi = std::numbers::pi;
    return {{1.0, 0.0, 0.0, 1.0}, {1.0, 0.0, pi, 1.0}, {1.0, pi / 2, 0.0, 1.0}, {1.0, pi / 2, pi, 1.0}};
}

/// Angle index mapped to [-1, 1], centered at 0.
inline double normalized_angle(std::size_t i, std::size_t n)
{
    if (n <= 1)
        return 0.0;
    return 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0;
}

inline double asp_response(const AspClass& c, double theta_hat, double phi_hat)
{
    const double arg = 2.0 * std::numbers::pi * c.frequency
            * (theta_hat * std::cos(c.orientation) + phi_hat * std::sin(c.orientation))
        + c.phase;
    return 0.5 * (1.0 + c.depth * std::cos(arg));
}

/// Per-pixel angular weights for a periodic tile, one slice per frame.
struct AngularCodeTile {
    std::size_t period_x = 1;
    std::size_t period_y = 1;
    std::size_t frames = 1;
    std::size_t n_theta = 5;
    std::size_t n_phi = 5;
    std::vector<double> codes; // (frame, u, v, theta, phi), theta/phi fastest

    std::size_t index(std::size_t f, std::size_t u, std::size_t v, std::size_t t, std::size_t p) const noexcept
    {
        return p + n_phi * (t + n_theta * (v + period_y * (u + period_x * f)));
    }
    double code(std::size_t f, std::size_t u, std::size_t v, std::size_t t, std::size_t p) const noexcept
    {
        return codes[index(f, u, v, t, p)];
    }
    double& code(std::size_t f, std::size_t u, std::size_t v, std::size_t t, std::size_t p) noexcept
    {
        return codes[index(f, u, v, t, p)];
    }
};

struct SensingOperator {
    CameraModel model = CameraModel::random;
    Dims4 patch = kDefaultPatch;
    std::size_t n = 1; // measurements per pixel
    Origin phase;      // origin of the patch modulo the tile period
    std::optional<AngularCodeTile> tile;
    Eigen::MatrixXd phi; // (px*py*n) x (px*py*ptheta*pphi)

    std::size_t rows() const noexcept { return static_cast<std::size_t>(phi.rows()); }
    std::size_t cols() const noexcept { return static_cast<std::size_t>(phi.cols()); }
    double compression_ratio() const noexcept
    {
        return static_cast<double>(n) / static_cast<double>(patch.angular());
    }
};

inline double compression_ratio(std::size_t n, const Dims4& patch)
{
    return static_cast<double>(n) / static_cast<double>(patch.angular());
}

struct NoiseSpec {
    double sigma = 0.0;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Tiles

/// Binary mask tile: c_f(u,v,theta,phi) = b_f((u+theta) mod T, (v+phi) mod T)
/// with an independent base pattern b_f per frame holding ceil(T*T/2) ones.
inline AngularCodeTile make_mask_tile(std::uint64_t seed, std::size_t frames, std::size_t period, std::size_t n_theta,
    std::size_t n_phi)
{
    if (period == 0)
        throw Error("mask: tile period must be >= 1");
    if (frames == 0)
        throw Error("mask: N must be >= 1");
    AngularCodeTile tile{period, period, frames, n_theta, n_phi, {}};
    tile.codes.assign(frames * period * period * n_theta * n_phi, 0.0);

    std::mt19937_64 rng(seed);
    const std::size_t cells = period * period;
    const std::size_t ones = (cells + 1) / 2;
    for (std::size_t f = 0; f < frames; ++f) {
        std::vector<double> base;
        // Redraw until every pixel class sees at least one open cell.
        for (int attempt = 0;; ++attempt) {
            base.assign(cells, 0.0);
            std::fill(base.begin(), base.begin() + static_cast<std::ptrdiff_t>(ones), 1.0);
            std::shuffle(base.begin(), base.end(), rng);
            bool all_open = true;
            for (std::size_t u = 0; u < period && all_open; ++u)
                for (std::size_t v = 0; v < period && all_open; ++v) {
                    double s = 0.0;
                    for (std::size_t t = 0; t < n_theta; ++t)
                        for (std::size_t p = 0; p < n_phi; ++p)
                            s += base[((u + t) % period) * period + (v + p) % period];
                    all_open = s > 0.0;
                }
            if (all_open)
                break;
            if (attempt > 1000)
                throw Error("mask: cannot draw a base pattern that passes light at every pixel");
        }
        for (std::size_t u = 0; u < period; ++u)
            for (std::size_t v = 0; v < period; ++v)
                for (std::size_t t = 0; t < n_theta; ++t)
                    for (std::size_t p = 0; p < n_phi; ++p)
                        tile.code(f, u, v, t, p) = base[((u + t) % period) * period + (v + p) % period];
    }
    return tile;
}

/// Mask tile from explicit base patterns (row-major T x T, one per frame).
inline AngularCodeTile make_mask_tile_from_base(const std::vector<std::vector<double>>& bases, std::size_t period,
    std::size_t n_theta, std::size_t n_phi)
{
    AngularCodeTile tile{period, period, bases.size(), n_theta, n_phi, {}};
    tile.codes.assign(bases.size() * period * period * n_theta * n_phi, 0.0);
    for (std::size_t f = 0; f < bases.size(); ++f) {
        if (bases[f].size() != period * period)
            throw DimensionError("mask: base pattern must have T*T entries");
        for (std::size_t u = 0; u < period; ++u)
            for (std::size_t v = 0; v < period; ++v)
                for (std::size_t t = 0; t < n_theta; ++t)
                    for (std::size_t p = 0; p < n_phi; ++p)
                        tile.code(f, u, v, t, p) = bases[f][((u + t) % period) * period + (v + p) % period];
    }
    return tile;
}

/// Index of the ASP class read by tile pixel (u,v) in frame f. Frames are
/// interleaved pixel classes: frame f reads the class f steps further along
/// the tile in raster order.
inline std::size_t asp_class_index(std::size_t u, std::size_t v, std::size_t f, std::size_t period, std::size_t classes)
{
    return (u * period + v + f) % classes;
}

inline AngularCodeTile make_asp_tile(const std::vector<AspClass>& classes, std::size_t period, std::size_t frames,
    std::size_t n_theta, std::size_t n_phi)
{
    if (classes.empty())
        throw Error("asp: empty parameter list");
    if (period == 0 || frames == 0)
        throw Error("asp: tile period and N must be >= 1");
    for (const auto& c : classes)
        if (!(c.depth >= 0.0 && c.depth <= 1.0))
            throw Error("asp: modulation depth must lie in [0,1]");
    AngularCodeTile tile{period, period, frames, n_theta, n_phi, {}};
    tile.codes.assign(frames * period * period * n_theta * n_phi, 0.0);
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t u = 0; u < period; ++u)
            for (std::size_t v = 0; v < period; ++v) {
                const auto& c = classes[asp_class_index(u, v, f, period, classes.size())];
                for (std::size_t t = 0; t < n_theta; ++t)
                    for (std::size_t p = 0; p < n_phi; ++p)
                        tile.code(f, u, v, t, p)
                            = asp_response(c, normalized_angle(t, n_theta), normalized_angle(p, n_phi));
            }
    return tile;
}

/// Lenslet mosaic: tile pixel (u,v) passes only angle (u,v).
inline AngularCodeTile make_lenslet_tile(std::size_t n_theta, std::size_t n_phi)
{
    AngularCodeTile tile{n_theta, n_phi, 1, n_theta, n_phi, {}};
    tile.codes.assign(n_theta * n_phi * n_theta * n_phi, 0.0);
    for (std::size_t u = 0; u < n_theta; ++u)
        for (std::size_t v = 0; v < n_phi; ++v)
            tile.code(0, u, v, u, v) = 1.0;
    return tile;
}

// ---------------------------------------------------------------------------
// Builders

/// Pixel-local operator: the row for pixel (x,y), frame f only touches that
/// pixel's own angular samples.
inline SensingOperator build_local(CameraModel model, AngularCodeTile tile, const Dims4& patch, Origin phase = {})
{
    if (tile.n_theta != patch.theta || tile.n_phi != patch.phi)
        throw DimensionError("operator: tile angular dims do not match patch " + to_string(patch));
    SensingOperator op;
    op.model = model;
    op.patch = patch;
    op.n = tile.frames;
    op.phase = {phase.x % tile.period_x, phase.y % tile.period_y};
    const std::size_t px = patch.x, py = patch.y;
    op.phi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(px * py * op.n), static_cast<Eigen::Index>(patch.count()));
    for (std::size_t f = 0; f < op.n; ++f)
        for (std::size_t y = 0; y < py; ++y)
            for (std::size_t x = 0; x < px; ++x) {
                const auto row = static_cast<Eigen::Index>(x + px * (y + py * f));
                const std::size_t u = (x + op.phase.x) % tile.period_x;
                const std::size_t v = (y + op.phase.y) % tile.period_y;
                for (std::size_t p = 0; p < patch.phi; ++p)
                    for (std::size_t t = 0; t < patch.theta; ++t) {
                        const auto col = static_cast<Eigen::Index>(x + px * (y + py * (t + patch.theta * p)));
                        op.phi(row, col) = tile.code(f, u, v, t, p);
                    }
            }
    op.tile = std::move(tile);
    return op;
}

/// Dense i.i.d. Gaussian rows, each scaled to unit norm.
inline SensingOperator build_ideal_random(std::uint64_t seed, std::size_t n, const Dims4& patch = kDefaultPatch)
{
    if (n < 1 || n > patch.angular())
        throw Error("random: N must lie in [1, " + std::to_string(patch.angular()) + "]");
    SensingOperator op;
    op.model = CameraModel::random;
    op.patch = patch;
    op.n = n;
    const auto m = static_cast<Eigen::Index>(patch.spatial() * n);
    const auto c = static_cast<Eigen::Index>(patch.count());
    op.phi.resize(m, c);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index r = 0; r < m; ++r) {
        for (Eigen::Index k = 0; k < c; ++k)
            op.phi(r, k) = normal(rng);
        op.phi.row(r).normalize();
    }
    return op;
}

inline SensingOperator build_mask(std::uint64_t seed, std::size_t n, std::size_t period, const Dims4& patch = kDefaultPatch,
    Origin phase = {})
{
    return build_local(CameraModel::mask, make_mask_tile(seed, n, period, patch.theta, patch.phi), patch, phase);
}

inline SensingOperator build_asp(const std::vector<AspClass>& classes, std::size_t period, std::size_t frames,
    const Dims4& patch = kDefaultPatch, Origin phase = {})
{
    return build_local(CameraModel::asp, make_asp_tile(classes, period, frames, patch.theta, patch.phi), patch, phase);
}

inline SensingOperator build_lenslet(const Dims4& patch = kDefaultPatch, Origin phase = {})
{
    if (patch.theta == 0 || patch.phi == 0 || patch.x < patch.theta || patch.y < patch.phi)
        throw DimensionError("lenslet: patch " + to_string(patch)
            + " cannot hold a full angular mosaic (need px >= ptheta and py >= pphi)");
    return build_local(CameraModel::lenslet, make_lenslet_tile(patch.theta, patch.phi), patch, phase);
}

// ---------------------------------------------------------------------------
// Regenerable operator description

struct OperatorSpec {
    CameraModel model = CameraModel::asp;
    std::uint64_t seed = 1;
    std::size_t n = 2;      // measurements per pixel (frames for mask/asp)
    std::size_t period = 2; // tile period T (mask/asp)
    std::vector<AspClass> asp = default_asp_classes();
    Dims4 patch = kDefaultPatch;

    std::size_t measurements_per_pixel() const noexcept { return model == CameraModel::lenslet ? 1 : n; }
    double compression_ratio() const noexcept { return optics::compression_ratio(measurements_per_pixel(), patch); }

    void validate() const
    {
        if (patch.x == 0 || patch.y == 0 || patch.theta == 0 || patch.phi == 0)
            throw Error("operator: patch dims must be positive");
        switch (model) {
        case CameraModel::random:
            if (n < 1 || n > patch.angular())
                throw Error("operator: random N must lie in [1, " + std::to_string(patch.angular()) + "]");
            break;
        case CameraModel::mask:
        case CameraModel::asp:
            if (n < 1)
                throw Error("operator: N must be >= 1");
            if (period < 1)
                throw Error("operator: tile period must be >= 1");
            if (model == CameraModel::asp && asp.empty())
                throw Error("operator: ASP parameter list is empty");
            for (const auto& c : asp)
                if (!(c.depth >= 0.0 && c.depth <= 1.0))
                    throw Error("operator: ASP modulation depth must lie in [0,1]");
            break;
        case CameraModel::lenslet:
            if (patch.x < patch.theta || patch.y < patch.phi)
                throw Error("operator: lenslet needs px >= ptheta and py >= pphi");
            break;
        }
    }

    /// Tile period along x/y; 0 means the operator is not pixel-local.
    std::size_t period_x() const noexcept
    {
        switch (model) {
        case CameraModel::random: return 0;
        case CameraModel::lenslet: return patch.theta;
        default: return period;
        }
    }
    std::size_t period_y() const noexcept
    {
        switch (model) {
        case CameraModel::random: return 0;
        case CameraModel::lenslet: return patch.phi;
        default: return period;
        }
    }

    AngularCodeTile make_tile() const
    {
        switch (model) {
        case CameraModel::mask: return make_mask_tile(seed, n, period, patch.theta, patch.phi);
        case CameraModel::asp: return make_asp_tile(asp, period, n, patch.theta, patch.phi);
        case CameraModel::lenslet: return make_lenslet_tile(patch.theta, patch.phi);
        case CameraModel::random: break;
        }
        throw Error("operator: random model has no code tile");
    }

    SensingOperator build(Origin phase = {}) const
    {
        validate();
        if (model == CameraModel::random)
            return build_ideal_random(seed, n, patch);
        return build_local(model, make_tile(), patch, phase);
    }
};

inline void to_json(nlohmann::json& j, const AspClass& c)
{
    j = nlohmann::json{{"frequency", c.frequency}, {"orientation", c.orientation}, {"phase", c.phase}, {"depth", c.depth}};
}

inline void from_json(const nlohmann::json& j, AspClass& c)
{
    c.frequency = j.at("frequency").get<double>();
    c.orientation = j.value("orientation", 0.0);
    c.phase = j.value("phase", 0.0);
    c.depth = j.value("depth", 1.0);
}

inline nlohmann::json dims_to_json(const Dims4& d) { return nlohmann::json::array({d.x, d.y, d.theta, d.phi}); }

inline Dims4 dims_from_json(const nlohmann::json& j)
{
    if (!j.is_array() || j.size() != 4)
        throw Error("config: patch dims must be an array of 4 integers");
    return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>(), j[3].get<std::size_t>()};
}

inline nlohmann::json to_json(const OperatorSpec& s)
{
    nlohmann::json j{{"model", to_string(s.model)}, {"seed", s.seed}, {"N", s.n}, {"T", s.period},
        {"patch", dims_to_json(s.patch)}};
    if (s.model == CameraModel::mask || s.model == CameraModel::asp)
        j["F"] = s.n;
    if (s.model == CameraModel::asp)
        j["asp"] = s.asp;
    return j;
}

inline OperatorSpec operator_spec_from_json(const nlohmann::json& j)
{
    OperatorSpec s;
    s.model = parse_camera_model(j.at("model").get<std::string>());
    s.seed = j.value("seed", std::uint64_t{1});
    s.n = j.value("N", std::size_t{2});
    if (j.contains("F") && j.at("F").get<std::size_t>() != s.n)
        throw Error("operator: F must equal N (one sample per frame)");
    s.period = j.value("T", s.model == CameraModel::mask ? std::size_t{5} : std::size_t{2});
    if (j.contains("asp"))
        s.asp = j.at("asp").get<std::vector<AspClass>>();
    if (j.contains("patch"))
        s.patch = dims_from_json(j.at("patch"));
    if (s.model == CameraModel::lenslet)
        s.n = 1;
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// Patch-level operations

template <typename Range>
Eigen::VectorXd vectorize(const Range& v)
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i)
        out[static_cast<Eigen::Index>(i)] = static_cast<double>(v[i]);
    return out;
}

template <typename T>
BasicMeasurement<T> capture(const SensingOperator& op, const BasicLightField<T>& patch)
{
    if (patch.dims() != op.patch)
        throw DimensionError("capture: patch " + to_string(patch.dims()) + " does not match operator "
            + to_string(op.patch));
    const Eigen::VectorXd i = op.phi * vectorize(patch.values());
    std::vector<T> out(static_cast<std::size_t>(i.size()));
    for (Eigen::Index k = 0; k < i.size(); ++k)
        out[static_cast<std::size_t>(k)] = static_cast<T>(i[k]);
    return BasicMeasurement<T>(op.patch.x, op.patch.y, op.n, std::move(out));
}

template <typename T>
BasicMeasurement<T> capture(const SensingOperator& op, const BasicPatch4D<T>& patch)
{
    return capture(op, patch.values);
}

template <typename T>
void check_measurement(const SensingOperator& op, const BasicMeasurement<T>& meas, const char* who)
{
    if (meas.width() != op.patch.x || meas.height() != op.patch.y || meas.samples() != op.n)
        throw DimensionError(std::string(who) + ": measurement shape (" + std::to_string(meas.width()) + ","
            + std::to_string(meas.height()) + "," + std::to_string(meas.samples()) + ") does not match operator");
}

template <typename T>
BasicLightField<T> unvectorize(const Eigen::VectorXd& v, const Dims4& dims)
{
    std::vector<T> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index k = 0; k < v.size(); ++k)
        out[static_cast<std::size_t>(k)] = static_cast<T>(v[k]);
    return BasicLightField<T>(dims, std::move(out));
}

/// Unnormalized back-projection: Phi^T * i.
template <typename T>
BasicLightField<T> adjoint(const SensingOperator& op, const BasicMeasurement<T>& meas)
{
    check_measurement(op, meas, "adjoint");
    return unvectorize<T>(op.phi.transpose() * vectorize(meas.values()), op.patch);
}

/// Seeded i.i.d. additive Gaussian noise.
template <typename T>
BasicMeasurement<T> add_noise(const BasicMeasurement<T>& meas, const NoiseSpec& spec)
{
    if (!(spec.sigma >= 0.0 && spec.sigma <= 1.0))
        throw Error("noise: sigma must lie in [0,1]");
    BasicMeasurement<T> out = meas;
    if (spec.sigma == 0.0)
        return out;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, spec.sigma);
    for (auto& v : out.values())
        v = static_cast<T>(static_cast<double>(v) + normal(rng));
    return out;
}

/// Ridge-regularized minimum-norm inverse Phi^T (Phi Phi^T + eps I)^-1, with
/// the factorization computed once.
class PinvSolver {
public:
    PinvSolver(const SensingOperator& op, double ridge)
        : op_(&op)
    {
        if (!(ridge >= 0.0))
            throw Error("pinv: ridge must be >= 0");
        Eigen::MatrixXd gram = op.phi * op.phi.transpose();
        gram.diagonal().array() += ridge;
        llt_.compute(gram);
        if (llt_.info() != Eigen::Success || !(llt_.rcond() > 1e-13))
            throw NumericError("pinv: Phi Phi^T + eps I is singular (eps = " + std::to_string(ridge) + ")");
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& i) const { return op_->phi.transpose() * llt_.solve(i); }

    template <typename T>
    BasicLightField<T> reconstruct(const BasicMeasurement<T>& meas) const
    {
        check_measurement(*op_, meas, "pinv");
        return unvectorize<T>(solve(vectorize(meas.values())), op_->patch);
    }

private:
    const SensingOperator* op_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline constexpr double kDefaultRidge = 1e-6;

template <typename T>
BasicLightField<T> pinv_reconstruct(const SensingOperator& op, const BasicMeasurement<T>& meas, double ridge = kDefaultRidge)
{
    return PinvSolver(op, ridge).reconstruct(meas);
}

// ---------------------------------------------------------------------------
// Full-frame sensor

/// A whole sensor built from one OperatorSpec. Pixel-local models use the
/// absolute pixel position within the tile; the dense random model is
/// applied per non-overlapping patch block.
class CodedCamera {
public:
    explicit CodedCamera(OperatorSpec spec)
        : spec_(std::move(spec))
    {
        spec_.validate();
        if (spec_.model != CameraModel::random)
            tile_ = spec_.make_tile();
        const std::size_t phases
            = spec_.model == CameraModel::random ? 1 : spec_.period_x() * spec_.period_y();
        slots_.resize(phases);
        for (auto& s : slots_)
            s = std::make_unique<Slot>();
    }

    const OperatorSpec& spec() const noexcept { return spec_; }
    const Dims4& patch() const noexcept { return spec_.patch; }
    std::size_t samples_per_pixel() const noexcept { return spec_.measurements_per_pixel(); }
    bool pixel_local() const noexcept { return spec_.model != CameraModel::random; }
    const AngularCodeTile& tile() const
    {
        if (!tile_)
            throw Error("camera: random model has no code tile");
        return *tile_;
    }

    std::size_t phase_count() const noexcept { return slots_.size(); }

    std::size_t phase_index(Origin o) const
    {
        if (!pixel_local()) {
            if (o.x % spec_.patch.x != 0 || o.y % spec_.patch.y != 0)
                throw Error("camera: the random model only supports patches aligned to its block grid (origin ("
                    + std::to_string(o.x) + "," + std::to_string(o.y) + "))");
            return 0;
        }
        return (o.x % spec_.period_x()) * spec_.period_y() + (o.y % spec_.period_y());
    }

    /// Patch operator for the tile phase of origin `o`; built once, thread safe.
    const SensingOperator& op_at(Origin o) const { return op_for_phase(phase_index(o)); }

    const SensingOperator& op_for_phase(std::size_t k) const
    {
        auto& slot = *slots_.at(k);
        std::call_once(slot.once, [&] {
            if (!pixel_local()) {
                slot.op = spec_.build();
            } else {
                const Origin ph{k / spec_.period_y(), k % spec_.period_y()};
                slot.op = build_local(spec_.model, *tile_, spec_.patch, ph);
            }
        });
        return slot.op;
    }

    void check_frame(const Dims4& d) const
    {
        if (d.theta != spec_.patch.theta || d.phi != spec_.patch.phi)
            throw DimensionError("camera: light field angular dims " + to_string(d) + " do not match operator patch "
                + to_string(spec_.patch));
        if (d.x < spec_.patch.x || d.y < spec_.patch.y)
            throw DimensionError("camera: light field smaller than one patch");
        if (!pixel_local() && (d.x % spec_.patch.x != 0 || d.y % spec_.patch.y != 0))
            throw DimensionError("camera: the random model needs spatial dims divisible by the patch size");
    }

    template <typename T>
    BasicMeasurement<T> capture_frame(const BasicLightField<T>& lf) const
    {
        const auto& d = lf.dims();
        check_frame(d);
        const std::size_t n = samples_per_pixel();
        BasicMeasurement<T> out(d.x, d.y, n);
        if (pixel_local()) {
            const auto& tl = *tile_;
            for (std::size_t f = 0; f < n; ++f)
                for (std::size_t y = 0; y < d.y; ++y)
                    for (std::size_t x = 0; x < d.x; ++x) {
                        const std::size_t u = x % tl.period_x, v = y % tl.period_y;
                        double acc = 0.0;
                        for (std::size_t p = 0; p < d.phi; ++p)
                            for (std::size_t t = 0; t < d.theta; ++t)
                                acc += tl.code(f, u, v, t, p) * static_cast<double>(lf(x, y, t, p));
                        out(x, y, f) = static_cast<T>(acc);
                    }
        } else {
            const auto& op = op_for_phase(0);
            for (std::size_t y0 = 0; y0 < d.y; y0 += spec_.patch.y)
                for (std::size_t x0 = 0; x0 < d.x; x0 += spec_.patch.x) {
                    const auto m = capture(op, extract_patch(lf, {x0, y0}, spec_.patch).values);
                    for (std::size_t f = 0; f < n; ++f)
                        for (std::size_t y = 0; y < spec_.patch.y; ++y)
                            for (std::size_t x = 0; x < spec_.patch.x; ++x)
                                out(x0 + x, y0 + y, f) = m(x, y, f);
                }
        }
        return out;
    }

    /// Cuts the patch-sized measurement block at origin `o`.
    template <typename T>
    BasicMeasurement<T> patch_measurement(const BasicMeasurement<T>& frame, Origin o) const
    {
        const auto& p = spec_.patch;
        if (frame.samples() != samples_per_pixel())
            throw DimensionError("camera: frame has " + std::to_string(frame.samples()) + " samples per pixel, expected "
                + std::to_string(samples_per_pixel()));
        if (o.x + p.x > frame.width() || o.y + p.y > frame.height())
            throw DimensionError("camera: patch outside the measurement frame");
        BasicMeasurement<T> out(p.x, p.y, frame.samples());
        for (std::size_t f = 0; f < frame.samples(); ++f)
            for (std::size_t y = 0; y < p.y; ++y)
                for (std::size_t x = 0; x < p.x; ++x)
                    out(x, y, f) = frame(o.x + x, o.y + y, f);
        return out;
    }

private:
    struct Slot {
        std::once_flag once;
        SensingOperator op;
    };
    OperatorSpec spec_;
    std::optional<AngularCodeTile> tile_;
    std::vector<std::unique_ptr<Slot>> slots_;
};

/// Spatially stacked linear inverse for pixel-local sensors: each pixel is
/// solved from the measurements of the window x window neighbourhood around
/// it (clamped inside the frame), assuming the angular samples are constant
/// over that window. window = 1 is the per-pixel pseudo-inverse.
template <typename T>
BasicLightField<T> stacked_pinv(const CodedCamera& cam, const BasicMeasurement<T>& frame, std::size_t window,
    double ridge = kDefaultRidge)
{
    if (!cam.pixel_local())
        throw Error("stacked pinv: needs a pixel-local camera model");
    if (window == 0 || window > frame.width() || window > frame.height())
        throw Error("stacked pinv: window must lie in [1, min(X, Y)]");
    if (!(ridge >= 0.0))
        throw Error("stacked pinv: ridge must be >= 0");
    const auto& tl = cam.tile();
    const std::size_t na = tl.n_theta * tl.n_phi;
    const std::size_t n = frame.samples();
    const std::size_t rows = window * window * n;
    Dims4 d{frame.width(), frame.height(), tl.n_theta, tl.n_phi};
    BasicLightField<T> out(d);
    Eigen::MatrixXd a(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(na));
    Eigen::VectorXd b(static_cast<Eigen::Index>(rows));
    const std::size_t half = window / 2;
    for (std::size_t y = 0; y < d.y; ++y)
        for (std::size_t x = 0; x < d.x; ++x) {
            const std::size_t x0 = std::min(x >= half ? x - half : 0, d.x - window);
            const std::size_t y0 = std::min(y >= half ? y - half : 0, d.y - window);
            Eigen::Index r = 0;
            for (std::size_t f = 0; f < n; ++f)
                for (std::size_t wy = y0; wy < y0 + window; ++wy)
                    for (std::size_t wx = x0; wx < x0 + window; ++wx, ++r) {
                        const std::size_t u = wx % tl.period_x, v = wy % tl.period_y;
                        for (std::size_t p = 0; p < tl.n_phi; ++p)
                            for (std::size_t t = 0; t < tl.n_theta; ++t)
                                a(r, static_cast<Eigen::Index>(t + tl.n_theta * p)) = tl.code(f, u, v, t, p);
                        b[r] = static_cast<double>(frame(wx, wy, f));
                    }
            Eigen::VectorXd l;
            if (ridge > 0.0) {
                Eigen::MatrixXd g = a.transpose() * a;
                g.diagonal().array() += ridge;
                l = g.ldlt().solve(a.transpose() * b);
            } else {
                l = a.completeOrthogonalDecomposition().solve(b);
            }
            for (std::size_t p = 0; p < tl.n_phi; ++p)
                for (std::size_t t = 0; t < tl.n_theta; ++t)
                    out(x, y, t, p) = static_cast<T>(l[static_cast<Eigen::Index>(t + tl.n_theta * p)]);
        }
    return out;
}

} // namespace lfr::optics
