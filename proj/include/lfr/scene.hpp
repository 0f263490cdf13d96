#pragma once

// Procedural two-plane parallax light fields: a textured background plane
// and a textured foreground disk, each shifting by its own disparity
// (pixels per unit of angular offset from the central view).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "lfr/error.hpp"
#include "lfr/lightfield.hpp"

namespace lfr::scene {

struct SceneSpec {
    std::size_t width = 48;
    std::size_t height = 48;
    std::size_t n_theta = 5;
    std::size_t n_phi = 5;
    std::uint64_t seed = 1;
    double fg_disparity = 1.0;
    double bg_disparity = -0.5;
    double fg_radius = 0.3; // fraction of min(width, height)
    std::size_t waves = 6;  // sinusoids per texture

    void validate() const
    {
        if (width == 0 || height == 0 || n_theta == 0 || n_phi == 0)
            throw Error("scene: dimensions must be positive");
        if (!(fg_radius > 0.0 && fg_radius < 1.0))
            throw Error("scene: fg_radius must lie in (0, 1)");
        if (waves == 0)
            throw Error("scene: need at least one texture wave");
        if (!std::isfinite(fg_disparity) || !std::isfinite(bg_disparity))
            throw Error("scene: disparities must be finite");
    }
};

/// Band-limited random texture with values in [0.1, 0.9].
class Texture {
public:
    Texture(std::mt19937_64& rng, std::size_t waves)
    {
        std::uniform_real_distribution<double> freq(0.03, 0.3), angle(0.0, 2 * std::numbers::pi), amp(0.3, 1.0);
        for (std::size_t i = 0; i < waves; ++i) {
            const double f = freq(rng), a = angle(rng);
            waves_.push_back({f * std::cos(a), f * std::sin(a), angle(rng), amp(rng)});
            total_ += waves_.back()[3];
        }
    }

    double operator()(double x, double y) const
    {
        double s = 0.0;
        for (const auto& w : waves_)
            s += w[3] * std::sin(2 * std::numbers::pi * (w[0] * x + w[1] * y) + w[2]);
        return 0.5 + 0.4 * s / total_;
    }

private:
    std::vector<std::array<double, 4>> waves_; // fx, fy, phase, amplitude
    double total_ = 0.0;
};

inline LightField make_two_plane(const SceneSpec& s)
{
    s.validate();
    std::mt19937_64 rng(s.seed);
    const Texture bg(rng, s.waves), fg(rng, s.waves);
    const double r = s.fg_radius * static_cast<double>(std::min(s.width, s.height));
    std::uniform_real_distribution<double> cx(0.35 * static_cast<double>(s.width), 0.65 * static_cast<double>(s.width));
    std::uniform_real_distribution<double> cy(0.35 * static_cast<double>(s.height), 0.65 * static_cast<double>(s.height));
    const double ox = cx(rng), oy = cy(rng);
    const double ct = (static_cast<double>(s.n_theta) - 1.0) / 2.0, cp = (static_cast<double>(s.n_phi) - 1.0) / 2.0;

    LightField lf(Dims4{s.width, s.height, s.n_theta, s.n_phi});
    for (std::size_t p = 0; p < s.n_phi; ++p)
        for (std::size_t t = 0; t < s.n_theta; ++t) {
            const double u = static_cast<double>(t) - ct, v = static_cast<double>(p) - cp;
            for (std::size_t y = 0; y < s.height; ++y)
                for (std::size_t x = 0; x < s.width; ++x) {
                    const double fx = static_cast<double>(x) - s.fg_disparity * u;
                    const double fy = static_cast<double>(y) - s.fg_disparity * v;
                    const bool front = (fx - ox) * (fx - ox) + (fy - oy) * (fy - oy) <= r * r;
                    const double val = front
                        ? fg(fx, fy)
                        : bg(static_cast<double>(x) - s.bg_disparity * u, static_cast<double>(y) - s.bg_disparity * v);
                    lf(x, y, t, p) = static_cast<float>(val);
                }
        }
    return lf;
}

inline void to_json(nlohmann::json& j, const SceneSpec& s)
{
    j = {{"width", s.width}, {"height", s.height}, {"n_theta", s.n_theta}, {"n_phi", s.n_phi}, {"seed", s.seed},
        {"fg_disparity", s.fg_disparity}, {"bg_disparity", s.bg_disparity}, {"fg_radius", s.fg_radius},
        {"waves", s.waves}};
}

inline void from_json(const nlohmann::json& j, SceneSpec& s)
{
    SceneSpec d;
    s.width = j.value("width", d.width);
    s.height = j.value("height", d.height);
    s.n_theta = j.value("n_theta", d.n_theta);
    s.n_phi = j.value("n_phi", d.n_phi);
    s.seed = j.value("seed", d.seed);
    s.fg_disparity = j.value("fg_disparity", d.fg_disparity);
    s.bg_disparity = j.value("bg_disparity", d.bg_disparity);
    s.fg_radius = j.value("fg_radius", d.fg_radius);
    s.waves = j.value("waves", d.waves);
}

} // namespace lfr::scene
