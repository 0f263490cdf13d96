#pragma once

// Evaluation reports, CSV tables and PNG renderings.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "lfr/error.hpp"
#include "lfr/lightfield.hpp"
#include "lfr/optics.hpp"
#include "lfr/png.hpp"

namespace lfr::report {

using nlohmann::json;

struct EvalReport {
    std::string backend;
    double compression_ratio = 0.0;
    double noise_sigma = 0.0;
    std::size_t stride = 0;
    Dims4 dims;
    double mse = 0.0;
    double psnr = 0.0;
    Eigen::MatrixXd view_mse;  // theta x phi
    Eigen::MatrixXd view_psnr; // theta x phi
    std::map<std::string, double> seconds; // wall clock per stage
};

/// Whole-field and per-view error of `recon` against `truth` (peak 1).
template <typename T, typename U>
EvalReport evaluate(const BasicLightField<T>& truth, const BasicLightField<U>& recon)
{
    const auto& d = truth.dims();
    if (!(d == recon.dims()))
        throw DimensionError("eval: truth " + to_string(d) + " vs reconstruction " + to_string(recon.dims()));
    EvalReport r;
    r.dims = d;
    r.view_mse = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d.theta), static_cast<Eigen::Index>(d.phi));
    r.view_psnr.resizeLike(r.view_mse);
    for (std::size_t p = 0; p < d.phi; ++p)
        for (std::size_t t = 0; t < d.theta; ++t) {
            double acc = 0.0;
            for (std::size_t y = 0; y < d.y; ++y)
                for (std::size_t x = 0; x < d.x; ++x) {
                    const double e = static_cast<double>(truth(x, y, t, p)) - static_cast<double>(recon(x, y, t, p));
                    acc += e * e;
                }
            const auto ti = static_cast<Eigen::Index>(t), pi = static_cast<Eigen::Index>(p);
            r.view_mse(ti, pi) = acc / static_cast<double>(d.spatial());
            r.view_psnr(ti, pi) = psnr_from_mse(r.view_mse(ti, pi));
        }
    r.mse = mse(truth.values(), recon.values());
    r.psnr = psnr_from_mse(r.mse);
    return r;
}

// ---------------------------------------------------------------------------
// JSON: infinite PSNR is written as the string "inf".

inline json number(double v)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    if (std::isnan(v))
        return "nan";
    return v;
}

inline double number(const json& j)
{
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf")
            return std::numeric_limits<double>::infinity();
        if (s == "-inf")
            return -std::numeric_limits<double>::infinity();
        if (s == "nan")
            return std::numeric_limits<double>::quiet_NaN();
        throw FormatError("report: unexpected number '" + s + "'");
    }
    return j.get<double>();
}

inline json matrix_json(const Eigen::MatrixXd& m)
{
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            row.push_back(number(m(i, j)));
        rows.push_back(row);
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j)
{
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw FormatError("report: expected a nested array");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (j[i].size() != j[0].size())
            throw FormatError("report: ragged matrix");
        for (std::size_t k = 0; k < j[i].size(); ++k)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = number(j[i][k]);
    }
    return m;
}

/// `timing` = false drops the wall-clock fields, leaving only deterministic content.
inline json to_json(const EvalReport& r, bool timing = true)
{
    json j{{"backend", r.backend}, {"compression_ratio", r.compression_ratio}, {"noise_sigma", r.noise_sigma},
        {"stride", r.stride}, {"dims", optics::dims_to_json(r.dims)}, {"mse", r.mse}, {"psnr", number(r.psnr)},
        {"view_mse", matrix_json(r.view_mse)}, {"view_psnr", matrix_json(r.view_psnr)}};
    if (timing)
        j["seconds"] = r.seconds;
    return j;
}

inline EvalReport from_json(const json& j)
{
    EvalReport r;
    r.backend = j.at("backend").get<std::string>();
    r.compression_ratio = j.at("compression_ratio").get<double>();
    r.noise_sigma = j.value("noise_sigma", 0.0);
    r.stride = j.value("stride", std::size_t{0});
    r.dims = optics::dims_from_json(j.at("dims"));
    r.mse = j.at("mse").get<double>();
    r.psnr = number(j.at("psnr"));
    r.view_mse = matrix_from_json(j.at("view_mse"));
    r.view_psnr = matrix_from_json(j.at("view_psnr"));
    if (j.contains("seconds"))
        r.seconds = j.at("seconds").get<std::map<std::string, double>>();
    for (const auto& [k, v] : r.seconds)
        if (!(v >= 0.0))
            throw FormatError("report: negative time for stage " + k);
    return r;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_number(double v)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    if (std::isnan(v))
        return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

/// One row per report; per-view PSNR columns are named psnr_t<theta>_p<phi>.
inline std::string csv_table(const std::vector<std::pair<std::string, EvalReport>>& rows)
{
    if (rows.empty())
        throw Error("report: no reports to tabulate");
    const auto& d0 = rows.front().second.dims;
    std::set<std::string> stages;
    for (const auto& [name, r] : rows) {
        if (r.dims.theta != d0.theta || r.dims.phi != d0.phi)
            throw DimensionError("report: reports disagree on angular dims");
        for (const auto& [k, v] : r.seconds)
            stages.insert(k);
    }
    std::string out = "label,backend,compression_ratio,noise_sigma,stride,mse,psnr";
    for (const auto& s : stages)
        out += ",seconds_" + s;
    for (std::size_t p = 0; p < d0.phi; ++p)
        for (std::size_t t = 0; t < d0.theta; ++t)
            out += ",psnr_t" + std::to_string(t) + "_p" + std::to_string(p);
    out += '\n';
    for (const auto& [name, r] : rows) {
        out += name + ',' + r.backend + ',' + format_number(r.compression_ratio) + ',' + format_number(r.noise_sigma)
            + ',' + std::to_string(r.stride) + ',' + format_number(r.mse) + ',' + format_number(r.psnr);
        for (const auto& s : stages) {
            auto it = r.seconds.find(s);
            out += ',' + (it == r.seconds.end() ? std::string() : format_number(it->second));
        }
        for (Eigen::Index p = 0; p < r.view_psnr.cols(); ++p)
            for (Eigen::Index t = 0; t < r.view_psnr.rows(); ++t)
                out += ',' + format_number(r.view_psnr(t, p));
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Images

struct Raster {
    std::size_t width = 0;
    std::size_t height = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;
};

inline std::uint8_t to_byte(double v)
{
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Views tiled on a theta (columns) x phi (rows) grid: view (t,p) occupies
/// columns [t*X, (t+1)*X) and rows [p*Y, (p+1)*Y). Values clamp to [0,1].
/// One light field gives gray; three (R, G, B) give color.
template <typename T>
Raster view_mosaic(const std::vector<const BasicLightField<T>*>& channels)
{
    if (channels.size() != 1 && channels.size() != 3)
        throw Error("mosaic: need 1 or 3 channels");
    const auto& d = channels.front()->dims();
    for (const auto* c : channels)
        if (!(c->dims() == d))
            throw DimensionError("mosaic: channel dims differ");
    Raster r{d.x * d.theta, d.y * d.phi, static_cast<int>(channels.size()), {}};
    r.pixels.resize(r.width * r.height * channels.size());
    for (std::size_t p = 0; p < d.phi; ++p)
        for (std::size_t t = 0; t < d.theta; ++t)
            for (std::size_t y = 0; y < d.y; ++y)
                for (std::size_t x = 0; x < d.x; ++x) {
                    const std::size_t px = t * d.x + x, py = p * d.y + y;
                    for (std::size_t c = 0; c < channels.size(); ++c)
                        r.pixels[(py * r.width + px) * channels.size() + c]
                            = to_byte(static_cast<double>((*channels[c])(x, y, t, p)));
                }
    return r;
}

/// Black-red-yellow-white ramp for v in [0,1].
inline std::array<std::uint8_t, 3> heat_color(double v)
{
    v = std::clamp(v, 0.0, 1.0);
    return {to_byte(3.0 * v), to_byte(3.0 * v - 1.0), to_byte(3.0 * v - 2.0)};
}

/// Squared error per sample, laid out like view_mosaic and normalized by the
/// largest error in the field (all black for an exact reconstruction).
template <typename T, typename U>
Raster error_heatmap(const BasicLightField<T>& truth, const BasicLightField<U>& recon)
{
    const auto& d = truth.dims();
    if (!(d == recon.dims()))
        throw DimensionError("heatmap: dims differ");
    std::vector<double> err(truth.size());
    for (std::size_t i = 0; i < err.size(); ++i) {
        const double e = static_cast<double>(truth.values()[i]) - static_cast<double>(recon.values()[i]);
        err[i] = e * e;
    }
    const double peak = err.empty() ? 0.0 : *std::max_element(err.begin(), err.end());
    Raster r{d.x * d.theta, d.y * d.phi, 3, {}};
    r.pixels.resize(r.width * r.height * 3);
    for (std::size_t p = 0; p < d.phi; ++p)
        for (std::size_t t = 0; t < d.theta; ++t)
            for (std::size_t y = 0; y < d.y; ++y)
                for (std::size_t x = 0; x < d.x; ++x) {
                    const double v = peak > 0.0 ? err[truth.index(x, y, t, p)] / peak : 0.0;
                    const auto c = heat_color(v);
                    const std::size_t o = ((p * d.y + y) * r.width + t * d.x + x) * 3;
                    std::copy(c.begin(), c.end(), r.pixels.begin() + static_cast<std::ptrdiff_t>(o));
                }
    return r;
}

inline void write_png(const std::filesystem::path& path, const Raster& r)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    png::write(tmp, r.width, r.height, r.channels, r.pixels);
    std::filesystem::rename(tmp, path);
}

} // namespace lfr::report
