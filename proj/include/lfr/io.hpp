#pragma once

// LF4D container and per-view image ingestion.
//
// LF4D layout (all little-endian):
//   bytes 0..3   magic "LF4D"
//   bytes 4..5   version (u16, currently 1)
//   bytes 6..7   reserved, zero
//   bytes 8..23  dims X, Y, NTheta, NPhi (u32 each)
//   then X*Y*NTheta*NPhi float32 values, x fastest, then y, theta, phi.
//
// Coded measurements use the same container with dims (X, Y, N, 1).

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "lfr/error.hpp"
#include "lfr/lightfield.hpp"
#include "lfr/png.hpp"

namespace lfr::io {

inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr std::size_t kHeaderBytes = 24;

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v)
{
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

inline std::uint32_t get_u32(const std::uint8_t* p)
{
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8)
        | (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::uint32_t checked_u32(std::size_t v, const char* what)
{
    if (v > std::numeric_limits<std::uint32_t>::max())
        throw DimensionError(std::string(what) + " exceeds u32 range");
    return static_cast<std::uint32_t>(v);
}

} // namespace detail

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

/// Writes to a sibling temp file and renames, so readers never see a partial
/// file. Missing parent directories are created.
inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error("cannot create " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw Error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::vector<std::uint8_t> encode_lf4d(const Dims4& d, std::span<const float> values)
{
    if (values.size() != d.count())
        throw DimensionError("LF4D: value count does not match dims");
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderBytes + 4 * values.size());
    for (char c : {'L', 'F', '4', 'D'})
        out.push_back(static_cast<std::uint8_t>(c));
    detail::put_u16(out, kContainerVersion);
    detail::put_u16(out, 0);
    detail::put_u32(out, detail::checked_u32(d.x, "X"));
    detail::put_u32(out, detail::checked_u32(d.y, "Y"));
    detail::put_u32(out, detail::checked_u32(d.theta, "NTheta"));
    detail::put_u32(out, detail::checked_u32(d.phi, "NPhi"));
    for (float v : values)
        detail::put_f32(out, v);
    return out;
}

struct Lf4dPayload {
    Dims4 dims;
    std::vector<float> values;
};

inline Lf4dPayload decode_lf4d(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < kHeaderBytes)
        throw FormatError("LF4D: truncated header");
    if (std::memcmp(bytes.data(), "LF4D", 4) != 0)
        throw FormatError("LF4D: bad magic");
    const auto version = detail::get_u16(bytes.data() + 4);
    if (version != kContainerVersion)
        throw FormatError("LF4D: unsupported version " + std::to_string(version));
    Dims4 d{detail::get_u32(bytes.data() + 8), detail::get_u32(bytes.data() + 12), detail::get_u32(bytes.data() + 16),
        detail::get_u32(bytes.data() + 20)};

    // dims are u32, so the product of two fits in u64; guard the rest.
    std::uint64_t n = 1;
    for (std::uint64_t k : {std::uint64_t(d.x), std::uint64_t(d.y), std::uint64_t(d.theta), std::uint64_t(d.phi)}) {
        if (k != 0 && n > std::numeric_limits<std::uint64_t>::max() / 4 / k)
            throw FormatError("LF4D: dimension overflow");
        n *= k;
    }
    if (bytes.size() - kHeaderBytes != n * 4)
        throw FormatError("LF4D: payload is " + std::to_string(bytes.size() - kHeaderBytes) + " bytes, expected "
            + std::to_string(n * 4));

    Lf4dPayload p{d, std::vector<float>(n)};
    for (std::size_t i = 0; i < n; ++i)
        p.values[i] = detail::get_f32(bytes.data() + kHeaderBytes + 4 * i);
    return p;
}

inline void save_lf(const std::filesystem::path& path, const LightField& lf)
{
    write_file(path, encode_lf4d(lf.dims(), lf.values()));
}

inline LightField load_lf(const std::filesystem::path& path)
{
    auto bytes = read_file(path);
    auto p = decode_lf4d(bytes);
    return LightField(p.dims, std::move(p.values));
}

inline void save_measurement(const std::filesystem::path& path, const Measurement& m)
{
    write_file(path, encode_lf4d(Dims4{m.width(), m.height(), m.samples(), 1}, m.values()));
}

inline Measurement load_measurement(const std::filesystem::path& path)
{
    auto bytes = read_file(path);
    auto p = decode_lf4d(bytes);
    if (p.dims.phi != 1)
        throw FormatError("measurement file must have NPhi = 1");
    return Measurement(p.dims.x, p.dims.y, p.dims.theta, std::move(p.values));
}

/// Builds a light field from `view_{theta}_{phi}.png` files (zero-based).
/// Samples are normalized by the bit-depth maximum (255 or 65535).
inline LightField ingest_view_grid(const std::filesystem::path& dir, std::size_t n_theta = 5, std::size_t n_phi = 5)
{
    if (n_theta == 0 || n_phi == 0)
        throw DimensionError("ingest: angular dims must be >= 1");
    LightField lf;
    for (std::size_t p = 0; p < n_phi; ++p)
        for (std::size_t t = 0; t < n_theta; ++t) {
            const auto file = dir / ("view_" + std::to_string(t) + "_" + std::to_string(p) + ".png");
            if (!std::filesystem::exists(file))
                throw Error("ingest: missing view file " + file.string());
            const auto img = png::read_gray(file);
            if (lf.size() == 0) {
                lf = LightField(Dims4{img.width, img.height, n_theta, n_phi});
            } else if (img.width != lf.dims().x || img.height != lf.dims().y) {
                throw DimensionError("ingest: " + file.string() + " is " + std::to_string(img.width) + "x"
                    + std::to_string(img.height) + ", expected " + std::to_string(lf.dims().x) + "x"
                    + std::to_string(lf.dims().y));
            }
            const double scale = img.bit_depth == 16 ? 65535.0 : 255.0;
            for (std::size_t y = 0; y < img.height; ++y)
                for (std::size_t x = 0; x < img.width; ++x)
                    lf(x, y, t, p) = static_cast<float>(img.samples[y * img.width + x] / scale);
        }
    return lf;
}

} // namespace lfr::io
