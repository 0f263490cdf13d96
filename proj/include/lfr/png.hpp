#pragma once

// Minimal libpng wrappers: grayscale read (8/16 bit) and 8-bit gray/RGB write.

#include <png.h>

#include <cstdint>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "lfr/error.hpp"

namespace lfr::png {

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    int bit_depth = 8;
    std::vector<std::uint16_t> samples; // row-major, raw sample values
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept
    {
        if (f)
            std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void on_warning(png_structp, png_const_charp) { }

} // namespace detail

inline GrayImage read_gray(const std::filesystem::path& path)
{
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp)
        throw Error("png: cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, detail::on_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("png: out of memory");
    }
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_read_struct(p, i, nullptr); }
    } guard{&png, &info};

    GrayImage img;
    std::vector<std::uint8_t> raw;
    std::vector<png_bytep> rows;
    // libpng reports errors by longjmp; only C frames lie between here and the jump.
    if (setjmp(png_jmpbuf(png)))
        throw FormatError("png: cannot decode " + path.string());

    png_init_io(png, fp.get());
    png_read_info(png, info);

    const auto color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY)
        throw FormatError("png: " + path.string() + " is not single-channel grayscale");
    if (depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
        depth = 8;
    }
    if (depth == 16)
        png_set_swap(png); // native little-endian 16-bit samples
    png_read_update_info(png, info);

    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.bit_depth = depth;
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    raw.resize(rowbytes * img.height);
    rows.resize(img.height);
    for (std::size_t r = 0; r < img.height; ++r)
        rows[r] = raw.data() + r * rowbytes;
    png_read_image(png, rows.data());

    img.samples.resize(img.width * img.height);
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c) {
            if (depth == 16) {
                std::uint16_t v;
                std::memcpy(&v, rows[r] + 2 * c, 2);
                img.samples[r * img.width + c] = v;
            } else {
                img.samples[r * img.width + c] = rows[r][c];
            }
        }
    return img;
}

/// Writes 8-bit samples; channels is 1 (gray) or 3 (RGB), interleaved.
inline void write(const std::filesystem::path& path, std::size_t width, std::size_t height, int channels,
    const std::vector<std::uint8_t>& pixels, int bit_depth = 8)
{
    if (channels != 1 && channels != 3)
        throw Error("png: unsupported channel count");
    const std::size_t bytes_per_sample = bit_depth == 16 ? 2 : 1;
    if (pixels.size() != width * height * channels * bytes_per_sample)
        throw DimensionError("png: pixel buffer size mismatch");

    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp)
        throw Error("png: cannot create " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, detail::on_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error("png: out of memory");
    }
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_write_struct(p, i); }
    } guard{&png, &info};

    if (setjmp(png_jmpbuf(png)))
        throw Error("png: cannot encode " + path.string());

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
        channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
        PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    // 16-bit buffers are given big-endian, as PNG stores them.
    const std::size_t stride = width * channels * bytes_per_sample;
    for (std::size_t r = 0; r < height; ++r)
        png_write_row(png, const_cast<png_bytep>(pixels.data() + r * stride));
    png_write_end(png, nullptr);
}

} // namespace lfr::png
