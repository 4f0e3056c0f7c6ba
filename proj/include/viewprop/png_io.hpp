// viewprop/png_io.hpp
//
// PNG adapters over libpng: 8-bit RGB images and 16-bit single-channel
// depth rasters. Writers use fixed encoder settings so identical pixel data
// always produces identical bytes.
#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "viewprop/core.hpp"
#include "viewprop/image.hpp"

namespace viewprop {

namespace detail {

struct FileCloser {
    std::FILE* fp = nullptr;
    ~FileCloser() {
        if (fp) std::fclose(fp);
    }
};

}  // namespace detail

// ── 8-bit RGB ───────────────────────────────────────────────────────────

// Reads any 8-bit PNG as RGB (palette expanded, gray promoted, alpha
// stripped, 16-bit narrowed). Values land in [0,1] as k/255.
inline ImageBuffer read_png_rgb8(const std::filesystem::path& path) {
    detail::FileCloser file{std::fopen(path.string().c_str(), "rb")};
    if (!file.fp) throw IoError("cannot open PNG for reading: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng allocation failed");
    }

    int width = 0, height = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG header: " + path.string());
    }
    png_init_io(png, file.fp);
    png_read_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(width) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unexpected PNG row layout: " + path.string());
    }

    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(width) * height * 3);
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = bytes.data() + static_cast<std::size_t>(y) * width * 3;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG pixels: " + path.string());
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    ImageBuffer img(width, height);
    for (std::size_t i = 0; i < bytes.size(); ++i)
        img.data[i] = static_cast<double>(bytes[i]) / 255.0;
    return img;
}

// Writes an image as 8-bit RGB. Values are clamped to [0,1] and quantized
// as round(v * 255).
inline void write_png_rgb8(const std::filesystem::path& path, const ImageBuffer& img) {
    if (img.empty()) throw std::invalid_argument("write_png_rgb8: empty image");
    std::vector<std::uint8_t> bytes(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        double v = clamp01(img.data[i]);
        bytes[i] = static_cast<std::uint8_t>(v * 255.0 + 0.5);
    }

    detail::FileCloser file{std::fopen(path.string().c_str(), "wb")};
    if (!file.fp) throw IoError("cannot open PNG for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        throw IoError("libpng allocation failed");
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] = bytes.data() + static_cast<std::size_t>(y) * img.width * 3;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode PNG: " + path.string());
    }
    png_init_io(png, file.fp);
    png_set_compression_level(png, 6);  // fixed settings: identical data -> identical bytes
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ── 16-bit single channel ───────────────────────────────────────────────

struct Gray16 {
    int width = 0;
    int height = 0;
    std::vector<std::uint16_t> samples;  // host byte order
};

// Strict reader: the file must be exactly 16-bit grayscale, matching how
// depth rasters are written. Anything else is a load error, not a repair.
inline Gray16 read_png_gray16(const std::filesystem::path& path) {
    detail::FileCloser file{std::fopen(path.string().c_str(), "rb")};
    if (!file.fp) throw IoError("cannot open PNG for reading: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng allocation failed");
    }

    int width = 0, height = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG header: " + path.string());
    }
    png_init_io(png, file.fp);
    png_read_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    if (png_get_bit_depth(png, info) != 16 ||
        png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("depth PNG must be 16-bit single channel: " + path.string());
    }
#if __BYTE_ORDER__ == __ORDER_LITTLE_ENDIAN__
    png_set_swap(png);
#endif
    png_read_update_info(png, info);

    Gray16 out;
    out.width = width;
    out.height = height;
    out.samples.resize(static_cast<std::size_t>(width) * height);
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y)
        rows[static_cast<std::size_t>(y)] =
            reinterpret_cast<png_bytep>(out.samples.data() + static_cast<std::size_t>(y) * width);

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG pixels: " + path.string());
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

inline void write_png_gray16(const std::filesystem::path& path, int width, int height,
                             const std::uint16_t* samples) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("write_png_gray16: empty raster");
    detail::FileCloser file{std::fopen(path.string().c_str(), "wb")};
    if (!file.fp) throw IoError("cannot open PNG for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        throw IoError("libpng allocation failed");
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y)
        rows[static_cast<std::size_t>(y)] = reinterpret_cast<png_bytep>(
            const_cast<std::uint16_t*>(samples) + static_cast<std::size_t>(y) * width);

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode PNG: " + path.string());
    }
    png_init_io(png, file.fp);
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 16,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
#if __BYTE_ORDER__ == __ORDER_LITTLE_ENDIAN__
    png_set_swap(png);
#endif
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ── masks ───────────────────────────────────────────────────────────────

// Mask files: any PNG, nonzero pixel -> true. Written as 0/255 RGB.
inline BinaryMask read_png_mask(const std::filesystem::path& path) {
    ImageBuffer img = read_png_rgb8(path);
    BinaryMask mask(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            mask.set(x, y, img.at(x, y, 0) > 0.0 || img.at(x, y, 1) > 0.0 || img.at(x, y, 2) > 0.0);
    return mask;
}

inline void write_png_mask(const std::filesystem::path& path, const BinaryMask& mask) {
    ImageBuffer img(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            double v = mask.at(x, y) ? 1.0 : 0.0;
            img.set_rgb(x, y, {v, v, v});
        }
    write_png_rgb8(path, img);
}

}  // namespace viewprop
