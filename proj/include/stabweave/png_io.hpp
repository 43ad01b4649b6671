#pragma once

#include <png.h>

#include <cstdio>
#include <memory>
#include <string>

#include "core.hpp"
#include "image.hpp"

namespace stabweave {

// Decode any libpng-readable file to 8-bit gray or RGB (alpha stripped,
// palette expanded, 16-bit narrowed).
inline Image read_png(const std::string& path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(
        std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) throw DecodeError("cannot open " + path);

    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError("libpng init failed for " + path);
    }
    std::vector<png_bytep> rows;
    std::vector<png_byte> data;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError("failed to decode " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    png_read_update_info(png, info);

    int width = static_cast<int>(png_get_image_width(png, info));
    int height = static_cast<int>(png_get_image_height(png, info));
    int channels = static_cast<int>(png_get_channels(png, info));
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError(path + ": unsupported channel count " +
                          std::to_string(channels));
    }
    data.resize(static_cast<size_t>(width) * height * channels);
    rows.resize(height);
    for (int y = 0; y < height; ++y)
        rows[y] = data.data() + static_cast<size_t>(y) * width * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(width, height, channels);
    for (size_t i = 0; i < data.size(); ++i) img.px[i] = data[i];
    return img;
}

// 8-bit PNG writer with fixed settings (compression level 1, no filtering)
// so identical pixels always produce identical bytes.
inline void write_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DecodeError("write_png supports 1- or 3-channel images");
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(
        std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw DecodeError("cannot open " + path + " for writing");

    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DecodeError("libpng init failed for " + path);
    }
    std::vector<png_byte> data(static_cast<size_t>(img.width) * img.height *
                               img.channels);
    std::vector<png_bytep> rows(img.height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DecodeError("failed to encode " + path);
    }
    png_init_io(png, fp.get());
    png_set_compression_level(png, 1);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_IHDR(png, info, img.width, img.height, 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    for (size_t i = 0; i < data.size(); ++i) data[i] = quantize8(img.px[i]);
    for (int y = 0; y < img.height; ++y)
        rows[y] = data.data() + static_cast<size_t>(y) * img.width * img.channels;
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace stabweave
