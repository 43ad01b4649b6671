#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "core.hpp"

namespace stabweave {

// Interleaved float image, values nominally in [0, 255].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> px;

    Image() = default;
    Image(int w, int h, int c)
        : width(w), height(h), channels(c),
          px(static_cast<size_t>(w) * h * c, 0.0f) {}

    float& at(int x, int y, int c = 0) {
        return px[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    float at(int x, int y, int c = 0) const {
        return px[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

inline Image luma(const Image& img) {
    if (img.channels == 1) return img;
    Image out(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out.at(x, y) = 0.299f * img.at(x, y, 0) + 0.587f * img.at(x, y, 1) +
                           0.114f * img.at(x, y, 2);
    return out;
}

// Bilinear sample with edge clamp; integer pixel centers (sample at (x, y)
// returns the pixel value exactly).
inline float bilinear_sample(const Image& img, double x, double y, int c = 0) {
    // Snap coordinates within 1e-9 of an integer so purely translational or
    // identity warps copy pixels exactly instead of blending by ~1e-12 weights
    // left over from the triangle back-map arithmetic.
    double rx = std::round(x), ry = std::round(y);
    if (std::abs(x - rx) < 1e-9) x = rx;
    if (std::abs(y - ry) < 1e-9) y = ry;
    double cx = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    double cy = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    int x0 = static_cast<int>(cx);
    int y0 = static_cast<int>(cy);
    int x1 = std::min(x0 + 1, img.width - 1);
    int y1 = std::min(y0 + 1, img.height - 1);
    double fx = cx - x0, fy = cy - y0;
    double top = img.at(x0, y0, c) * (1 - fx) + img.at(x1, y0, c) * fx;
    double bot = img.at(x0, y1, c) * (1 - fx) + img.at(x1, y1, c) * fx;
    return static_cast<float>(top * (1 - fy) + bot * fy);
}

inline Image box3(const Image& img) {
    Image out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                float acc = 0.0f;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int sx = std::clamp(x + dx, 0, img.width - 1);
                        int sy = std::clamp(y + dy, 0, img.height - 1);
                        acc += img.at(sx, sy, c);
                    }
                out.at(x, y, c) = acc / 9.0f;
            }
    return out;
}

// Block-mean downsample by an integer factor (area average; trailing
// partial blocks average whatever pixels they cover).
inline Image downsample(const Image& img, int factor) {
    if (factor <= 1) return img;
    int w = (img.width + factor - 1) / factor;
    int h = (img.height + factor - 1) / factor;
    Image out(w, h, img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels; ++c) {
                float acc = 0.0f;
                int n = 0;
                for (int sy = y * factor; sy < std::min((y + 1) * factor, img.height); ++sy)
                    for (int sx = x * factor; sx < std::min((x + 1) * factor, img.width); ++sx) {
                        acc += img.at(sx, sy, c);
                        ++n;
                    }
                out.at(x, y, c) = acc / static_cast<float>(n);
            }
    return out;
}

inline std::uint8_t quantize8(float v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace stabweave
