#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "core.hpp"
#include "image.hpp"
#include "mesh.hpp"

namespace stabweave {

struct Canvas {
    Vec2 offset{0, 0};  // translation applied to both views' vertices
    int width = 0;
    int height = 0;
};

inline Canvas canvas_extent(const std::vector<const Mesh*>& meshes) {
    double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
    bool first = true;
    for (const Mesh* m : meshes)
        for (const Vec2& p : m->v) {
            if (first) {
                min_x = max_x = p.x;
                min_y = max_y = p.y;
                first = false;
            } else {
                min_x = std::min(min_x, p.x);
                max_x = std::max(max_x, p.x);
                min_y = std::min(min_y, p.y);
                max_y = std::max(max_y, p.y);
            }
        }
    Canvas c;
    c.offset = {std::ceil(-min_x), std::ceil(-min_y)};
    c.offset.x = std::max(c.offset.x, 0.0);
    c.offset.y = std::max(c.offset.y, 0.0);
    c.width = static_cast<int>(std::ceil(max_x + c.offset.x));
    c.height = static_cast<int>(std::ceil(max_y + c.offset.y));
    return c;
}

inline Canvas canvas_extent(const Mesh& a, const Mesh& b) {
    return canvas_extent({&a, &b});
}

// One destination triangle with its affine back-mapping to the rigid source.
struct TriangleMap {
    Vec2 d0, d1, d2;  // destination vertices (canvas coordinates)
    Vec2 s0, s1, s2;  // source vertices (rigid mesh, frame coordinates)
    double inv00, inv01, inv10, inv11;  // inverse of [d1-d0 | d2-d0]
    double min_y, max_y;

    // Barycentric coordinates (b1, b2) of a canvas point.
    void bary(double px, double py, double& b1, double& b2) const {
        double rx = px - d0.x, ry = py - d0.y;
        b1 = inv00 * rx + inv01 * ry;
        b2 = inv10 * rx + inv11 * ry;
    }
    Vec2 source_point(double b1, double b2) const {
        double l0 = 1.0 - b1 - b2;
        return {l0 * s0.x + b1 * s1.x + b2 * s2.x,
                l0 * s0.y + b1 * s1.y + b2 * s2.y};
    }
};

// Split every grid quad into two triangles and precompute the affine
// back-maps. Throws FoldedMesh (with the quad index) when any triangle is
// degenerate or inverted.
inline std::vector<TriangleMap> mesh_triangles(const Mesh& mesh,
                                               const GridSpec& spec,
                                               Vec2 canvas_offset) {
    require_shape(mesh, spec, "mesh_triangles");
    Mesh rig = rigid_mesh(spec);
    std::vector<TriangleMap> tris;
    tris.reserve(static_cast<size_t>(spec.rows - 1) * (spec.cols - 1) * 2);
    for (int i = 0; i + 1 < spec.rows; ++i)
        for (int j = 0; j + 1 < spec.cols; ++j) {
            const Vec2 d[4] = {mesh.at(i, j) + canvas_offset,
                               mesh.at(i, j + 1) + canvas_offset,
                               mesh.at(i + 1, j) + canvas_offset,
                               mesh.at(i + 1, j + 1) + canvas_offset};
            const Vec2 s[4] = {rig.at(i, j), rig.at(i, j + 1), rig.at(i + 1, j),
                               rig.at(i + 1, j + 1)};
            const int split[2][3] = {{0, 1, 2}, {1, 3, 2}};
            for (const auto& t : split) {
                TriangleMap tm;
                tm.d0 = d[t[0]];
                tm.d1 = d[t[1]];
                tm.d2 = d[t[2]];
                tm.s0 = s[t[0]];
                tm.s1 = s[t[1]];
                tm.s2 = s[t[2]];
                double ax = tm.d1.x - tm.d0.x, ay = tm.d1.y - tm.d0.y;
                double bx = tm.d2.x - tm.d0.x, by = tm.d2.y - tm.d0.y;
                double det = ax * by - ay * bx;
                if (!(det > 1e-12))
                    throw FoldedMesh("mesh quad " + std::to_string(i) + "," +
                                     std::to_string(j) +
                                     " is folded (non-positive triangle area)");
                tm.inv00 = by / det;
                tm.inv01 = -bx / det;
                tm.inv10 = -ay / det;
                tm.inv11 = ax / det;
                tm.min_y = std::min({tm.d0.y, tm.d1.y, tm.d2.y});
                tm.max_y = std::max({tm.d0.y, tm.d1.y, tm.d2.y});
                tris.push_back(tm);
            }
        }
    return tris;
}

struct MaskedImage {
    Image pixels;
    Image mask;  // single channel, 1 where covered
};

namespace detail {

// Visit every covered pixel of `row` (y fixed) in deterministic order:
// triangles are visited in construction order and later triangles win, so
// shared edges resolve identically regardless of threading.
template <typename Fn>
void scan_row(const std::vector<TriangleMap>& tris,
              const std::vector<int>& row_tris, int y, int width, Fn&& fn) {
    constexpr double eps = 1e-12;
    for (int ti : row_tris) {
        const TriangleMap& t = tris[ti];
        double minx = std::min({t.d0.x, t.d1.x, t.d2.x});
        double maxx = std::max({t.d0.x, t.d1.x, t.d2.x});
        int x0 = std::max(0, static_cast<int>(std::ceil(minx - eps)));
        int x1 = std::min(width - 1, static_cast<int>(std::floor(maxx + eps)));
        for (int x = x0; x <= x1; ++x) {
            double b1, b2;
            t.bary(x, y, b1, b2);
            if (b1 >= -eps && b2 >= -eps && b1 + b2 <= 1.0 + eps)
                fn(x, t, b1, b2);
        }
    }
}

inline std::vector<std::vector<int>> rows_index(const std::vector<TriangleMap>& tris,
                                                int height) {
    std::vector<std::vector<int>> index(height);
    for (size_t i = 0; i < tris.size(); ++i) {
        int y0 = std::max(0, static_cast<int>(std::ceil(tris[i].min_y - 1e-12)));
        int y1 = std::min(height - 1,
                          static_cast<int>(std::floor(tris[i].max_y + 1e-12)));
        for (int y = y0; y <= y1; ++y) index[y].push_back(static_cast<int>(i));
    }
    return index;
}

}  // namespace detail

inline MaskedImage warp_frame(const Image& frame, const Mesh& mesh,
                              const GridSpec& spec, const Canvas& canvas,
                              int threads = 1) {
    auto tris = mesh_triangles(mesh, spec, canvas.offset);
    auto rows = detail::rows_index(tris, canvas.height);
    MaskedImage out;
    out.pixels = Image(canvas.width, canvas.height, frame.channels);
    out.mask = Image(canvas.width, canvas.height, 1);
    parallel_for(static_cast<size_t>(canvas.height), threads,
                 [&](size_t y_lo, size_t y_hi) {
                     for (size_t y = y_lo; y < y_hi; ++y)
                         detail::scan_row(
                             tris, rows[y], static_cast<int>(y), canvas.width,
                             [&](int x, const TriangleMap& t, double b1, double b2) {
                                 Vec2 s = t.source_point(b1, b2);
                                 for (int c = 0; c < frame.channels; ++c)
                                     out.pixels.at(x, static_cast<int>(y), c) =
                                         bilinear_sample(frame, s.x, s.y, c);
                                 out.mask.at(x, static_cast<int>(y)) = 1.0f;
                             });
                 });
    return out;
}

struct StitchedFrame {
    Image pixels;
    Image overlap;  // product of the two coverage masks
};

inline StitchedFrame overlap_and_blend(const MaskedImage& a, const MaskedImage& b) {
    if (!a.pixels.same_shape(b.pixels) || !a.mask.same_shape(b.mask))
        throw SizeMismatch("overlap_and_blend: canvas shapes differ");
    StitchedFrame out;
    out.pixels = Image(a.pixels.width, a.pixels.height, a.pixels.channels);
    out.overlap = Image(a.mask.width, a.mask.height, 1);
    for (int y = 0; y < a.pixels.height; ++y)
        for (int x = 0; x < a.pixels.width; ++x) {
            float ma = a.mask.at(x, y), mb = b.mask.at(x, y);
            out.overlap.at(x, y) = ma * mb;
            for (int c = 0; c < a.pixels.channels; ++c) {
                float va = a.pixels.at(x, y, c), vb = b.pixels.at(x, y, c);
                if (ma > 0 && mb > 0)
                    out.pixels.at(x, y, c) = 0.5f * (va + vb);
                else if (ma > 0)
                    out.pixels.at(x, y, c) = va;
                else if (mb > 0)
                    out.pixels.at(x, y, c) = vb;
            }
        }
    return out;
}

}  // namespace stabweave
