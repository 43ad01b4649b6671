#pragma once
// Sliding-window trajectory smoothing. A window holds both views' stitching
// trajectories over N frames; the optimizer picks per-frame, per-vertex
// offsets (one increment field per view and frame) that make the trajectories
// smooth in time while keeping the warped pair aligned, the meshes
// undistorted, and the result consistent with frames already emitted.
//
// Smoothed trajectory:  S_hat(t) = S(t) + delta(t)
// Smoothed warp mesh:   M_hat(t) = M(t) - delta(t)
// so S_hat + M_hat == S + M holds identically per vertex.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "core.hpp"
#include "image.hpp"
#include "mesh.hpp"
#include "render.hpp"
#include "trajectory.hpp"

namespace stabweave {

enum class SmoothingMode { offline, online };

struct SmoothingWeights {
    double w_data = 1.0;      // stay near the raw trajectory
    double w_smooth = 50.0;   // temporal second differences
    double w_shape = 10.0;    // mesh distortion of the smoothed warps
    double w_online = 0.1;    // agreement with already-committed positions
    double w_traj = 10.0;     // cross-view trajectory consistency in the overlap
    double w_align = 1000.0;  // photometric alignment of the newest frame pair
    // Second-difference weights by temporal offset. The smoothness term sums
    // over every center frame where all offsets fit inside the window, which
    // for a 7-frame window with three offsets is exactly the middle frame.
    std::vector<double> alpha{0.9, 0.3, 0.1};
    // When set, the vertex-space terms (data, smoothness, committed-position
    // agreement) use squared Euclidean norms; the photometric terms stay L1.
    bool squared_norms = false;
    // Photometric terms are evaluated on this downsampling of the frame.
    int eval_downsample = 4;
    DistortionWeights distortion{};

    void validate() const {
        if (w_data < 0 || w_smooth < 0 || w_shape < 0 || w_online < 0 ||
            w_traj < 0 || w_align < 0)
            throw Error("smoothing weights must be non-negative");
        if (alpha.empty()) throw Error("smoothness needs at least one offset weight");
        if (eval_downsample < 1) throw Error("eval_downsample must be at least 1");
    }
};

struct OptimizerConfig {
    int max_iters = 60;
    double initial_step = 0.1;   // pixels; per-coordinate cap on the first move
    double rel_decrease = 1e-5;  // stop once an accepted step improves less than this
};

// Per-view trajectory offsets for one window, relative t = 1..N.
struct SmoothingIncrement {
    std::vector<GridField> d_ref, d_tgt;
};

inline SmoothingIncrement zero_increment(int n, const GridSpec& spec) {
    SmoothingIncrement d;
    d.d_ref.assign(static_cast<size_t>(n), GridField(spec.rows, spec.cols));
    d.d_tgt.assign(static_cast<size_t>(n), GridField(spec.rows, spec.cols));
    return d;
}

struct LossBreakdown {
    double data = 0, smooth = 0, shape = 0, traj = 0, online = 0, align = 0;
    double total = 0;
    bool overlap_warning = false;  // some photometric term saw an empty overlap
};

// ------------------------------------------------------------ basic terms

// Sum over frames, views, and vertices of the (squared) offset magnitude.
inline double loss_data(const SmoothingIncrement& delta, bool squared = false) {
    double s = 0;
    for (const auto* side : {&delta.d_ref, &delta.d_tgt})
        for (const GridField& f : *side)
            for (const Vec2& p : f.v) s += squared ? p.norm2() : p.norm();
    return s;
}

// Weighted second differences of one view's positions. Every frame that can
// serve as a center for all offsets contributes; a 7-frame window with three
// offsets has a single center.
inline double loss_smooth(const std::vector<GridField>& path,
                          const std::vector<double>& alpha, bool squared = false) {
    int n = static_cast<int>(path.size());
    int k = static_cast<int>(alpha.size());
    double s = 0;
    for (int m = k; m + k < n; ++m)  // 0-based center
        for (int i = 1; i <= k; ++i) {
            const GridField& a = path[static_cast<size_t>(m + i)];
            const GridField& b = path[static_cast<size_t>(m - i)];
            const GridField& c = path[static_cast<size_t>(m)];
            for (size_t v = 0; v < c.count(); ++v) {
                Vec2 d = a.v[v] + b.v[v] - 2.0 * c.v[v];
                s += alpha[static_cast<size_t>(i) - 1] * (squared ? d.norm2() : d.norm());
            }
        }
    return s;
}

// Mean over frames of the distortion energy of one view's smoothed warps.
inline double loss_shape(const std::vector<Mesh>& smooth_meshes, const GridSpec& spec,
                         const DistortionWeights& w = {}) {
    if (smooth_meshes.empty()) return 0;
    Mesh rig = rigid_mesh(spec);
    double s = 0;
    for (const Mesh& m : smooth_meshes) s += distortion_energy(m - rig, spec, w);
    return s / static_cast<double>(smooth_meshes.size());
}

// Mean disagreement between this window's smoothed positions and the
// positions committed by the previous window at the shared frames.
inline double loss_online_collab(const TrajectoryWindow& w,
                                 const SmoothingIncrement& delta,
                                 bool squared = false) {
    int n = w.n;
    double s = 0;
    for (int t = 0; t + 1 < n; ++t) {
        if (!w.anchor_valid[static_cast<size_t>(t)]) continue;
        for (int side = 0; side < 2; ++side) {
            const GridField& raw = side ? w.s_tgt[static_cast<size_t>(t)]
                                        : w.s_ref[static_cast<size_t>(t)];
            const GridField& del = side ? delta.d_tgt[static_cast<size_t>(t)]
                                        : delta.d_ref[static_cast<size_t>(t)];
            const GridField& anc = side ? w.anchor_tgt[static_cast<size_t>(t)]
                                        : w.anchor_ref[static_cast<size_t>(t)];
            for (size_t v = 0; v < raw.count(); ++v) {
                Vec2 d = raw.v[v] + del.v[v] - anc.v[v];
                s += squared ? d.norm2() : d.norm();
            }
        }
    }
    return s / static_cast<double>(n - 1);
}

// -------------------------------------------- warped-overlap term machinery

namespace detail {

// Bilinear interpolation table from the control grid to a dense lattice at
// eval scale: lattice sample (x, y) sits at frame position (ds*x, ds*y).
struct UpsampleTable {
    int w = 0, h = 0;      // lattice sample counts
    double ex = 0, ey = 0; // frame extent in eval units
    struct Entry {
        int i, j;       // top-left control vertex
        double fx, fy;  // in-cell fractions
    };
    std::vector<Entry> entries;
};

inline UpsampleTable upsample_table(const GridSpec& spec, int ds) {
    UpsampleTable u;
    u.ex = static_cast<double>(spec.size.width) / ds;
    u.ey = static_cast<double>(spec.size.height) / ds;
    u.w = spec.size.width / ds + 1;
    u.h = spec.size.height / ds + 1;
    Vec2 cell = spec.cell_size();
    u.entries.resize(static_cast<size_t>(u.w) * u.h);
    for (int y = 0; y < u.h; ++y)
        for (int x = 0; x < u.w; ++x) {
            double px = static_cast<double>(ds) * x / cell.x;
            double py = static_cast<double>(ds) * y / cell.y;
            int j = std::min(static_cast<int>(px), spec.cols - 2);
            int i = std::min(static_cast<int>(py), spec.rows - 2);
            u.entries[static_cast<size_t>(y) * u.w + x] = {i, j, px - j, py - i};
        }
    return u;
}

inline void upsample_field(const UpsampleTable& t, const GridField& f,
                           std::vector<Vec2>& dense) {
    dense.resize(t.entries.size());
    for (size_t k = 0; k < t.entries.size(); ++k) {
        const auto& e = t.entries[k];
        const Vec2& c00 = f.at(e.i, e.j);
        const Vec2& c10 = f.at(e.i, e.j + 1);
        const Vec2& c01 = f.at(e.i + 1, e.j);
        const Vec2& c11 = f.at(e.i + 1, e.j + 1);
        Vec2 top = c00 + (c10 - c00) * e.fx;
        Vec2 bot = c01 + (c11 - c01) * e.fx;
        dense[k] = top + (bot - top) * e.fy;
    }
}

// Scatter a gradient over the dense lattice back onto the control grid.
inline void fold_dense_gradient(const UpsampleTable& t, const std::vector<Vec2>& gd,
                                GridField& out) {
    for (size_t k = 0; k < t.entries.size(); ++k) {
        const Vec2& g = gd[k];
        if (g.x == 0.0 && g.y == 0.0) continue;
        const auto& e = t.entries[k];
        double w00 = (1 - e.fx) * (1 - e.fy), w10 = e.fx * (1 - e.fy);
        double w01 = (1 - e.fx) * e.fy, w11 = e.fx * e.fy;
        out.at(e.i, e.j) += g * w00;
        out.at(e.i, e.j + 1) += g * w10;
        out.at(e.i + 1, e.j) += g * w01;
        out.at(e.i + 1, e.j + 1) += g * w11;
    }
}

// Scaled warp geometry: grid quads split exactly like the renderer, with
// destination and source vertices divided by the eval factor. Folds are
// reported instead of thrown so the optimizer can reject the step.
struct EvalGeometry {
    std::vector<TriangleMap> tris;
    std::vector<std::array<int, 3>> verts;   // flat control-vertex indices
    std::vector<std::array<double, 4>> back; // A^{-T} S^T per triangle
    std::vector<std::vector<int>> rows;
    bool ok = true;
};

inline void build_eval_geometry(const Mesh& mesh, const Mesh& rig, const GridSpec& spec,
                                int ds, const Canvas& canvas, EvalGeometry& g) {
    g.tris.clear();
    g.verts.clear();
    g.back.clear();
    g.ok = true;
    const double inv_ds = 1.0 / ds;
    const int quads = (spec.rows - 1) * (spec.cols - 1) * 2;
    g.tris.reserve(static_cast<size_t>(quads));
    g.verts.reserve(static_cast<size_t>(quads));
    g.back.reserve(static_cast<size_t>(quads));
    for (int i = 0; i + 1 < spec.rows; ++i)
        for (int j = 0; j + 1 < spec.cols; ++j) {
            const int vi[4] = {i * spec.cols + j, i * spec.cols + j + 1,
                               (i + 1) * spec.cols + j, (i + 1) * spec.cols + j + 1};
            Vec2 d[4], s[4];
            for (int k = 0; k < 4; ++k) {
                d[k] = mesh.v[static_cast<size_t>(vi[k])] * inv_ds + canvas.offset;
                s[k] = rig.v[static_cast<size_t>(vi[k])] * inv_ds;
            }
            const int split[2][3] = {{0, 1, 2}, {1, 3, 2}};
            for (const auto& tr : split) {
                TriangleMap tm;
                tm.d0 = d[tr[0]];
                tm.d1 = d[tr[1]];
                tm.d2 = d[tr[2]];
                tm.s0 = s[tr[0]];
                tm.s1 = s[tr[1]];
                tm.s2 = s[tr[2]];
                double ax = tm.d1.x - tm.d0.x, ay = tm.d1.y - tm.d0.y;
                double bx = tm.d2.x - tm.d0.x, by = tm.d2.y - tm.d0.y;
                double det = ax * by - ay * bx;
                if (!(det > 1e-12)) {
                    g.ok = false;
                    return;
                }
                tm.inv00 = by / det;
                tm.inv01 = -bx / det;
                tm.inv10 = -ay / det;
                tm.inv11 = ax / det;
                tm.min_y = std::min({tm.d0.y, tm.d1.y, tm.d2.y});
                tm.max_y = std::max({tm.d0.y, tm.d1.y, tm.d2.y});
                double sx1 = tm.s1.x - tm.s0.x, sy1 = tm.s1.y - tm.s0.y;
                double sx2 = tm.s2.x - tm.s0.x, sy2 = tm.s2.y - tm.s0.y;
                // (A^{-T} S^T): maps a source-space gradient to a
                // destination-vertex gradient (up to the barycentric weight).
                g.back.push_back({tm.inv00 * sx1 + tm.inv10 * sx2,
                                  tm.inv00 * sy1 + tm.inv10 * sy2,
                                  tm.inv01 * sx1 + tm.inv11 * sx2,
                                  tm.inv01 * sy1 + tm.inv11 * sy2});
                g.tris.push_back(tm);
                g.verts.push_back({vi[tr[0]], vi[tr[1]], vi[tr[2]]});
            }
        }
    g.rows = rows_index(g.tris, canvas.height);
}

// Soft coverage weight: 1 in the interior of the source rectangle, ramping
// to 0 over the last eval pixel before each edge. Makes the masked losses
// continuous as coverage appears or disappears.
struct BorderW {
    double b, gx, gy;
};

inline BorderW border_weight(double ux, double uy, double ex, double ey) {
    double px = std::clamp(ux, 0.0, 1.0), dpx = (ux > 0 && ux < 1) ? 1.0 : 0.0;
    double qx = std::clamp(ex - ux, 0.0, 1.0), dqx = (ux > ex - 1 && ux < ex) ? -1.0 : 0.0;
    double py = std::clamp(uy, 0.0, 1.0), dpy = (uy > 0 && uy < 1) ? 1.0 : 0.0;
    double qy = std::clamp(ey - uy, 0.0, 1.0), dqy = (uy > ey - 1 && uy < ey) ? -1.0 : 0.0;
    BorderW w;
    w.b = px * qx * py * qy;
    w.gx = (dpx * qx + px * dqx) * py * qy;
    w.gy = px * qx * (dpy * qy + py * dqy);
    return w;
}

// Bilinear sample of a dense 2-vector lattice with value and Jacobian.
struct FieldSample {
    Vec2 val;
    double j00, j01, j10, j11;  // d(val.x)/du, d(val.y)/du rows
    int idx[4];
    double w4[4];
};

inline FieldSample sample_dense(const std::vector<Vec2>& dense, int w, int h,
                                double ux, double uy) {
    ux = std::clamp(ux, 0.0, static_cast<double>(w - 1));
    uy = std::clamp(uy, 0.0, static_cast<double>(h - 1));
    int x0 = std::min(static_cast<int>(ux), w - 2);
    int y0 = std::min(static_cast<int>(uy), h - 2);
    double fx = ux - x0, fy = uy - y0;
    const Vec2& c00 = dense[static_cast<size_t>(y0) * w + x0];
    const Vec2& c10 = dense[static_cast<size_t>(y0) * w + x0 + 1];
    const Vec2& c01 = dense[static_cast<size_t>(y0 + 1) * w + x0];
    const Vec2& c11 = dense[static_cast<size_t>(y0 + 1) * w + x0 + 1];
    FieldSample s;
    Vec2 top = c00 + (c10 - c00) * fx;
    Vec2 bot = c01 + (c11 - c01) * fx;
    s.val = top + (bot - top) * fy;
    s.j00 = (1 - fy) * (c10.x - c00.x) + fy * (c11.x - c01.x);
    s.j10 = (1 - fy) * (c10.y - c00.y) + fy * (c11.y - c01.y);
    s.j01 = (1 - fx) * (c01.x - c00.x) + fx * (c11.x - c10.x);
    s.j11 = (1 - fx) * (c01.y - c00.y) + fx * (c11.y - c10.y);
    s.idx[0] = y0 * w + x0;
    s.idx[1] = y0 * w + x0 + 1;
    s.idx[2] = (y0 + 1) * w + x0;
    s.idx[3] = (y0 + 1) * w + x0 + 1;
    s.w4[0] = (1 - fx) * (1 - fy);
    s.w4[1] = fx * (1 - fy);
    s.w4[2] = (1 - fx) * fy;
    s.w4[3] = fx * fy;
    return s;
}

struct ScalarSample {
    double val, gx, gy;
};

inline ScalarSample sample_scalar(const Image& img, double ux, double uy) {
    ux = std::clamp(ux, 0.0, static_cast<double>(img.width - 1));
    uy = std::clamp(uy, 0.0, static_cast<double>(img.height - 1));
    int x0 = std::min(static_cast<int>(ux), img.width - 2);
    int y0 = std::min(static_cast<int>(uy), img.height - 2);
    double fx = ux - x0, fy = uy - y0;
    double c00 = img.at(x0, y0), c10 = img.at(x0 + 1, y0);
    double c01 = img.at(x0, y0 + 1), c11 = img.at(x0 + 1, y0 + 1);
    ScalarSample s;
    s.val = (c00 * (1 - fx) + c10 * fx) * (1 - fy) + (c01 * (1 - fx) + c11 * fx) * fy;
    s.gx = (1 - fy) * (c10 - c00) + fy * (c11 - c01);
    s.gy = (1 - fx) * (c01 - c00) + fx * (c11 - c10);
    return s;
}

// One pixel covered by both warped views.
struct PixRec {
    int tri_a, tri_b;
    float b1a, b2a, b1b, b2b;
};

struct PairWorkspace {
    std::vector<int> tri_a, tri_b;
    std::vector<float> b1a, b2a, b1b, b2b;
    std::vector<PixRec> recs;
    std::vector<Vec2> dense_a, dense_b, gd_a, gd_b;
    EvalGeometry geo_a, geo_b;
    Mesh hat;  // scratch for M - delta
};

inline void rasterize_view(const EvalGeometry& g, const Canvas& canvas,
                           std::vector<int>& tri, std::vector<float>& b1v,
                           std::vector<float>& b2v) {
    size_t need = static_cast<size_t>(canvas.width) * canvas.height;
    tri.assign(need, -1);
    b1v.resize(need);
    b2v.resize(need);
    for (int y = 0; y < canvas.height; ++y) {
        size_t row = static_cast<size_t>(y) * canvas.width;
        scan_row(g.tris, g.rows[static_cast<size_t>(y)], y, canvas.width,
                 [&](int x, const TriangleMap& t, double b1, double b2) {
                     tri[row + x] = static_cast<int>(&t - g.tris.data());
                     b1v[row + x] = static_cast<float>(b1);
                     b2v[row + x] = static_cast<float>(b2);
                 });
    }
}

inline void collect_pair(const Canvas& canvas, PairWorkspace& ws) {
    rasterize_view(ws.geo_a, canvas, ws.tri_a, ws.b1a, ws.b2a);
    rasterize_view(ws.geo_b, canvas, ws.tri_b, ws.b1b, ws.b2b);
    ws.recs.clear();
    size_t n = static_cast<size_t>(canvas.width) * canvas.height;
    for (size_t k = 0; k < n; ++k)
        if (ws.tri_a[k] >= 0 && ws.tri_b[k] >= 0)
            ws.recs.push_back({ws.tri_a[k], ws.tri_b[k], ws.b1a[k], ws.b2a[k],
                               ws.b1b[k], ws.b2b[k]});
}

// Canvas (at eval scale) that covers both warped views with slack so the
// lattice does not shift as the optimizer moves the meshes.
inline Canvas eval_canvas(const Mesh& a, const Mesh& b, int ds, double margin) {
    double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
    bool first = true;
    for (const Mesh* m : {&a, &b})
        for (const Vec2& p : m->v) {
            double px = p.x / ds, py = p.y / ds;
            if (first) {
                min_x = max_x = px;
                min_y = max_y = py;
                first = false;
            } else {
                min_x = std::min(min_x, px);
                max_x = std::max(max_x, px);
                min_y = std::min(min_y, py);
                max_y = std::max(max_y, py);
            }
        }
    Canvas c;
    c.offset = {std::ceil(-min_x) + margin, std::ceil(-min_y) + margin};
    c.width = static_cast<int>(std::ceil(max_x + c.offset.x) + margin);
    c.height = static_cast<int>(std::ceil(max_y + c.offset.y) + margin);
    return c;
}

// Gradient of a sampled quantity with respect to one view's increment field,
// routed through the warped triangle's vertices.
inline void scatter_vertex_grad(const EvalGeometry& g, int tri, double l0, double b1,
                                double b2, const Vec2& gu, double scale,
                                GridField& out) {
    const auto& bk = g.back[static_cast<size_t>(tri)];
    // G * gu, where G = A^{-T} S^T for this triangle.
    Vec2 gv{bk[0] * gu.x + bk[1] * gu.y, bk[2] * gu.x + bk[3] * gu.y};
    const auto& vi = g.verts[static_cast<size_t>(tri)];
    out.v[static_cast<size_t>(vi[0])] += gv * (scale * l0);
    out.v[static_cast<size_t>(vi[1])] += gv * (scale * b1);
    out.v[static_cast<size_t>(vi[2])] += gv * (scale * b2);
}

}  // namespace detail

// Cross-view consistency of the smoothed dense trajectories inside the
// warped overlap, averaged over the window. `warning` reports frames whose
// warped views never overlap (they contribute zero).
struct OverlapTermValue {
    double value = 0;
    bool warning = false;
};

namespace detail {

struct EvalContext {
    const TrajectoryWindow* w = nullptr;
    GridSpec spec;
    SmoothingWeights weights;  // effective weights (offline zeroing applied)
    SmoothingMode mode = SmoothingMode::online;
    UpsampleTable table;
    Mesh rig;
    std::vector<Canvas> canvas;               // per frame, shared by both views
    std::vector<GridField> abs_ref, abs_tgt;  // re-based positions + window base
    Image qa, qb;                             // eval-scale smoothed luma pair
    mutable PairWorkspace ws;
    mutable GridField shape_scratch;
    mutable std::vector<GridField> path_scratch;
};

inline EvalContext make_context(const TrajectoryWindow& w, const GridSpec& spec,
                                const SmoothingWeights& weights, SmoothingMode mode) {
    weights.validate();
    spec.validate();
    EvalContext cx;
    cx.w = &w;
    cx.spec = spec;
    cx.weights = weights;
    if (mode == SmoothingMode::offline) {
        cx.weights.w_online = 0;
        cx.weights.w_align = 0;
    }
    cx.mode = mode;
    cx.table = upsample_table(spec, cx.weights.eval_downsample);
    cx.rig = rigid_mesh(spec);
    int n = w.n;
    cx.canvas.reserve(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t)
        cx.canvas.push_back(eval_canvas(w.mesh_ref[static_cast<size_t>(t)],
                                        w.mesh_tgt[static_cast<size_t>(t)],
                                        cx.weights.eval_downsample, 8.0));
    for (int t = 0; t < n; ++t) {
        cx.abs_ref.push_back(w.s_ref[static_cast<size_t>(t)] + w.base_ref);
        cx.abs_tgt.push_back(w.s_tgt[static_cast<size_t>(t)] + w.base_tgt);
    }
    if (cx.weights.w_align > 0 && w.frame_ref.width > 0 && w.frame_tgt.width > 0) {
        cx.qa = box3(downsample(luma(w.frame_ref), cx.weights.eval_downsample));
        cx.qb = box3(downsample(luma(w.frame_tgt), cx.weights.eval_downsample));
    }
    cx.shape_scratch = GridField(spec.rows, spec.cols);
    return cx;
}

// Trajectory-consistency term for one frame; optionally accumulates the
// gradient with an external weight folded into `scale`.
inline bool traj_frame_term(const EvalContext& cx, int t, const GridField& del_ref,
                            const GridField& del_tgt, double& value, bool& empty,
                            double scale, GridField* grad_ref, GridField* grad_tgt) {
    PairWorkspace& ws = cx.ws;
    int ds = cx.weights.eval_downsample;
    ws.hat = cx.w->mesh_ref[static_cast<size_t>(t)] - del_ref;
    build_eval_geometry(ws.hat, cx.rig, cx.spec, ds, cx.canvas[static_cast<size_t>(t)],
                        ws.geo_a);
    if (!ws.geo_a.ok) return false;
    ws.hat = cx.w->mesh_tgt[static_cast<size_t>(t)] - del_tgt;
    build_eval_geometry(ws.hat, cx.rig, cx.spec, ds, cx.canvas[static_cast<size_t>(t)],
                        ws.geo_b);
    if (!ws.geo_b.ok) return false;
    collect_pair(cx.canvas[static_cast<size_t>(t)], ws);

    upsample_field(cx.table, cx.abs_ref[static_cast<size_t>(t)] + del_ref, ws.dense_a);
    upsample_field(cx.table, cx.abs_tgt[static_cast<size_t>(t)] + del_tgt, ws.dense_b);

    const double ex = cx.table.ex, ey = cx.table.ey;
    const int lw = cx.table.w, lh = cx.table.h;
    double C = 0, D = 0;
    for (const PixRec& r : ws.recs) {
        const TriangleMap& ta = ws.geo_a.tris[static_cast<size_t>(r.tri_a)];
        const TriangleMap& tb = ws.geo_b.tris[static_cast<size_t>(r.tri_b)];
        Vec2 ua = ta.source_point(r.b1a, r.b2a);
        Vec2 ub = tb.source_point(r.b1b, r.b2b);
        BorderW wa = border_weight(ua.x, ua.y, ex, ey);
        BorderW wb = border_weight(ub.x, ub.y, ex, ey);
        double wgt = wa.b * wb.b;
        if (wgt <= 0) continue;
        FieldSample fa = sample_dense(ws.dense_a, lw, lh, ua.x, ua.y);
        FieldSample fb = sample_dense(ws.dense_b, lw, lh, ub.x, ub.y);
        C += wgt * (std::abs(fa.val.x - fb.val.x) + std::abs(fa.val.y - fb.val.y));
        D += wgt;
    }
    if (D <= 0) {  // empty overlap: contributes zero
        empty = true;
        return true;
    }
    double L = C / D;
    value += L;

    if (grad_ref) {
        ws.gd_a.assign(ws.dense_a.size(), Vec2{});
        ws.gd_b.assign(ws.dense_b.size(), Vec2{});
        double inv_d = scale / D;
        for (const PixRec& r : ws.recs) {
            const TriangleMap& ta = ws.geo_a.tris[static_cast<size_t>(r.tri_a)];
            const TriangleMap& tb = ws.geo_b.tris[static_cast<size_t>(r.tri_b)];
            Vec2 ua = ta.source_point(r.b1a, r.b2a);
            Vec2 ub = tb.source_point(r.b1b, r.b2b);
            BorderW wa = border_weight(ua.x, ua.y, ex, ey);
            BorderW wb = border_weight(ub.x, ub.y, ex, ey);
            double wgt = wa.b * wb.b;
            if (wgt <= 0) continue;
            FieldSample fa = sample_dense(ws.dense_a, lw, lh, ua.x, ua.y);
            FieldSample fb = sample_dense(ws.dense_b, lw, lh, ub.x, ub.y);
            double dx = fa.val.x - fb.val.x, dy = fa.val.y - fb.val.y;
            double sx = dx > 0 ? 1.0 : (dx < 0 ? -1.0 : 0.0);
            double sy = dy > 0 ? 1.0 : (dy < 0 ? -1.0 : 0.0);
            double m = std::abs(dx) + std::abs(dy);
            // Values: the dense fields carry the increment directly.
            for (int c = 0; c < 4; ++c) {
                ws.gd_a[static_cast<size_t>(fa.idx[c])] +=
                    Vec2{sx, sy} * (inv_d * wgt * fa.w4[c]);
                ws.gd_b[static_cast<size_t>(fb.idx[c])] -=
                    Vec2{sx, sy} * (inv_d * wgt * fb.w4[c]);
            }
            // Geometry: source points move against the increment, scaled by
            // the eval factor; the soft mask moves with them.
            double mask_coef = m - L;
            Vec2 gu_a{inv_d * (wgt * (sx * fa.j00 + sy * fa.j10) + mask_coef * wb.b * wa.gx),
                      inv_d * (wgt * (sx * fa.j01 + sy * fa.j11) + mask_coef * wb.b * wa.gy)};
            Vec2 gu_b{inv_d * (-wgt * (sx * fb.j00 + sy * fb.j10) + mask_coef * wa.b * wb.gx),
                      inv_d * (-wgt * (sx * fb.j01 + sy * fb.j11) + mask_coef * wa.b * wb.gy)};
            double l0a = 1.0 - r.b1a - r.b2a, l0b = 1.0 - r.b1b - r.b2b;
            scatter_vertex_grad(ws.geo_a, r.tri_a, l0a, r.b1a, r.b2a, gu_a,
                                1.0 / ds, *grad_ref);
            scatter_vertex_grad(ws.geo_b, r.tri_b, l0b, r.b1b, r.b2b, gu_b,
                                1.0 / ds, *grad_tgt);
        }
        // Value-path gradients fold back through the upsampling.
        fold_dense_gradient(cx.table, ws.gd_a, *grad_ref);
        fold_dense_gradient(cx.table, ws.gd_b, *grad_tgt);
    }
    return true;
}

// Photometric alignment of the newest frame pair under the smoothed warps.
inline bool align_term(const EvalContext& cx, const GridField& del_ref,
                       const GridField& del_tgt, double& value, bool& empty,
                       double scale, GridField* grad_ref, GridField* grad_tgt) {
    PairWorkspace& ws = cx.ws;
    int ds = cx.weights.eval_downsample;
    int t = cx.w->n - 1;
    ws.hat = cx.w->mesh_ref[static_cast<size_t>(t)] - del_ref;
    build_eval_geometry(ws.hat, cx.rig, cx.spec, ds, cx.canvas[static_cast<size_t>(t)],
                        ws.geo_a);
    if (!ws.geo_a.ok) return false;
    ws.hat = cx.w->mesh_tgt[static_cast<size_t>(t)] - del_tgt;
    build_eval_geometry(ws.hat, cx.rig, cx.spec, ds, cx.canvas[static_cast<size_t>(t)],
                        ws.geo_b);
    if (!ws.geo_b.ok) return false;
    collect_pair(cx.canvas[static_cast<size_t>(t)], ws);

    const double ex = cx.table.ex, ey = cx.table.ey;
    double C = 0, D = 0;
    for (const PixRec& r : ws.recs) {
        const TriangleMap& ta = ws.geo_a.tris[static_cast<size_t>(r.tri_a)];
        const TriangleMap& tb = ws.geo_b.tris[static_cast<size_t>(r.tri_b)];
        Vec2 ua = ta.source_point(r.b1a, r.b2a);
        Vec2 ub = tb.source_point(r.b1b, r.b2b);
        BorderW wa = border_weight(ua.x, ua.y, ex, ey);
        BorderW wb = border_weight(ub.x, ub.y, ex, ey);
        double wgt = wa.b * wb.b;
        if (wgt <= 0) continue;
        ScalarSample ia = sample_scalar(cx.qa, ua.x, ua.y);
        ScalarSample ib = sample_scalar(cx.qb, ub.x, ub.y);
        C += wgt * std::abs(ia.val - ib.val);
        D += wgt;
    }
    if (D <= 0) {
        empty = true;
        return true;
    }
    double L = C / D;
    value += L;

    if (grad_ref) {
        double inv_d = scale / D;
        for (const PixRec& r : ws.recs) {
            const TriangleMap& ta = ws.geo_a.tris[static_cast<size_t>(r.tri_a)];
            const TriangleMap& tb = ws.geo_b.tris[static_cast<size_t>(r.tri_b)];
            Vec2 ua = ta.source_point(r.b1a, r.b2a);
            Vec2 ub = tb.source_point(r.b1b, r.b2b);
            BorderW wa = border_weight(ua.x, ua.y, ex, ey);
            BorderW wb = border_weight(ub.x, ub.y, ex, ey);
            double wgt = wa.b * wb.b;
            if (wgt <= 0) continue;
            ScalarSample ia = sample_scalar(cx.qa, ua.x, ua.y);
            ScalarSample ib = sample_scalar(cx.qb, ub.x, ub.y);
            double diff = ia.val - ib.val;
            double s = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
            double m = std::abs(diff);
            double mask_coef = m - L;
            Vec2 gu_a{inv_d * (wgt * s * ia.gx + mask_coef * wb.b * wa.gx),
                      inv_d * (wgt * s * ia.gy + mask_coef * wb.b * wa.gy)};
            Vec2 gu_b{inv_d * (-wgt * s * ib.gx + mask_coef * wa.b * wb.gx),
                      inv_d * (-wgt * s * ib.gy + mask_coef * wa.b * wb.gy)};
            double l0a = 1.0 - r.b1a - r.b2a, l0b = 1.0 - r.b1b - r.b2b;
            scatter_vertex_grad(ws.geo_a, r.tri_a, l0a, r.b1a, r.b2a, gu_a,
                                1.0 / ds, *grad_ref);
            scatter_vertex_grad(ws.geo_b, r.tri_b, l0b, r.b1b, r.b2b, gu_b,
                                1.0 / ds, *grad_tgt);
        }
    }
    return true;
}

inline double unit_or_zero(const Vec2& v, Vec2& dir) {
    double r = v.norm();
    dir = r > 0 ? v / r : Vec2{0, 0};
    return r;
}

// Full objective, optionally with its gradient. Returns +inf when a
// candidate increment folds some warp (the step is rejected upstream).
inline double eval_window(const EvalContext& cx, const SmoothingIncrement& delta,
                          LossBreakdown& bd, SmoothingIncrement* grad) {
    const TrajectoryWindow& w = *cx.w;
    const SmoothingWeights& wt = cx.weights;
    const int n = w.n;
    const bool squared = wt.squared_norms;
    bd = LossBreakdown{};
    if (grad) *grad = zero_increment(n, cx.spec);

    // Distance from the raw trajectory.
    for (int side = 0; side < 2; ++side) {
        const auto& dels = side ? delta.d_tgt : delta.d_ref;
        auto* gr = grad ? (side ? &grad->d_tgt : &grad->d_ref) : nullptr;
        for (int t = 0; t < n; ++t)
            for (size_t v = 0; v < dels[static_cast<size_t>(t)].count(); ++v) {
                const Vec2& d = dels[static_cast<size_t>(t)].v[v];
                if (squared) {
                    bd.data += d.norm2();
                    if (gr) (*gr)[static_cast<size_t>(t)].v[v] += d * (2.0 * wt.w_data);
                } else {
                    Vec2 dir;
                    bd.data += unit_or_zero(d, dir);
                    if (gr) (*gr)[static_cast<size_t>(t)].v[v] += dir * wt.w_data;
                }
            }
    }

    // Temporal smoothness of the offset trajectories.
    const int k = static_cast<int>(wt.alpha.size());
    for (int side = 0; side < 2; ++side) {
        const auto& raws = side ? w.s_tgt : w.s_ref;
        const auto& dels = side ? delta.d_tgt : delta.d_ref;
        auto* gr = grad ? (side ? &grad->d_tgt : &grad->d_ref) : nullptr;
        for (int m = k; m + k < n; ++m)
            for (int i = 1; i <= k; ++i) {
                double a = wt.alpha[static_cast<size_t>(i) - 1];
                const size_t tp = static_cast<size_t>(m + i), tm = static_cast<size_t>(m - i),
                             tc = static_cast<size_t>(m);
                for (size_t v = 0; v < raws[tc].count(); ++v) {
                    Vec2 d = (raws[tp].v[v] + dels[tp].v[v]) + (raws[tm].v[v] + dels[tm].v[v]) -
                             2.0 * (raws[tc].v[v] + dels[tc].v[v]);
                    if (squared) {
                        bd.smooth += a * d.norm2();
                        if (gr) {
                            Vec2 g = d * (2.0 * a * wt.w_smooth);
                            (*gr)[tp].v[v] += g;
                            (*gr)[tm].v[v] += g;
                            (*gr)[tc].v[v] -= g * 2.0;
                        }
                    } else {
                        Vec2 dir;
                        bd.smooth += a * unit_or_zero(d, dir);
                        if (gr) {
                            Vec2 g = dir * (a * wt.w_smooth);
                            (*gr)[tp].v[v] += g;
                            (*gr)[tm].v[v] += g;
                            (*gr)[tc].v[v] -= g * 2.0;
                        }
                    }
                }
            }
    }

    // Distortion of the smoothed warps.
    if (wt.w_shape > 0) {
        for (int side = 0; side < 2; ++side) {
            const auto& meshes = side ? w.mesh_tgt : w.mesh_ref;
            const auto& dels = side ? delta.d_tgt : delta.d_ref;
            auto* gr = grad ? (side ? &grad->d_tgt : &grad->d_ref) : nullptr;
            for (int t = 0; t < n; ++t) {
                GridField motion = meshes[static_cast<size_t>(t)] - cx.rig -
                                   dels[static_cast<size_t>(t)];
                if (gr) {
                    double e = distortion_energy_with_gradient(motion, cx.spec,
                                                               cx.shape_scratch,
                                                               wt.distortion);
                    bd.shape += e / n;
                    double sc = wt.w_shape / n;
                    for (size_t v = 0; v < motion.count(); ++v)
                        (*gr)[static_cast<size_t>(t)].v[v] -= cx.shape_scratch.v[v] * sc;
                } else {
                    bd.shape += distortion_energy(motion, cx.spec, wt.distortion) / n;
                }
            }
        }
    }

    // Agreement with committed positions at the shared frames.
    if (wt.w_online > 0 && n > 1) {
        double inv = 1.0 / (n - 1);
        for (int t = 0; t + 1 < n; ++t) {
            if (!w.anchor_valid[static_cast<size_t>(t)]) continue;
            for (int side = 0; side < 2; ++side) {
                const GridField& raw = side ? w.s_tgt[static_cast<size_t>(t)]
                                            : w.s_ref[static_cast<size_t>(t)];
                const GridField& del = side ? delta.d_tgt[static_cast<size_t>(t)]
                                            : delta.d_ref[static_cast<size_t>(t)];
                const GridField& anc = side ? w.anchor_tgt[static_cast<size_t>(t)]
                                            : w.anchor_ref[static_cast<size_t>(t)];
                auto* gr = grad ? (side ? &grad->d_tgt : &grad->d_ref) : nullptr;
                for (size_t v = 0; v < raw.count(); ++v) {
                    Vec2 d = raw.v[v] + del.v[v] - anc.v[v];
                    if (squared) {
                        bd.online += inv * d.norm2();
                        if (gr)
                            (*gr)[static_cast<size_t>(t)].v[v] +=
                                d * (2.0 * inv * wt.w_online);
                    } else {
                        Vec2 dir;
                        bd.online += inv * unit_or_zero(d, dir);
                        if (gr)
                            (*gr)[static_cast<size_t>(t)].v[v] += dir * (inv * wt.w_online);
                    }
                }
            }
        }
    }

    // Cross-view consistency of the dense trajectories.
    if (wt.w_traj > 0) {
        for (int t = 0; t < n; ++t) {
            double val = 0;
            bool empty = false;
            bool ok = traj_frame_term(
                cx, t, delta.d_ref[static_cast<size_t>(t)],
                delta.d_tgt[static_cast<size_t>(t)], val, empty, wt.w_traj / n,
                grad ? &grad->d_ref[static_cast<size_t>(t)] : nullptr,
                grad ? &grad->d_tgt[static_cast<size_t>(t)] : nullptr);
            if (!ok) {
                bd.total = std::numeric_limits<double>::infinity();
                return bd.total;
            }
            if (empty) bd.overlap_warning = true;
            bd.traj += val / n;
        }
    }

    // Photometric alignment of the newest pair.
    if (wt.w_align > 0 && cx.qa.width > 0 && cx.qb.width > 0) {
        double val = 0;
        bool empty = false;
        bool ok = align_term(cx, delta.d_ref[static_cast<size_t>(n - 1)],
                             delta.d_tgt[static_cast<size_t>(n - 1)], val, empty,
                             wt.w_align,
                             grad ? &grad->d_ref[static_cast<size_t>(n - 1)] : nullptr,
                             grad ? &grad->d_tgt[static_cast<size_t>(n - 1)] : nullptr);
        if (!ok) {
            bd.total = std::numeric_limits<double>::infinity();
            return bd.total;
        }
        bd.align = val;
        if (empty) bd.overlap_warning = true;
    }

    bd.total = wt.w_data * bd.data + wt.w_smooth * bd.smooth + wt.w_shape * bd.shape +
               wt.w_online * bd.online + wt.w_traj * bd.traj + wt.w_align * bd.align;
    return bd.total;
}

}  // namespace detail

// ------------------------------------------------------------- public API

inline OverlapTermValue loss_trajectory_consistency(const TrajectoryWindow& w,
                                                    const SmoothingIncrement& delta,
                                                    const GridSpec& spec,
                                                    const SmoothingWeights& weights = {}) {
    auto cx = detail::make_context(w, spec, weights, SmoothingMode::offline);
    OverlapTermValue out;
    for (int t = 0; t < w.n; ++t) {
        double val = 0;
        bool empty = false;
        if (!detail::traj_frame_term(cx, t, delta.d_ref[static_cast<size_t>(t)],
                                     delta.d_tgt[static_cast<size_t>(t)], val, empty,
                                     1.0, nullptr, nullptr))
            throw FoldedMesh("trajectory consistency: increment folds a warp mesh");
        if (empty) out.warning = true;
        out.value += val / w.n;
    }
    return out;
}

inline OverlapTermValue loss_online_align(const TrajectoryWindow& w,
                                          const SmoothingIncrement& delta,
                                          const GridSpec& spec,
                                          const SmoothingWeights& weights = {}) {
    auto cx = detail::make_context(w, spec, weights, SmoothingMode::online);
    if (cx.qa.width == 0 || cx.qb.width == 0)
        throw Error("alignment term needs the window's frame pair");
    OverlapTermValue out;
    bool empty = false;
    if (!detail::align_term(cx, delta.d_ref[static_cast<size_t>(w.n - 1)],
                            delta.d_tgt[static_cast<size_t>(w.n - 1)], out.value, empty,
                            1.0, nullptr, nullptr))
        throw FoldedMesh("alignment term: increment folds a warp mesh");
    out.warning = empty;
    return out;
}

inline LossBreakdown loss_total(const TrajectoryWindow& w, const SmoothingIncrement& delta,
                                const GridSpec& spec, const SmoothingWeights& weights,
                                SmoothingMode mode) {
    auto cx = detail::make_context(w, spec, weights, mode);
    LossBreakdown bd;
    detail::eval_window(cx, delta, bd, nullptr);
    return bd;
}

inline LossBreakdown loss_gradient(const TrajectoryWindow& w, const SmoothingIncrement& delta,
                                   const GridSpec& spec, const SmoothingWeights& weights,
                                   SmoothingMode mode, SmoothingIncrement& grad) {
    auto cx = detail::make_context(w, spec, weights, mode);
    LossBreakdown bd;
    detail::eval_window(cx, delta, bd, &grad);
    return bd;
}

// Minimize the window objective over the per-frame offsets with a monotone,
// per-coordinate-scaled descent. Deterministic for fixed inputs; an optional
// warm start (the previous window's solution, shifted) speeds convergence.
inline SmoothingIncrement smooth_window(const TrajectoryWindow& w, const GridSpec& spec,
                                        const SmoothingWeights& weights,
                                        const OptimizerConfig& opt, SmoothingMode mode,
                                        const SmoothingIncrement* warm = nullptr,
                                        LossBreakdown* final_loss = nullptr) {
    auto cx = detail::make_context(w, spec, weights, mode);
    const int n = w.n;
    SmoothingIncrement delta =
        warm && static_cast<int>(warm->d_ref.size()) == n ? *warm : zero_increment(n, spec);

    LossBreakdown bd;
    SmoothingIncrement grad = zero_increment(n, spec);
    double loss = detail::eval_window(cx, delta, bd, &grad);
    if (!std::isfinite(loss)) {
        // A folding warm start is discarded; raw meshes must not fold.
        delta = zero_increment(n, spec);
        loss = detail::eval_window(cx, delta, bd, &grad);
        if (!std::isfinite(loss))
            throw FoldedMesh("smoothing window: raw warp meshes are folded");
    }

    // Per-coordinate scale memory (decayed max of gradient magnitudes).
    SmoothingIncrement vmem = zero_increment(n, spec);

    double step = opt.initial_step;
    SmoothingIncrement cand = delta;
    LossBreakdown cbd;
    for (int iter = 0; iter < opt.max_iters; ++iter) {
        for (int side = 0; side < 2; ++side) {
            auto& vm = side ? vmem.d_tgt : vmem.d_ref;
            auto& gr = side ? grad.d_tgt : grad.d_ref;
            for (int t = 0; t < n; ++t)
                for (size_t v = 0; v < vm[static_cast<size_t>(t)].count(); ++v) {
                    Vec2& m = vm[static_cast<size_t>(t)].v[v];
                    const Vec2& g = gr[static_cast<size_t>(t)].v[v];
                    m.x = std::max(0.95 * m.x, std::abs(g.x));
                    m.y = std::max(0.95 * m.y, std::abs(g.y));
                }
        }
        bool accepted = false;
        double closs = loss;
        while (step >= 1e-7) {
            for (int side = 0; side < 2; ++side) {
                auto& cd = side ? cand.d_tgt : cand.d_ref;
                auto& dd = side ? delta.d_tgt : delta.d_ref;
                auto& gr = side ? grad.d_tgt : grad.d_ref;
                auto& vm = side ? vmem.d_tgt : vmem.d_ref;
                for (int t = 0; t < n; ++t)
                    for (size_t v = 0; v < cd[static_cast<size_t>(t)].count(); ++v) {
                        const Vec2& g = gr[static_cast<size_t>(t)].v[v];
                        const Vec2& m = vm[static_cast<size_t>(t)].v[v];
                        Vec2 dir{m.x > 1e-12 ? g.x / m.x : 0.0,
                                 m.y > 1e-12 ? g.y / m.y : 0.0};
                        cd[static_cast<size_t>(t)].v[v] =
                            dd[static_cast<size_t>(t)].v[v] - dir * step;
                    }
            }
            closs = detail::eval_window(cx, cand, cbd, nullptr);
            if (closs < loss) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        double rel = (loss - closs) / std::max(std::abs(loss), 1e-12);
        std::swap(delta, cand);
        loss = closs;
        bd = cbd;
        if (rel < opt.rel_decrease) break;
        detail::eval_window(cx, delta, bd, &grad);
        step = std::min(step * 1.3, 1.0);
    }
    if (final_loss) *final_loss = bd;
    return delta;
}

// Whole-sequence smoothing: one window spanning every frame (padded to odd
// length by repeating the last frame), then every smoothed warp emitted.
struct SmoothedSequence {
    std::vector<Mesh> mesh_ref, mesh_tgt;     // smoothed warps per frame
    std::vector<GridField> s_ref, s_tgt;      // smoothed trajectories per frame
    LossBreakdown final_loss;
};

inline SmoothedSequence smooth_offline(const Trajectory& traj_ref, const Trajectory& traj_tgt,
                                       const std::vector<Mesh>& meshes_ref,
                                       const std::vector<Mesh>& meshes_tgt,
                                       const GridSpec& spec,
                                       const SmoothingWeights& weights = {},
                                       const OptimizerConfig& opt = {}) {
    int T = traj_ref.length();
    if (traj_tgt.length() != T || static_cast<int>(meshes_ref.size()) != T ||
        static_cast<int>(meshes_tgt.size()) != T)
        throw ShapeMismatch("offline smoothing: per-view histories differ in length");
    if (T < 1) throw Error("offline smoothing needs at least one frame");

    SmoothedSequence out;
    if (T < 3) {  // too short to smooth; pass through
        out.mesh_ref = meshes_ref;
        out.mesh_tgt = meshes_tgt;
        out.s_ref = traj_ref.S;
        out.s_tgt = traj_tgt.S;
        return out;
    }

    Trajectory pr = traj_ref, pt = traj_tgt;
    std::vector<Mesh> mr = meshes_ref, mt = meshes_tgt;
    if (T % 2 == 0) {  // pad to odd length by repeating the last frame
        pr.S.push_back(pr.S.back());
        pt.S.push_back(pt.S.back());
        mr.push_back(mr.back());
        mt.push_back(mt.back());
    }
    int n = pr.length();
    TrajectoryWindow w = build_window(n, n, pr, pt, mr, mt, {}, {}, Image{}, Image{});
    SmoothingIncrement delta = smooth_window(w, spec, weights, opt, SmoothingMode::offline,
                                             nullptr, &out.final_loss);
    for (int t = 0; t < T; ++t) {
        out.mesh_ref.push_back(meshes_ref[static_cast<size_t>(t)] -
                               delta.d_ref[static_cast<size_t>(t)]);
        out.mesh_tgt.push_back(meshes_tgt[static_cast<size_t>(t)] -
                               delta.d_tgt[static_cast<size_t>(t)]);
        out.s_ref.push_back(traj_ref.S[static_cast<size_t>(t)] +
                            delta.d_ref[static_cast<size_t>(t)]);
        out.s_tgt.push_back(traj_tgt.S[static_cast<size_t>(t)] +
                            delta.d_tgt[static_cast<size_t>(t)]);
    }
    return out;
}

// Streaming smoother: one window per incoming frame, warm-started from the
// previous solution; commits absolute smoothed positions so the next window
// can hold to them, and emits the newest frame's smoothed warps.
struct OnlineSmoother {
    GridSpec spec;
    SmoothingWeights weights{};
    OptimizerConfig opt{};
    int n = 7;

    std::vector<GridField> committed_ref, committed_tgt;

    struct StepResult {
        Mesh mesh_ref, mesh_tgt;
        LossBreakdown window_loss;
    };

    StepResult step(const TrajectoryWindow& w) {
        if (w.n != n) throw ShapeMismatch("online smoothing: unexpected window length");
        SmoothingIncrement warm;
        const SmoothingIncrement* wp = nullptr;
        if (has_prev_ && w.xi == prev_xi_ + 1) {
            warm = zero_increment(n, spec);
            for (int t = 0; t + 1 < n; ++t) {
                warm.d_ref[static_cast<size_t>(t)] = prev_.d_ref[static_cast<size_t>(t) + 1];
                warm.d_tgt[static_cast<size_t>(t)] = prev_.d_tgt[static_cast<size_t>(t) + 1];
            }
            warm.d_ref[static_cast<size_t>(n) - 1] = prev_.d_ref[static_cast<size_t>(n) - 1];
            warm.d_tgt[static_cast<size_t>(n) - 1] = prev_.d_tgt[static_cast<size_t>(n) - 1];
            wp = &warm;
        }
        StepResult r;
        SmoothingIncrement delta =
            smooth_window(w, spec, weights, opt, SmoothingMode::online, wp, &r.window_loss);

        if (static_cast<int>(committed_ref.size()) < w.xi) {
            committed_ref.resize(static_cast<size_t>(w.xi));
            committed_tgt.resize(static_cast<size_t>(w.xi));
        }
        for (int t = 1; t <= n; ++t) {
            size_t idx = static_cast<size_t>(w.xi - n + t) - 1;
            committed_ref[idx] = w.s_ref[static_cast<size_t>(t) - 1] +
                                 delta.d_ref[static_cast<size_t>(t) - 1] + w.base_ref;
            committed_tgt[idx] = w.s_tgt[static_cast<size_t>(t) - 1] +
                                 delta.d_tgt[static_cast<size_t>(t) - 1] + w.base_tgt;
        }
        r.mesh_ref = w.mesh_ref[static_cast<size_t>(n) - 1] -
                     delta.d_ref[static_cast<size_t>(n) - 1];
        r.mesh_tgt = w.mesh_tgt[static_cast<size_t>(n) - 1] -
                     delta.d_tgt[static_cast<size_t>(n) - 1];
        prev_ = std::move(delta);
        has_prev_ = true;
        prev_xi_ = w.xi;
        return r;
    }

   private:
    SmoothingIncrement prev_;
    bool has_prev_ = false;
    int prev_xi_ = 0;
};

}  // namespace stabweave
