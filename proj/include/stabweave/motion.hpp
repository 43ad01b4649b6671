#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "stabweave/core.hpp"
#include "stabweave/geometry.hpp"
#include "stabweave/image.hpp"
#include "stabweave/mesh.hpp"

namespace stabweave {

struct Correspondence {
    Vec2 p;        // point in frame A
    Vec2 q;        // matching point in frame B
    double score;  // ZNCC in [-1, 1]
};

struct EstimatorConfig {
    int match_grid = 8;      // cells per axis
    int patch = 13;          // odd patch size, px
    int search_radius = 40;  // px (temporal estimation runs with a smaller one)
    double zncc_min = 0.5;
    int ransac_iters = 512;
    double ransac_inlier_px = 2.0;
    int min_inliers = 10;
    double beta = 0.5;
    std::uint64_t seed = 0x5eedf00d;

    void validate() const {
        if (match_grid < 1 || patch < 3 || search_radius < 1 || ransac_iters < 1 ||
            min_inliers < 4)
            throw Error("estimator config fields must be positive");
        if (patch % 2 == 0) throw Error("patch size must be odd");
        if (!(zncc_min > 0.0 && zncc_min < 1.0)) throw Error("zncc_min must be in (0,1)");
        if (!(beta >= 0.0 && beta <= 1.0)) throw Error("beta must be in [0,1]");
    }
    EstimatorConfig with_radius(int r) const {
        EstimatorConfig c = *this;
        c.search_radius = r;
        return c;
    }
};

namespace detail {

// Summed-area tables of value and value^2 for O(1) patch statistics.
struct Integrals {
    int w, h;
    std::vector<double> s1, s2;

    explicit Integrals(const Image& g)
        : w(g.width), h(g.height),
          s1(static_cast<size_t>(w + 1) * (h + 1), 0.0),
          s2(static_cast<size_t>(w + 1) * (h + 1), 0.0) {
        for (int y = 0; y < h; ++y) {
            double row1 = 0.0, row2 = 0.0;
            for (int x = 0; x < w; ++x) {
                double v = g.at(x, y);
                row1 += v;
                row2 += v * v;
                size_t up = static_cast<size_t>(y) * (w + 1) + (x + 1);
                s1[up + w + 1] = s1[up] + row1;
                s2[up + w + 1] = s2[up] + row2;
            }
        }
    }
    // Sums over [x0,x1) x [y0,y1).
    double sum(int x0, int y0, int x1, int y1) const {
        return s1[idx(x1, y1)] - s1[idx(x0, y1)] - s1[idx(x1, y0)] + s1[idx(x0, y0)];
    }
    double sum_sq(int x0, int y0, int x1, int y1) const {
        return s2[idx(x1, y1)] - s2[idx(x0, y1)] - s2[idx(x1, y0)] + s2[idx(x0, y0)];
    }

  private:
    size_t idx(int x, int y) const { return static_cast<size_t>(y) * (w + 1) + x; }
};

inline bool project(const Eigen::Matrix3d& m, const Vec2& p, Vec2& out) {
    double w = m(2, 0) * p.x + m(2, 1) * p.y + m(2, 2);
    if (std::abs(w) <= 1e-12) return false;
    out.x = (m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2)) / w;
    out.y = (m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2)) / w;
    return true;
}

}  // namespace detail

// Grid-cell block matching: one correspondence per cell, taken at the cell's
// highest-variance patch and displaced to the exhaustive ZNCC maximum within
// search_radius. Ties prefer the smallest displacement, then lexicographic
// (dx, dy). Sub-pixel refinement by 1-D parabola per axis, skipped when the
// integer peak is already a perfect match (ZNCC ~ 1).
inline std::vector<Correspondence> match_grid(const Image& a, const Image& b,
                                              const EstimatorConfig& cfg) {
    cfg.validate();
    if (a.width != b.width || a.height != b.height)
        throw SizeMismatch("match_grid: frames differ in size");
    const Image ga = luma(a);
    const Image gb = luma(b);
    const detail::Integrals ia(ga), ib(gb);
    const int W = a.width, H = a.height;
    const int half = cfg.patch / 2;
    const int n = cfg.patch * cfg.patch;
    const int R = cfg.search_radius;

    // Per-center patch std-dev of frame b, hoisted out of the search loop;
    // 0 marks centers whose patch is flat or out of bounds.
    std::vector<float> sigma_b(static_cast<size_t>(W) * H, 0.0f);
    for (int y = half; y < H - half; ++y)
        for (int x = half; x < W - half; ++x) {
            double s = ib.sum(x - half, y - half, x + half + 1, y + half + 1);
            double s2 = ib.sum_sq(x - half, y - half, x + half + 1, y + half + 1);
            double var = (s2 - s * s / n) / n;
            if (var > 1e-9) sigma_b[static_cast<size_t>(y) * W + x] = static_cast<float>(std::sqrt(var));
        }

    // b pixels with tail slack so padded 4-lane rows may read past the last
    // patch column; the padding multiplies against template zeros.
    const int row16 = (cfg.patch + 3) & ~3;
    std::vector<float> bbuf(gb.px);
    bbuf.resize(static_cast<size_t>(W) * H + row16, 0.0f);
    std::vector<float> patch(static_cast<size_t>(cfg.patch) * row16, 0.0f);  // mean-removed

    std::vector<Correspondence> out;

    auto zncc_at = [&](int px, int py, double denom_a, int dx, int dy, double& score) {
        int qx = px + dx, qy = py + dy;
        if (qx < half || qy < half || qx > W - 1 - half || qy > H - 1 - half) return false;
        float sb = sigma_b[static_cast<size_t>(qy) * W + qx];
        if (sb == 0.0f) return false;
        float lane[4] = {0, 0, 0, 0};
        for (int yy = 0; yy < cfg.patch; ++yy) {
            const float* prow = &patch[static_cast<size_t>(yy) * row16];
            const float* brow = &bbuf[(static_cast<size_t>(qy - half + yy) * W + qx - half)];
            for (int g = 0; g < row16; g += 4)
                for (int j = 0; j < 4; ++j) lane[j] += prow[g + j] * brow[g + j];
        }
        double num = (static_cast<double>(lane[0]) + lane[1]) +
                     (static_cast<double>(lane[2]) + lane[3]);
        score = num / (n * denom_a * sb);
        return true;
    };

    for (int cy = 0; cy < cfg.match_grid; ++cy)
        for (int cx = 0; cx < cfg.match_grid; ++cx) {
            int x_lo = std::max(W * cx / cfg.match_grid, half);
            int x_hi = std::min(W * (cx + 1) / cfg.match_grid, W - half);
            int y_lo = std::max(H * cy / cfg.match_grid, half);
            int y_hi = std::min(H * (cy + 1) / cfg.match_grid, H - half);
            if (x_lo >= x_hi || y_lo >= y_hi) continue;

            // Highest-contrast patch center in this cell.
            double best_var = -1.0;
            int px = 0, py = 0;
            for (int y = y_lo; y < y_hi; ++y)
                for (int x = x_lo; x < x_hi; ++x) {
                    double s = ia.sum(x - half, y - half, x + half + 1, y + half + 1);
                    double s2 = ia.sum_sq(x - half, y - half, x + half + 1, y + half + 1);
                    double var = (s2 - s * s / n) / n;
                    if (var > best_var) {
                        best_var = var;
                        px = x;
                        py = y;
                    }
                }
            if (best_var <= 1e-6) continue;  // flat cell, ZNCC undefined

            double mean_a = ia.sum(px - half, py - half, px + half + 1, py + half + 1) / n;
            for (int yy = 0; yy < cfg.patch; ++yy)
                for (int xx = 0; xx < cfg.patch; ++xx)
                    patch[static_cast<size_t>(yy) * row16 + xx] =
                        ga.at(px - half + xx, py - half + yy) - static_cast<float>(mean_a);
            double denom_a = std::sqrt(best_var);

            double best_score = -2.0;
            int bdx = 0, bdy = 0;
            long best_mag = 0;
            for (int dy = -R; dy <= R; ++dy)
                for (int dx = -R; dx <= R; ++dx) {
                    double score;
                    if (!zncc_at(px, py, denom_a, dx, dy, score)) continue;
                    long mag = static_cast<long>(dx) * dx + static_cast<long>(dy) * dy;
                    bool better =
                        score > best_score ||
                        (score == best_score &&
                         (mag < best_mag ||
                          (mag == best_mag && (dx < bdx || (dx == bdx && dy < bdy)))));
                    if (better) {
                        best_score = score;
                        bdx = dx;
                        bdy = dy;
                        best_mag = mag;
                    }
                }
            if (best_score < cfg.zncc_min) continue;

            double sub_x = 0.0, sub_y = 0.0;
            if (best_score <= 0.9999) {  // a perfect integer match needs no refinement
                double fm, fp;
                if (std::abs(bdx) < R && zncc_at(px, py, denom_a, bdx - 1, bdy, fm) &&
                    zncc_at(px, py, denom_a, bdx + 1, bdy, fp)) {
                    double den = fm - 2.0 * best_score + fp;
                    if (den < -1e-12) sub_x = std::clamp(0.5 * (fm - fp) / den, -0.5, 0.5);
                }
                if (std::abs(bdy) < R && zncc_at(px, py, denom_a, bdx, bdy - 1, fm) &&
                    zncc_at(px, py, denom_a, bdx, bdy + 1, fp)) {
                    double den = fm - 2.0 * best_score + fp;
                    if (den < -1e-12) sub_y = std::clamp(0.5 * (fm - fp) / den, -0.5, 0.5);
                }
            }
            out.push_back({{static_cast<double>(px), static_cast<double>(py)},
                           {px + bdx + sub_x, py + bdy + sub_y},
                           best_score});
        }

    if (out.size() < 8)
        throw InsufficientTexture("match_grid found only " + std::to_string(out.size()) +
                                  " usable cells (need 8)");
    return out;
}

struct RansacResult {
    Homography3x3 h;             // maps p-side points onto q-side points
    std::vector<char> inliers;   // per input correspondence
    int inlier_count = 0;
};

inline RansacResult ransac_homography(const std::vector<Correspondence>& corrs,
                                      const EstimatorConfig& cfg, ImageSize size) {
    cfg.validate();
    const int n = static_cast<int>(corrs.size());
    if (n < 4) throw NoConsensus("ransac_homography needs at least 4 correspondences");
    SplitMix64 rng(cfg.seed);

    auto classify = [&](const Eigen::Matrix3d& m, std::vector<char>& mask, double& err_sum) {
        int count = 0;
        err_sum = 0.0;
        for (int i = 0; i < n; ++i) {
            Vec2 r;
            bool ok = detail::project(m, corrs[i].p, r) &&
                      (r - corrs[i].q).norm() <= cfg.ransac_inlier_px;
            mask[i] = ok ? 1 : 0;
            if (ok) {
                ++count;
                err_sum += (r - corrs[i].q).norm();
            }
        }
        return count;
    };
    auto fit = [&](const std::vector<char>& mask, Eigen::Matrix3d& m) {
        std::vector<Vec2> ps, qs;
        for (int i = 0; i < n; ++i)
            if (mask[i]) {
                ps.push_back(corrs[i].p);
                qs.push_back(corrs[i].q);
            }
        if (ps.size() < 4) return false;
        m = detail::dlt_homography(ps.data(), qs.data(), static_cast<int>(ps.size()));
        return true;
    };

    int best_count = -1;
    double best_err = 0.0;
    Eigen::Matrix3d best_m = Eigen::Matrix3d::Identity();
    std::vector<char> mask(static_cast<size_t>(n));
    for (int iter = 0; iter < cfg.ransac_iters; ++iter) {
        int idx[4];
        for (int k = 0; k < 4; ++k) {
            bool dup;
            do {
                idx[k] = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
                dup = false;
                for (int j = 0; j < k; ++j) dup |= idx[j] == idx[k];
            } while (dup);
        }
        std::array<Vec2, 4> ps, qs;
        for (int k = 0; k < 4; ++k) {
            ps[k] = corrs[idx[k]].p;
            qs[k] = corrs[idx[k]].q;
        }
        if (!detail::in_general_position(ps, 1e-9) || !detail::in_general_position(qs, 1e-9))
            continue;
        Eigen::Matrix3d m;
        try {
            m = detail::dlt_homography(ps.data(), qs.data(), 4);
        } catch (const Error&) {
            continue;
        }
        double err;
        int count = classify(m, mask, err);
        if (count > best_count || (count == best_count && err < best_err)) {
            best_count = count;
            best_err = err;
            best_m = m;
        }
    }
    if (best_count < cfg.min_inliers)
        throw NoConsensus("ransac_homography: best consensus " + std::to_string(best_count) +
                          " of " + std::to_string(n) + " (need " +
                          std::to_string(cfg.min_inliers) + ")");

    // Least-squares refit on the consensus set, then reclassify once and refit
    // again so the final inlier mask is consistent with the returned model.
    double err;
    classify(best_m, mask, err);
    for (int round = 0; round < 2; ++round) {
        Eigen::Matrix3d refined;
        try {
            if (!fit(mask, refined)) break;
        } catch (const Error&) {
            break;
        }
        best_m = refined;
        classify(best_m, mask, err);
    }
    RansacResult res;
    res.h = make_homography(best_m, size);
    res.inlier_count = classify(res.h.m, mask, err);
    if (res.inlier_count < cfg.min_inliers)
        throw NoConsensus("ransac_homography: refinement lost consensus");
    res.inliers = mask;
    return res;
}

namespace detail {

// Per-cell componentwise median of residual samples, holes filled by
// inverse-distance interpolation from filled cell centers, averaged onto the
// cell's vertices, each component clamped to half the cell pitch.
inline void apply_residual_layer(ControlMotions& m, const GridSpec& spec,
                                 const std::vector<Vec2>& where,
                                 const std::vector<Vec2>& residual) {
    const int ci_n = spec.rows - 1, cj_n = spec.cols - 1;
    const Vec2 cell = spec.cell_size();
    std::vector<std::vector<double>> xs(static_cast<size_t>(ci_n) * cj_n), ys(xs.size());
    for (size_t k = 0; k < where.size(); ++k) {
        int cj = std::clamp(static_cast<int>(where[k].x / cell.x), 0, cj_n - 1);
        int ci = std::clamp(static_cast<int>(where[k].y / cell.y), 0, ci_n - 1);
        xs[static_cast<size_t>(ci) * cj_n + cj].push_back(residual[k].x);
        ys[static_cast<size_t>(ci) * cj_n + cj].push_back(residual[k].y);
    }
    auto median = [](std::vector<double>& v) {
        std::sort(v.begin(), v.end());
        size_t h = v.size() / 2;
        return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
    };
    std::vector<Vec2> cells(xs.size());
    std::vector<char> filled(xs.size(), 0);
    for (size_t k = 0; k < xs.size(); ++k)
        if (!xs[k].empty()) {
            cells[k] = {median(xs[k]), median(ys[k])};
            filled[k] = 1;
        }
    for (int ci = 0; ci < ci_n; ++ci)
        for (int cj = 0; cj < cj_n; ++cj) {
            size_t k = static_cast<size_t>(ci) * cj_n + cj;
            if (filled[k]) continue;
            Vec2 c{(cj + 0.5) * cell.x, (ci + 0.5) * cell.y};
            Vec2 acc{0, 0};
            double wsum = 0.0;
            for (int i2 = 0; i2 < ci_n; ++i2)
                for (int j2 = 0; j2 < cj_n; ++j2) {
                    size_t k2 = static_cast<size_t>(i2) * cj_n + j2;
                    if (!filled[k2]) continue;
                    Vec2 c2{(j2 + 0.5) * cell.x, (i2 + 0.5) * cell.y};
                    double w = 1.0 / ((c - c2).norm2() + 1e-12);
                    acc += w * cells[k2];
                    wsum += w;
                }
            if (wsum > 0) cells[k] = acc / wsum;
        }
    for (int i = 0; i < spec.rows; ++i)
        for (int j = 0; j < spec.cols; ++j) {
            Vec2 acc{0, 0};
            int cnt = 0;
            for (int ci = std::max(i - 1, 0); ci <= std::min(i, ci_n - 1); ++ci)
                for (int cj = std::max(j - 1, 0); cj <= std::min(j, cj_n - 1); ++cj) {
                    acc += cells[static_cast<size_t>(ci) * cj_n + cj];
                    ++cnt;
                }
            if (cnt) acc = acc / cnt;
            acc.x = std::clamp(acc.x, -cell.x / 2, cell.x / 2);
            acc.y = std::clamp(acc.y, -cell.y / 2, cell.y / 2);
            m.at(i, j) += acc;
        }
}

}  // namespace detail

struct SpatialEstimate {
    ControlMotions m_ref;
    ControlMotions m_tgt;
};

// Matches target against reference, fits the aligning homography (warping the
// target frame by it lines up with the reference), splits it across the
// virtual plane, and adds per-view local residual motions.
inline SpatialEstimate estimate_spatial(const Image& ref, const Image& tgt,
                                        const GridSpec& spec, const EstimatorConfig& cfg) {
    spec.validate();
    auto corrs = match_grid(tgt, ref, cfg);  // p in target, q in reference
    auto rr = ransac_homography(corrs, cfg, {tgt.width, tgt.height});
    BidirectionalWarp bw = decompose_bidirectional(rr.h, cfg.beta);

    SpatialEstimate est{h4pt_to_control_motions(bw.h_ref, spec),
                        h4pt_to_control_motions(bw.h_tgt, spec)};

    std::vector<Vec2> at_tgt, r_tgt, at_ref, r_ref;
    for (size_t i = 0; i < corrs.size(); ++i) {
        if (!rr.inliers[i]) continue;
        Vec2 wt, wr;
        if (!detail::project(bw.h_tgt.m, corrs[i].p, wt) ||
            !detail::project(bw.h_ref.m, corrs[i].q, wr))
            continue;
        Vec2 e = wr - wt;  // residual misalignment after the global warps
        at_tgt.push_back(corrs[i].p);
        r_tgt.push_back(cfg.beta * e);
        at_ref.push_back(corrs[i].q);
        r_ref.push_back(-(1.0 - cfg.beta) * e);
    }
    detail::apply_residual_layer(est.m_tgt, spec, at_tgt, r_tgt);
    detail::apply_residual_layer(est.m_ref, spec, at_ref, r_ref);
    return est;
}

// Warp aligning frame `cur` with its predecessor: global homography plus
// full-weight per-cell median residuals. By convention the first frame of a
// sequence has all-zero temporal motions (callers supply that case).
inline ControlMotions estimate_temporal(const Image& prev, const Image& cur,
                                        const GridSpec& spec, const EstimatorConfig& cfg) {
    spec.validate();
    auto corrs = match_grid(cur, prev, cfg);  // p in cur, q in prev
    auto rr = ransac_homography(corrs, cfg, {cur.width, cur.height});
    ControlMotions m = h4pt_to_control_motions(rr.h, spec);
    std::vector<Vec2> at, r;
    for (size_t i = 0; i < corrs.size(); ++i) {
        if (!rr.inliers[i]) continue;
        Vec2 w;
        if (!detail::project(rr.h.m, corrs[i].p, w)) continue;
        at.push_back(corrs[i].p);
        r.push_back(corrs[i].q - w);
    }
    detail::apply_residual_layer(m, spec, at, r);
    return m;
}

}  // namespace stabweave
