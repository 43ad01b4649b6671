#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "core.hpp"
#include "geometry.hpp"

namespace stabweave {

struct GridSpec {
    int rows = 7;  // U + 1
    int cols = 9;  // V + 1
    ImageSize size{480, 360};

    bool operator==(const GridSpec&) const = default;

    void validate() const {
        if (rows < 3 || cols < 3)
            throw ShapeMismatch("grid must be at least 3x3 control points");
        if (size.width < 1 || size.height < 1)
            throw ShapeMismatch("grid image size must be positive");
    }
    Vec2 cell_size() const {
        return {static_cast<double>(size.width) / (cols - 1),
                static_cast<double>(size.height) / (rows - 1)};
    }
};

// One 2-vector per control point. Serves as both absolute vertex positions
// (a mesh) and per-vertex motions, which differ only by the rigid mesh.
struct GridField {
    int rows = 0;
    int cols = 0;
    std::vector<Vec2> v;

    GridField() = default;
    GridField(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c) {}

    Vec2& at(int i, int j) { return v[static_cast<size_t>(i) * cols + j]; }
    const Vec2& at(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }
    size_t count() const { return v.size(); }
    bool same_shape(const GridField& o) const { return rows == o.rows && cols == o.cols; }

    GridField& operator+=(const GridField& o) {
        for (size_t k = 0; k < v.size(); ++k) v[k] += o.v[k];
        return *this;
    }
    GridField& operator-=(const GridField& o) {
        for (size_t k = 0; k < v.size(); ++k) v[k] -= o.v[k];
        return *this;
    }
    friend GridField operator+(GridField a, const GridField& b) { return a += b; }
    friend GridField operator-(GridField a, const GridField& b) { return a -= b; }
};

using ControlMotions = GridField;
using Mesh = GridField;

inline void require_shape(const GridField& f, const GridSpec& spec,
                          const char* what) {
    if (f.rows != spec.rows || f.cols != spec.cols)
        throw ShapeMismatch(std::string(what) + ": grid shape mismatch");
}

// Uniform grid over [0,width] x [0,height]; the last column/row lands on the
// image edge exactly (multiply before divide).
inline Mesh rigid_mesh(const GridSpec& spec) {
    spec.validate();
    Mesh m(spec.rows, spec.cols);
    for (int i = 0; i < spec.rows; ++i)
        for (int j = 0; j < spec.cols; ++j)
            m.at(i, j) = {static_cast<double>(spec.size.width) * j / (spec.cols - 1),
                          static_cast<double>(spec.size.height) * i / (spec.rows - 1)};
    return m;
}

inline ControlMotions h4pt_to_control_motions(const Homography3x3& h,
                                              const GridSpec& spec) {
    Mesh rig = rigid_mesh(spec);
    ControlMotions m(spec.rows, spec.cols);
    for (int i = 0; i < spec.rows; ++i)
        for (int j = 0; j < spec.cols; ++j)
            m.at(i, j) = apply_point(h, rig.at(i, j)) - rig.at(i, j);
    return m;
}

// ---------------------------------------------------------------- TPS

// Thin-plate kernel U(r) = r^2 log r^2, continuously extended by U(0) = 0.
inline double tps_kernel_r2(double r2) {
    return r2 > 0.0 ? r2 * std::log(r2) : 0.0;
}

struct TpsCoefficients {
    // f(p) = affine * (p.x, p.y, 1)^T + sum_k weight_k * U(|p - site_k|)
    Eigen::Matrix<double, 2, 3> affine;
    std::vector<Vec2> weights;
    std::vector<Vec2> sites;
};

// Exact-interpolation TPS fit through the bordered (K+3) system. The system
// is solved directly in pixel coordinates — the coefficient contract is a
// pixel-space kernel sum, and any change of frame re-amplifies rounding when
// mapped back — with iterative refinement to push the site residuals to the
// double-precision floor.
inline TpsCoefficients tps_fit(const std::vector<Vec2>& sites,
                               const std::vector<Vec2>& targets) {
    const int k = static_cast<int>(sites.size());
    if (k < 3 || targets.size() != sites.size())
        throw SingularSystem("TPS fit needs K >= 3 matched site/target pairs");

    const int n = k + 3;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, 2);
    for (int i = 0; i < k; ++i) {
        for (int j = i + 1; j < k; ++j) {
            double u = tps_kernel_r2((sites[i] - sites[j]).norm2());
            m(i, j) = u;
            m(j, i) = u;
        }
        m(i, k) = 1.0;
        m(i, k + 1) = sites[i].x;
        m(i, k + 2) = sites[i].y;
        m(k, i) = 1.0;
        m(k + 1, i) = sites[i].x;
        m(k + 2, i) = sites[i].y;
        rhs(i, 0) = targets[i].x;
        rhs(i, 1) = targets[i].y;
    }

    // Collinear sites make the bordered system singular; detect that
    // geometrically (pivot magnitudes are useless at pixel scale, where the
    // kernel block dwarfs the affine border).
    {
        Vec2 c{0, 0};
        for (int i = 0; i < k; ++i) c += sites[i];
        c = c / k;
        double sxx = 0, sxy = 0, syy = 0;
        for (int i = 0; i < k; ++i) {
            Vec2 d = sites[i] - c;
            sxx += d.x * d.x;
            sxy += d.x * d.y;
            syy += d.y * d.y;
        }
        double tr = sxx + syy, det = sxx * syy - sxy * sxy;
        double lam_min = 0.5 * (tr - std::sqrt(std::max(0.0, tr * tr - 4 * det)));
        if (std::sqrt(std::max(0.0, lam_min / k)) <= 1e-9)
            throw SingularSystem("TPS sites are collinear");
    }

    // Iterative refinement with extended-precision residuals: the kernel
    // entries reach ~5e6, so a double-precision residual floors near 1e-8 —
    // above the interpolation contract. long double accumulation clears it.
    auto residual = [&](const Eigen::MatrixXd& s) {
        Eigen::MatrixXd res(n, 2);
        for (int col = 0; col < 2; ++col)
            for (int i = 0; i < n; ++i) {
                long double acc = rhs(i, col);
                for (int j = 0; j < n; ++j)
                    acc -= static_cast<long double>(m(i, j)) * s(j, col);
                res(i, col) = static_cast<double>(acc);
            }
        return res;
    };

    Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
    Eigen::MatrixXd sol = lu.solve(rhs);
    for (int pass = 0; pass < 6; ++pass) {
        Eigen::MatrixXd res = residual(sol);
        double r = res.cwiseAbs().maxCoeff();
        if (!std::isfinite(r) || r < 1e-11) break;
        sol += lu.solve(res);
    }
    double final_res = residual(sol).cwiseAbs().maxCoeff();
    double scale = std::max(1.0, rhs.cwiseAbs().maxCoeff());
    if (!std::isfinite(final_res) || final_res > 1e-9 * scale)
        throw SingularSystem("TPS system could not be solved to tolerance");

    TpsCoefficients out;
    out.sites = sites;
    out.weights.resize(k);
    for (int i = 0; i < k; ++i) out.weights[i] = {sol(i, 0), sol(i, 1)};
    out.affine << sol(k + 1, 0), sol(k + 2, 0), sol(k, 0),
                  sol(k + 1, 1), sol(k + 2, 1), sol(k, 1);
    return out;
}

// Extended-precision accumulation: near-duplicate sites produce large
// cancelling weights, and at pixel scale the products w*U reach ~1e9, so a
// plain double sum rounds each product by ~1e-7 — above the interpolation
// contract. 80-bit products and sums keep the noise near 1e-11.
inline Vec2 tps_eval_one(const TpsCoefficients& tc, Vec2 p) {
    long double x = 0.0L, y = 0.0L;
    for (size_t i = 0; i < tc.sites.size(); ++i) {
        long double u = tps_kernel_r2((p - tc.sites[i]).norm2());
        x += static_cast<long double>(tc.weights[i].x) * u;
        y += static_cast<long double>(tc.weights[i].y) * u;
    }
    x += static_cast<long double>(tc.affine(0, 0)) * p.x +
         static_cast<long double>(tc.affine(0, 1)) * p.y + tc.affine(0, 2);
    y += static_cast<long double>(tc.affine(1, 0)) * p.x +
         static_cast<long double>(tc.affine(1, 1)) * p.y + tc.affine(1, 2);
    return {static_cast<double>(x), static_cast<double>(y)};
}

inline std::vector<Vec2> tps_eval(const TpsCoefficients& tc,
                                  const std::vector<Vec2>& queries) {
    std::vector<Vec2> out(queries.size());
    for (size_t i = 0; i < queries.size(); ++i) out[i] = tps_eval_one(tc, queries[i]);
    return out;
}

// ---------------------------------------------------------------- distortion

// Residual projector for the per-quad similarity fit. The fitted subspace
// span{corners, J corners, 1_x, 1_y} is invariant under translation and
// similarity of the quad, so one 8x8 projector serves every cell of a
// uniform grid; it also annihilates the rigid corners themselves, so the
// residual depends on the motions alone.
inline Eigen::Matrix<double, 8, 8> similarity_residual_projector(Vec2 cell) {
    Eigen::Matrix<double, 8, 4> h;
    const Vec2 q[4] = {{0, 0}, {cell.x, 0}, {0, cell.y}, {cell.x, cell.y}};
    for (int i = 0; i < 4; ++i) {
        h(2 * i, 0) = q[i].x;      // p
        h(2 * i + 1, 0) = q[i].y;
        h(2 * i, 1) = -q[i].y;     // J p
        h(2 * i + 1, 1) = q[i].x;
        h(2 * i, 2) = 1.0;         // translation x
        h(2 * i + 1, 2) = 0.0;
        h(2 * i, 3) = 0.0;         // translation y
        h(2 * i + 1, 3) = 1.0;
    }
    Eigen::Matrix4d g = h.transpose() * h;
    return Eigen::Matrix<double, 8, 8>::Identity() - h * g.inverse() * h.transpose();
}

struct DistortionWeights {
    double inter = 1.0;  // row/column second differences (collinearity)
    double intra = 1.0;  // per-quad similarity deviation
};

namespace detail {

template <bool WithGrad>
double distortion_impl(const ControlMotions& m, const GridSpec& spec,
                       const DistortionWeights& w, ControlMotions* grad) {
    require_shape(m, spec, "distortion_energy");
    if (WithGrad) {
        *grad = ControlMotions(spec.rows, spec.cols);
    }
    double energy = 0.0;

    // Second differences of deformed vertices along rows and columns; the
    // rigid part is uniformly spaced, so only motions survive.
    for (int i = 0; i < spec.rows; ++i)
        for (int j = 1; j + 1 < spec.cols; ++j) {
            Vec2 d = m.at(i, j - 1) - 2.0 * m.at(i, j) + m.at(i, j + 1);
            energy += w.inter * d.norm2();
            if (WithGrad) {
                Vec2 g = 2.0 * w.inter * d;
                grad->at(i, j - 1) += g;
                grad->at(i, j) -= 2.0 * g;
                grad->at(i, j + 1) += g;
            }
        }
    for (int j = 0; j < spec.cols; ++j)
        for (int i = 1; i + 1 < spec.rows; ++i) {
            Vec2 d = m.at(i - 1, j) - 2.0 * m.at(i, j) + m.at(i + 1, j);
            energy += w.inter * d.norm2();
            if (WithGrad) {
                Vec2 g = 2.0 * w.inter * d;
                grad->at(i - 1, j) += g;
                grad->at(i, j) -= 2.0 * g;
                grad->at(i + 1, j) += g;
            }
        }

    const Eigen::Matrix<double, 8, 8> r = similarity_residual_projector(spec.cell_size());
    Eigen::Matrix<double, 8, 1> mv, res;
    for (int i = 0; i + 1 < spec.rows; ++i)
        for (int j = 0; j + 1 < spec.cols; ++j) {
            const Vec2 q[4] = {m.at(i, j), m.at(i, j + 1), m.at(i + 1, j),
                               m.at(i + 1, j + 1)};
            for (int k = 0; k < 4; ++k) {
                mv(2 * k) = q[k].x;
                mv(2 * k + 1) = q[k].y;
            }
            res = r * mv;
            energy += w.intra * res.squaredNorm();
            if (WithGrad) {
                // d/dm |R m|^2 = 2 R m  (R symmetric idempotent)
                Eigen::Matrix<double, 8, 1> g = 2.0 * w.intra * res;
                grad->at(i, j) += Vec2{g(0), g(1)};
                grad->at(i, j + 1) += Vec2{g(2), g(3)};
                grad->at(i + 1, j) += Vec2{g(4), g(5)};
                grad->at(i + 1, j + 1) += Vec2{g(6), g(7)};
            }
        }
    return energy;
}

}  // namespace detail

inline double distortion_energy(const ControlMotions& m, const GridSpec& spec,
                                const DistortionWeights& w = {}) {
    return detail::distortion_impl<false>(m, spec, w, nullptr);
}

inline double distortion_energy_with_gradient(const ControlMotions& m,
                                              const GridSpec& spec,
                                              ControlMotions& grad,
                                              const DistortionWeights& w = {}) {
    return detail::distortion_impl<true>(m, spec, w, &grad);
}

}  // namespace stabweave
