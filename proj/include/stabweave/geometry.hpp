#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>

#include "core.hpp"

namespace stabweave {

struct ImageSize {
    int width = 0;
    int height = 0;
    bool operator==(const ImageSize&) const = default;
};

// Corner order everywhere: top-left, top-right, bottom-left, bottom-right.
inline std::array<Vec2, 4> image_corners(ImageSize size) {
    double w = size.width, h = size.height;
    return {Vec2{0, 0}, Vec2{w, 0}, Vec2{0, h}, Vec2{w, h}};
}

// 3x3 projective transform, kept in canonical form: Frobenius norm 1 and
// bottom-right entry non-negative, so equal transforms compare equal.
struct Homography3x3 {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    ImageSize size;
};

// Four corner displacements (px) on the image rectangle.
struct Homography4pt {
    std::array<Vec2, 4> displacement{};
    ImageSize size;
};

inline Eigen::Matrix3d canonical(const Eigen::Matrix3d& m) {
    double n = m.norm();
    if (!(n > 0.0) || !std::isfinite(n))
        throw SingularMatrix("homography has non-finite or zero norm");
    Eigen::Matrix3d c = m / n;
    double pivot = c(2, 2);
    if (pivot == 0.0) {
        for (int i = 0; i < 9 && pivot == 0.0; ++i)
            pivot = c(i / 3, i % 3);
    }
    if (pivot < 0.0) c = -c;
    return c;
}

inline Homography3x3 make_homography(const Eigen::Matrix3d& m, ImageSize size) {
    Homography3x3 h{canonical(m), size};
    if (std::abs(h.m.determinant()) <= 1e-12)
        throw SingularMatrix("homography is singular after normalization");
    return h;
}

inline Homography3x3 identity_homography(ImageSize size) {
    return make_homography(Eigen::Matrix3d::Identity(), size);
}

inline Homography3x3 translation_homography(Vec2 t, ImageSize size) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 2) = t.x;
    m(1, 2) = t.y;
    return make_homography(m, size);
}

inline Vec2 apply_point(const Homography3x3& h, Vec2 p) {
    double u = h.m(0, 0) * p.x + h.m(0, 1) * p.y + h.m(0, 2);
    double v = h.m(1, 0) * p.x + h.m(1, 1) * p.y + h.m(1, 2);
    double w = h.m(2, 0) * p.x + h.m(2, 1) * p.y + h.m(2, 2);
    if (std::abs(w) <= 1e-12)
        throw CornerAtInfinity("point maps to infinity");
    return {u / w, v / w};
}

inline Homography3x3 compose(const Homography3x3& a, const Homography3x3& b) {
    // compose(a, b) applies b first, then a.
    return make_homography(a.m * b.m, b.size);
}

inline Homography3x3 invert(const Homography3x3& h) {
    if (std::abs(h.m.determinant()) <= 1e-12)
        throw SingularMatrix("cannot invert a singular homography");
    return make_homography(h.m.inverse(), h.size);
}

inline double canonical_distance(const Homography3x3& a, const Homography3x3& b) {
    return (a.m - b.m).norm();
}

namespace detail {

// Similarity normalization for DLT conditioning: centroid to origin,
// mean radius sqrt(2).
inline Eigen::Matrix3d normalizing_transform(const Vec2* pts, int n) {
    Vec2 c{0, 0};
    for (int i = 0; i < n; ++i) c += pts[i];
    c = c / n;
    double mean_r = 0.0;
    for (int i = 0; i < n; ++i) mean_r += (pts[i] - c).norm();
    mean_r /= n;
    double s = mean_r > 1e-300 ? std::sqrt(2.0) / mean_r : 1.0;
    Eigen::Matrix3d t;
    t << s, 0, -s * c.x, 0, s, -s * c.y, 0, 0, 1;
    return t;
}

inline bool three_collinear(const Vec2& a, const Vec2& b, const Vec2& c,
                            double tol_px) {
    Vec2 ab = b - a, ac = c - a;
    double cross = ab.x * ac.y - ab.y * ac.x;
    double base = std::max(ab.norm(), ac.norm());
    if (base <= tol_px) return true;
    return std::abs(cross) / base <= tol_px;
}

inline bool in_general_position(const std::array<Vec2, 4>& p, double tol_px) {
    static constexpr int tri[4][3] = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
    for (auto& t : tri)
        if (three_collinear(p[t[0]], p[t[1]], p[t[2]], tol_px)) return false;
    return true;
}

// Normalized DLT for n >= 4 correspondences (least squares when n > 4).
inline Eigen::Matrix3d dlt_homography(const Vec2* src, const Vec2* dst, int n) {
    Eigen::Matrix3d ts = normalizing_transform(src, n);
    Eigen::Matrix3d td = normalizing_transform(dst, n);
    Eigen::MatrixXd a(2 * n, 9);
    for (int i = 0; i < n; ++i) {
        double x = ts(0, 0) * src[i].x + ts(0, 2);
        double y = ts(1, 1) * src[i].y + ts(1, 2);
        double u = td(0, 0) * dst[i].x + td(0, 2);
        double v = td(1, 1) * dst[i].y + td(1, 2);
        a.row(2 * i + 0) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
        a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(0) <= 0.0 || sv(sv.size() - 1) / sv(0) < 1e-12) {
        // One zero singular value is expected (the solution direction);
        // a second one means the system is rank-deficient.
        if (n == 4 || sv(sv.size() - 2) / sv(0) < 1e-12)
            throw DegenerateCorrespondences("4-point system is rank-deficient");
    }
    Eigen::VectorXd hv = svd.matrixV().col(8);
    Eigen::Matrix3d hn;
    hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
    return td.inverse() * hn * ts;
}

}  // namespace detail

inline Homography3x3 matrix_from_h4pt(const Homography4pt& q) {
    auto corners = image_corners(q.size);
    std::array<Vec2, 4> moved;
    for (int i = 0; i < 4; ++i) moved[i] = corners[i] + q.displacement[i];
    if (!detail::in_general_position(moved, 1e-9))
        throw DegenerateCorrespondences(
            "displaced corners are collinear; no unique homography");
    Eigen::Matrix3d m = detail::dlt_homography(corners.data(), moved.data(), 4);
    return make_homography(m, q.size);
}

inline Homography4pt h4pt_from_matrix(const Homography3x3& h) {
    Homography4pt q;
    q.size = h.size;
    auto corners = image_corners(h.size);
    for (int i = 0; i < 4; ++i) {
        const Vec2& p = corners[i];
        double w = h.m(2, 0) * p.x + h.m(2, 1) * p.y + h.m(2, 2);
        if (std::abs(w) <= 1e-9)
            throw CornerAtInfinity("image corner maps to infinity");
        double u = h.m(0, 0) * p.x + h.m(0, 1) * p.y + h.m(0, 2);
        double v = h.m(1, 0) * p.x + h.m(1, 1) * p.y + h.m(1, 2);
        q.displacement[i] = Vec2{u / w - p.x, v / w - p.y};
    }
    return q;
}

struct BidirectionalWarp {
    Homography3x3 h_ref;
    Homography3x3 h_tgt;
};

// Split h into per-view warps onto the virtual plane selected by beta:
// the target-side warp scales all four corner displacements by beta, and
// the reference side is whatever closes the loop, h_tgt = h * h_ref.
inline BidirectionalWarp decompose_bidirectional(const Homography3x3& h,
                                                 double beta) {
    Homography4pt q = h4pt_from_matrix(h);
    Homography4pt q_tgt{{q.displacement[0] * beta, q.displacement[1] * beta,
                         q.displacement[2] * beta, q.displacement[3] * beta},
                        q.size};
    Homography3x3 h_tgt = matrix_from_h4pt(q_tgt);
    Homography3x3 h_ref = compose(invert(h), h_tgt);
    return {h_ref, h_tgt};
}

}  // namespace stabweave
