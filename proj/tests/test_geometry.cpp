#include <catch2/catch_amalgamated.hpp>

#include "stabweave/geometry.hpp"

using namespace stabweave;

namespace {

const ImageSize kSize{480, 360};

Homography3x3 random_homography(SplitMix64& rng, ImageSize size) {
    // Corner displacements bounded by 25% of each dimension.
    Homography4pt q;
    q.size = size;
    for (auto& d : q.displacement)
        d = {rng.uniform(-0.25 * size.width, 0.25 * size.width),
             rng.uniform(-0.25 * size.height, 0.25 * size.height)};
    return matrix_from_h4pt(q);
}

}  // namespace

TEST_CASE("four-point to matrix: identity and translation") {
    Homography4pt zero;
    zero.size = kSize;
    Homography3x3 h = matrix_from_h4pt(zero);
    REQUIRE(canonical_distance(h, identity_homography(kSize)) < 1e-12);

    Homography4pt shift;
    shift.size = kSize;
    for (auto& d : shift.displacement) d = {8, 4};
    Homography3x3 t = matrix_from_h4pt(shift);
    REQUIRE(canonical_distance(t, translation_homography({8, 4}, kSize)) < 1e-9);
}

TEST_CASE("four-point to matrix maps corners onto displaced corners") {
    Homography4pt q;
    q.size = kSize;
    q.displacement = {Vec2{3, 1}, Vec2{-2, 4}, Vec2{0, -5}, Vec2{6, 2}};
    Homography3x3 h = matrix_from_h4pt(q);
    auto corners = image_corners(kSize);
    for (int i = 0; i < 4; ++i) {
        Vec2 mapped = apply_point(h, corners[i]);
        Vec2 expect = corners[i] + q.displacement[i];
        REQUIRE((mapped - expect).norm() < 1e-9);
    }
}

TEST_CASE("matrix to four-point: identity and translation") {
    Homography4pt q0 = h4pt_from_matrix(identity_homography(kSize));
    for (const Vec2& d : q0.displacement) REQUIRE(d.norm() < 1e-12);

    Homography4pt qt = h4pt_from_matrix(translation_homography({8, 4}, kSize));
    for (const Vec2& d : qt.displacement) REQUIRE((d - Vec2{8, 4}).norm() < 1e-9);
}

TEST_CASE("round trip matrix -> 4pt -> matrix over random transforms") {
    SplitMix64 rng(7);
    double worst = 0.0;
    for (int k = 0; k < 2000; ++k) {
        Homography3x3 h = random_homography(rng, kSize);
        Homography3x3 back = matrix_from_h4pt(h4pt_from_matrix(h));
        worst = std::max(worst, canonical_distance(h, back));
    }
    REQUIRE(worst < 1e-9);
}

TEST_CASE("compose and invert") {
    REQUIRE(canonical_distance(invert(identity_homography(kSize)),
                               identity_homography(kSize)) < 1e-12);

    Homography3x3 ab = compose(translation_homography({3, 0}, kSize),
                               translation_homography({0, 5}, kSize));
    REQUIRE(canonical_distance(ab, translation_homography({3, 5}, kSize)) < 1e-9);

    SplitMix64 rng(11);
    for (int k = 0; k < 2000; ++k) {
        Homography3x3 h = random_homography(rng, kSize);
        REQUIRE(canonical_distance(compose(h, invert(h)),
                                   identity_homography(kSize)) < 1e-9);
    }
}

TEST_CASE("compose(a, b) applies b first") {
    SplitMix64 rng(13);
    Homography3x3 a = random_homography(rng, kSize);
    Homography3x3 b = random_homography(rng, kSize);
    Homography3x3 c = compose(a, b);
    Vec2 p{101.5, 77.25};
    Vec2 direct = apply_point(c, p);
    Vec2 chained = apply_point(a, apply_point(b, p));
    REQUIRE((direct - chained).norm() < 1e-9);
}

TEST_CASE("degenerate corner layouts are rejected") {
    Homography4pt q;
    q.size = kSize;
    // Move bottom-left onto the top edge line through TL and TR.
    q.displacement = {Vec2{0, 0}, Vec2{0, 0}, Vec2{200, -360}, Vec2{0, 0}};
    REQUIRE_THROWS_AS(matrix_from_h4pt(q), DegenerateCorrespondences);
}

TEST_CASE("corner mapping to infinity is surfaced") {
    Eigen::Matrix3d m;
    m << 1, 0, 0, 0, 1, 0, 1, 0, -480;  // third row vanishes at (480, y)
    Homography3x3 h = make_homography(m, kSize);
    REQUIRE_THROWS_AS(h4pt_from_matrix(h), CornerAtInfinity);
}

TEST_CASE("bidirectional decomposition: trivial cases") {
    auto [r0, t0] = decompose_bidirectional(identity_homography(kSize), 0.5);
    REQUIRE(canonical_distance(r0, identity_homography(kSize)) < 1e-9);
    REQUIRE(canonical_distance(t0, identity_homography(kSize)) < 1e-9);

    auto [rt, tt] = decompose_bidirectional(translation_homography({8, 4}, kSize), 0.5);
    REQUIRE(canonical_distance(tt, translation_homography({4, 2}, kSize)) < 1e-9);
    REQUIRE(canonical_distance(rt, translation_homography({-4, -2}, kSize)) < 1e-9);
}

TEST_CASE("bidirectional decomposition: composition identity and linearity") {
    SplitMix64 rng(17);
    const double betas[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (int k = 0; k < 500; ++k) {
        Homography3x3 h = random_homography(rng, kSize);
        Homography4pt base = h4pt_from_matrix(h);
        for (double beta : betas) {
            auto [h_ref, h_tgt] = decompose_bidirectional(h, beta);
            REQUIRE(canonical_distance(compose(h, h_ref), h_tgt) < 1e-9);
            Homography4pt qt = h4pt_from_matrix(h_tgt);
            for (int i = 0; i < 4; ++i) {
                Vec2 want = base.displacement[i] * beta;
                REQUIRE((qt.displacement[i] - want).norm() < 1e-9);
            }
        }
        auto [ref1, tgt1] = decompose_bidirectional(h, 1.0);
        REQUIRE(canonical_distance(ref1, identity_homography(kSize)) < 1e-9);
        REQUIRE(canonical_distance(tgt1, h) < 1e-9);
        auto [ref0, tgt0] = decompose_bidirectional(h, 0.0);
        REQUIRE(canonical_distance(tgt0, identity_homography(kSize)) < 1e-9);
        REQUIRE(canonical_distance(ref0, invert(h)) < 1e-9);
    }
}
