#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "stabweave/trajectory.hpp"

using namespace stabweave;

namespace {

const GridSpec kSpec{7, 9, {480, 360}};

GridField zero_field(const GridSpec& spec) { return GridField(spec.rows, spec.cols); }

GridField random_field(const GridSpec& spec, SplitMix64& rng, double amp) {
    GridField f(spec.rows, spec.cols);
    for (Vec2& p : f.v) p = {rng.uniform(-amp, amp), rng.uniform(-amp, amp)};
    return f;
}

double max_abs_diff(const GridField& a, const GridField& b) {
    double r = 0;
    for (size_t k = 0; k < a.v.size(); ++k) {
        r = std::max(r, std::abs(a.v[k].x - b.v[k].x));
        r = std::max(r, std::abs(a.v[k].y - b.v[k].y));
    }
    return r;
}

// Kernel-sum evaluation written out against the fitted coefficients, as an
// oracle independent of the library's evaluator.
Vec2 direct_tps(const TpsCoefficients& tc, Vec2 p) {
    double x = tc.affine(0, 0) * p.x + tc.affine(0, 1) * p.y + tc.affine(0, 2);
    double y = tc.affine(1, 0) * p.x + tc.affine(1, 1) * p.y + tc.affine(1, 2);
    for (size_t k = 0; k < tc.sites.size(); ++k) {
        double r2 = (p - tc.sites[k]).norm2();
        double u = r2 > 0 ? r2 * std::log(r2) : 0.0;
        x += tc.weights[k].x * u;
        y += tc.weights[k].y * u;
    }
    return {x, y};
}

}  // namespace

TEST_CASE("camera trajectory chains temporal motions") {
    std::vector<ControlMotions> zeros(5, zero_field(kSpec));
    Trajectory z = camera_trajectory(zeros);
    REQUIRE(z.length() == 5);
    for (int t = 1; t <= 5; ++t) REQUIRE(max_abs_diff(z.at(t), zero_field(kSpec)) == 0.0);

    // Constant step c from t=2 on: C(t) = (t-1) * c.
    GridField c(kSpec.rows, kSpec.cols);
    for (Vec2& p : c.v) p = {1.5, -0.25};
    std::vector<ControlMotions> constant{zero_field(kSpec), c, c, c};
    Trajectory tc = camera_trajectory(constant);
    for (int t = 1; t <= 4; ++t)
        for (const Vec2& p : tc.at(t).v) {
            REQUIRE(p.x == (t - 1) * 1.5);
            REQUIRE(p.y == (t - 1) * -0.25);
        }

    SplitMix64 rng(3);
    std::vector<ControlMotions> random{zero_field(kSpec)};
    for (int t = 2; t <= 9; ++t) random.push_back(random_field(kSpec, rng, 4.0));
    Trajectory tr = camera_trajectory(random);
    for (int t = 2; t <= 9; ++t) {
        GridField d = tr.at(t) - tr.at(t - 1);
        REQUIRE(max_abs_diff(d, random[static_cast<size_t>(t) - 1]) <= 1e-12);
    }

    std::vector<ControlMotions> bad{c, c};
    REQUIRE_THROWS_AS(camera_trajectory(bad), Error);
}

TEST_CASE("stitching motion degenerates to the temporal motion on rigid spatial meshes") {
    SplitMix64 rng(4);
    Mesh rig = rigid_mesh(kSpec);
    for (int trial = 0; trial < 10; ++trial) {
        GridField mt = random_field(kSpec, rng, 8.0);
        Mesh mesh_t = rig + mt;
        StitchingMotion s = stitching_motion(mesh_t, rig, rig, kSpec);
        REQUIRE(max_abs_diff(s, mt) <= 1e-9);
    }
}

TEST_CASE("stitching motion vanishes when nothing moved") {
    SplitMix64 rng(5);
    Mesh rig = rigid_mesh(kSpec);
    for (int trial = 0; trial < 10; ++trial) {
        Mesh m = rig + random_field(kSpec, rng, 10.0);
        StitchingMotion s = stitching_motion(rig, m, m, kSpec);
        REQUIRE(max_abs_diff(s, zero_field(kSpec)) <= 1e-8);
    }
}

TEST_CASE("stitching motion matches the kernel-sum oracle on a 3x3 grid") {
    GridSpec small{3, 3, {90, 60}};
    SplitMix64 rng(6);
    Mesh rig = rigid_mesh(small);
    for (int trial = 0; trial < 20; ++trial) {
        Mesh mesh_t = rig + random_field(small, rng, 6.0);
        Mesh prev = rig + random_field(small, rng, 6.0);
        Mesh cur = rig + random_field(small, rng, 6.0);
        StitchingMotion s = stitching_motion(mesh_t, prev, cur, small);

        TpsCoefficients tc = tps_fit(rig.v, prev.v);
        for (size_t k = 0; k < s.v.size(); ++k) {
            Vec2 expect = direct_tps(tc, mesh_t.v[k]) - cur.v[k];
            REQUIRE(std::abs(s.v[k].x - expect.x) <= 1e-8);
            REQUIRE(std::abs(s.v[k].y - expect.y) <= 1e-8);
        }
    }
}

TEST_CASE("rigid spatial meshes reduce stitching to the camera trajectory") {
    SplitMix64 rng(7);
    Mesh rig = rigid_mesh(kSpec);
    for (int seq = 0; seq < 100; ++seq) {
        int len = 3 + static_cast<int>(rng.below(8));
        std::vector<ControlMotions> temporal{zero_field(kSpec)};
        std::vector<StitchingMotion> stitching{zero_field(kSpec)};
        for (int t = 2; t <= len; ++t) {
            temporal.push_back(random_field(kSpec, rng, 6.0));
            stitching.push_back(stitching_motion(rig + temporal.back(), rig, rig, kSpec));
        }
        Trajectory cam = camera_trajectory(temporal);
        Trajectory sti = chain_stitching(stitching);
        for (int t = 1; t <= len; ++t) REQUIRE(max_abs_diff(cam.at(t), sti.at(t)) <= 1e-9);
    }
}

TEST_CASE("windows re-base and carry committed anchors") {
    SplitMix64 rng(8);
    const int n = 7, total = 12;
    std::vector<ControlMotions> motions{zero_field(kSpec)};
    for (int t = 2; t <= total; ++t) motions.push_back(random_field(kSpec, rng, 5.0));
    Trajectory traj = camera_trajectory(motions);
    std::vector<Mesh> meshes;
    Mesh rig = rigid_mesh(kSpec);
    for (int t = 1; t <= total; ++t) meshes.push_back(rig + random_field(kSpec, rng, 3.0));
    Image img(64, 64, 1);

    REQUIRE_THROWS_AS(build_window(n - 1, n, traj, traj, meshes, meshes, {}, {}, img, img),
                      MissingHistory);
    REQUIRE_THROWS_AS(build_window(n + 1, 6, traj, traj, meshes, meshes, {}, {}, img, img),
                      Error);

    TrajectoryWindow w1 = build_window(n, n, traj, traj, meshes, meshes, {}, {}, img, img);
    REQUIRE(w1.xi == n);
    REQUIRE(max_abs_diff(w1.s_ref[0], zero_field(kSpec)) == 0.0);
    for (char v : w1.anchor_valid) REQUIRE(!v);
    for (int t = 2; t <= n; ++t) {
        GridField d = w1.s_ref[static_cast<size_t>(t) - 1] - w1.s_ref[static_cast<size_t>(t) - 2];
        REQUIRE(max_abs_diff(d, motions[static_cast<size_t>(t) - 1]) <= 1e-12);
    }

    TrajectoryWindow w2 = build_window(n + 1, n, traj, traj, meshes, meshes, {}, {}, img, img);
    // Shared frames agree once both windows are expressed relative to the
    // later window's base.
    for (int k = 1; k <= n - 1; ++k) {
        GridField shifted = w1.s_ref[static_cast<size_t>(k)] - w1.s_ref[1];
        REQUIRE(max_abs_diff(shifted, w2.s_ref[static_cast<size_t>(k) - 1]) <= 1e-12);
    }
    REQUIRE(max_abs_diff(w2.mesh_ref[0], meshes[1]) == 0.0);

    // Committed history maps into window coordinates by the same re-basing.
    std::vector<GridField> committed;
    for (int t = 1; t <= n; ++t) committed.push_back(traj.at(t) + random_field(kSpec, rng, 1.0));
    TrajectoryWindow w3 =
        build_window(n + 1, n, traj, traj, meshes, meshes, committed, committed, img, img);
    for (int t = 1; t <= n - 1; ++t) {
        REQUIRE(w3.anchor_valid[static_cast<size_t>(t) - 1]);
        GridField expect =
            committed[static_cast<size_t>(t)] - traj.at(2);  // base frame of window xi=n+1
        REQUIRE(max_abs_diff(w3.anchor_ref[static_cast<size_t>(t) - 1], expect) <= 1e-12);
    }
}
