#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "stabweave/render.hpp"

using namespace stabweave;

namespace {

const GridSpec kSpec{7, 9, {480, 360}};

Image test_texture(int w, int h, int channels, std::uint64_t seed) {
    Image img(w, h, channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::uint64_t v = SplitMix64::mix(seed, (static_cast<std::uint64_t>(y) << 20) | x);
            for (int c = 0; c < channels; ++c)
                img.at(x, y, c) = static_cast<float>((v >> (8 * c)) & 0xff);
        }
    return img;
}

ControlMotions uniform_motions(const GridSpec& spec, Vec2 d) {
    ControlMotions m(spec.rows, spec.cols);
    for (auto& p : m.v) p = d;
    return m;
}

}  // namespace

TEST_CASE("canvas extent") {
    Mesh rig = rigid_mesh(kSpec);
    Canvas c0 = canvas_extent(rig, rig);
    REQUIRE(c0.width == 480);
    REQUIRE(c0.height == 360);
    REQUIRE(c0.offset.x == 0.0);
    REQUIRE(c0.offset.y == 0.0);

    Mesh right = rig + uniform_motions(kSpec, {10, 0});
    Canvas cr = canvas_extent(rig, right);
    REQUIRE(cr.width == 490);
    REQUIRE(cr.offset.x == 0.0);

    Mesh left = rig + uniform_motions(kSpec, {-10, 0});
    Canvas cl = canvas_extent(rig, left);
    REQUIRE(cl.width == 490);
    REQUIRE(cl.offset.x == 10.0);

    SplitMix64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Mesh a = rig, b = rig;
        for (auto& p : a.v) p += Vec2{rng.uniform(-50, 50), rng.uniform(-50, 50)};
        for (auto& p : b.v) p += Vec2{rng.uniform(-50, 50), rng.uniform(-50, 50)};
        Canvas c = canvas_extent(a, b);
        for (const Mesh* m : {&a, &b})
            for (const Vec2& p : m->v) {
                REQUIRE(p.x + c.offset.x >= -1e-9);
                REQUIRE(p.x + c.offset.x <= c.width + 1e-9);
                REQUIRE(p.y + c.offset.y >= -1e-9);
                REQUIRE(p.y + c.offset.y <= c.height + 1e-9);
            }
    }
}

TEST_CASE("warping by the rigid mesh is the identity") {
    Image frame = test_texture(480, 360, 3, 101);
    Mesh rig = rigid_mesh(kSpec);
    Canvas canvas = canvas_extent(rig, rig);
    MaskedImage w = warp_frame(frame, rig, kSpec, canvas);
    REQUIRE(w.pixels.width == 480);
    REQUIRE(w.pixels.height == 360);
    for (int y = 0; y < 360; ++y)
        for (int x = 0; x < 480; ++x) {
            REQUIRE(w.mask.at(x, y) == 1.0f);
            for (int c = 0; c < 3; ++c)
                REQUIRE(w.pixels.at(x, y, c) == frame.at(x, y, c));
        }
}

TEST_CASE("uniform translation warp shifts the frame") {
    Image frame = test_texture(480, 360, 1, 55);
    Mesh shifted = rigid_mesh(kSpec) + uniform_motions(kSpec, {5, 0});
    Canvas canvas = canvas_extent(shifted, shifted);
    REQUIRE(canvas.width == 485);
    MaskedImage w = warp_frame(frame, shifted, kSpec, canvas);
    // Integer shift: interior pixels must match the direct copy exactly.
    double mse = 0.0;
    int n = 0;
    for (int y = 0; y < 360; ++y)
        for (int x = 5; x < 485; ++x) {
            REQUIRE(w.mask.at(x, y) == 1.0f);
            double d = w.pixels.at(x, y) - frame.at(x - 5, y);
            mse += d * d;
            ++n;
        }
    mse /= n;
    double psnr = mse == 0 ? 100.0 : 10.0 * std::log10(255.0 * 255.0 / mse);
    REQUIRE(psnr >= 45.0);
}

TEST_CASE("folded meshes are rejected with the quad index") {
    Mesh bad = rigid_mesh(kSpec);
    std::swap(bad.at(2, 3), bad.at(2, 4));  // crossing columns fold the quads
    Image frame = test_texture(480, 360, 1, 7);
    Canvas canvas{{0, 0}, 480, 360};
    REQUIRE_THROWS_AS(warp_frame(frame, bad, kSpec, canvas), FoldedMesh);
    try {
        warp_frame(frame, bad, kSpec, canvas);
    } catch (const FoldedMesh& e) {
        REQUIRE(std::string(e.what()).find("1,3") != std::string::npos);
    }
}

TEST_CASE("warped all-ones equals its own mask") {
    Image ones(480, 360, 1);
    for (auto& v : ones.px) v = 1.0f;
    SplitMix64 rng(77);
    Mesh mesh = rigid_mesh(kSpec);
    for (auto& p : mesh.v) p += Vec2{rng.uniform(-20, 20), rng.uniform(-20, 20)};
    Canvas canvas = canvas_extent(mesh, mesh);
    MaskedImage w = warp_frame(ones, mesh, kSpec, canvas);
    for (int y = 0; y < canvas.height; ++y)
        for (int x = 0; x < canvas.width; ++x)
            if (w.mask.at(x, y) > 0) REQUIRE(w.pixels.at(x, y) == 1.0f);
}

TEST_CASE("warp is deterministic across thread counts") {
    Image frame = test_texture(480, 360, 3, 39);
    SplitMix64 rng(40);
    Mesh mesh = rigid_mesh(kSpec);
    for (auto& p : mesh.v) p += Vec2{rng.uniform(-15, 15), rng.uniform(-15, 15)};
    Canvas canvas = canvas_extent(mesh, mesh);
    MaskedImage w1 = warp_frame(frame, mesh, kSpec, canvas, 1);
    MaskedImage w4 = warp_frame(frame, mesh, kSpec, canvas, 4);
    REQUIRE(w1.pixels.px == w4.pixels.px);
    REQUIRE(w1.mask.px == w4.mask.px);
}

TEST_CASE("overlap and blend") {
    // Half-overlapping constant images -> mean value in the overlap.
    MaskedImage a, b;
    a.pixels = Image(20, 10, 1);
    a.mask = Image(20, 10, 1);
    b.pixels = Image(20, 10, 1);
    b.mask = Image(20, 10, 1);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 20; ++x) {
            if (x < 12) {
                a.pixels.at(x, y) = 100;
                a.mask.at(x, y) = 1;
            }
            if (x >= 8) {
                b.pixels.at(x, y) = 200;
                b.mask.at(x, y) = 1;
            }
        }
    StitchedFrame s = overlap_and_blend(a, b);
    REQUIRE(s.pixels.at(0, 5) == 100.0f);
    REQUIRE(s.pixels.at(10, 5) == 150.0f);
    REQUIRE(s.overlap.at(10, 5) == 1.0f);
    REQUIRE(s.overlap.at(0, 5) == 0.0f);
    REQUIRE(s.pixels.at(19, 5) == 200.0f);

    // Blending is symmetric.
    StitchedFrame s2 = overlap_and_blend(b, a);
    REQUIRE(s.pixels.px == s2.pixels.px);
    REQUIRE(s.overlap.px == s2.overlap.px);

    // Identical inputs reproduce themselves on their support.
    StitchedFrame s3 = overlap_and_blend(a, a);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 20; ++x)
            if (a.mask.at(x, y) > 0) REQUIRE(s3.pixels.at(x, y) == a.pixels.at(x, y));
}
