#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdio>

#include "stabweave/mesh_cache.hpp"
#include "stabweave/motion.hpp"
#include "stabweave/render.hpp"

using namespace stabweave;

namespace {

const GridSpec kSpec{7, 9, {480, 360}};

double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
    std::uint64_t key = static_cast<std::uint64_t>(ix) * 0x9e3779b97f4a7c15ull ^
                        static_cast<std::uint64_t>(iy) + 0x7f4a7c15ull;
    return SplitMix64(SplitMix64::mix(seed, key)).uniform();
}

double value_noise(double x, double y, double scale, std::uint64_t seed) {
    double fx = x / scale, fy = y / scale;
    std::int64_t ix = static_cast<std::int64_t>(std::floor(fx));
    std::int64_t iy = static_cast<std::int64_t>(std::floor(fy));
    double tx = fx - ix, ty = fy - iy;
    tx = tx * tx * (3 - 2 * tx);
    ty = ty * ty * (3 - 2 * ty);
    double v00 = lattice(ix, iy, seed), v10 = lattice(ix + 1, iy, seed);
    double v01 = lattice(ix, iy + 1, seed), v11 = lattice(ix + 1, iy + 1, seed);
    return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
}

// Smooth two-octave texture; continuous in (x, y) so warped views can be
// synthesized by sampling at transformed coordinates.
double tex(double x, double y, std::uint64_t seed) {
    double v = 128.0 + 170.0 * (value_noise(x, y, 90.0, seed) - 0.5) +
               100.0 * (value_noise(x, y, 31.0, seed + 1) - 0.5);
    return std::clamp(v, 0.0, 255.0);
}

Image textured(int w, int h, std::uint64_t seed, double ox = 0, double oy = 0) {
    Image img(w, h, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.at(x, y) = static_cast<float>(tex(x + ox, y + oy, seed));
    return img;
}

double max_motion(const ControlMotions& m) {
    double r = 0;
    for (const Vec2& p : m.v) r = std::max(r, std::max(std::abs(p.x), std::abs(p.y)));
    return r;
}

double overlap_rmse(const MaskedImage& a, const MaskedImage& b) {
    double se = 0;
    long n = 0;
    for (int y = 0; y < a.pixels.height; ++y)
        for (int x = 0; x < a.pixels.width; ++x)
            if (a.mask.at(x, y) > 0 && b.mask.at(x, y) > 0) {
                double d = a.pixels.at(x, y) - b.pixels.at(x, y);
                se += d * d;
                ++n;
            }
    REQUIRE(n > 1000);
    return std::sqrt(se / n);
}

}  // namespace

TEST_CASE("static pair matches with zero displacement") {
    Image a = textured(480, 360, 11);
    EstimatorConfig cfg;
    auto corrs = match_grid(a, a, cfg);
    REQUIRE(corrs.size() >= 8);
    for (const auto& c : corrs) {
        REQUIRE(c.q.x == c.p.x);
        REQUIRE(c.q.y == c.p.y);
        REQUIRE(c.score > 0.99);
    }
}

TEST_CASE("integer shift is recovered exactly on interior cells") {
    Image a = textured(480, 360, 12);
    Image b(480, 360, 1);
    for (int y = 0; y < 360; ++y)
        for (int x = 0; x < 480; ++x)
            b.at(x, y) = a.at((x - 5 + 480) % 480, y);  // shift right, wrap cropped
    EstimatorConfig cfg;
    auto corrs = match_grid(a, b, cfg);
    int interior = 0;
    for (const auto& c : corrs) {
        if (c.p.x < 46 || c.p.x > 434) continue;
        ++interior;
        REQUIRE(c.q.x - c.p.x == 5.0);
        REQUIRE(c.q.y - c.p.y == 0.0);
    }
    REQUIRE(interior >= 30);
}

TEST_CASE("uniform frames have no texture to match") {
    Image flat(480, 360, 1);
    for (auto& v : flat.px) v = 128.0f;
    EstimatorConfig cfg;
    REQUIRE_THROWS_AS(match_grid(flat, flat, cfg), InsufficientTexture);
}

TEST_CASE("ransac recovers a known homography from exact matches") {
    SplitMix64 rng(31);
    EstimatorConfig cfg;
    ImageSize size{480, 360};
    for (int trial = 0; trial < 20; ++trial) {
        Homography4pt d{{}, size};
        for (auto& v : d.displacement) v = {rng.uniform(-40, 40), rng.uniform(-40, 40)};
        Homography3x3 gt = matrix_from_h4pt(d);

        std::vector<Correspondence> corrs;
        for (int i = 0; i < 50; ++i) {
            Vec2 p{rng.uniform(10, 470), rng.uniform(10, 350)};
            corrs.push_back({p, apply_point(gt, p), 1.0});
        }
        int n_out = 15;
        for (int i = 0; i < n_out; ++i) {  // first 15 become gross outliers
            double ang = rng.uniform(0, 6.28318);
            double mag = rng.uniform(8, 60);
            corrs[i].q += Vec2{mag * std::cos(ang), mag * std::sin(ang)};
        }
        auto rr = ransac_homography(corrs, cfg, size);
        for (const Vec2& c : image_corners(size))
            REQUIRE((apply_point(rr.h, c) - apply_point(gt, c)).norm() <= 0.5);
        for (int i = 0; i < static_cast<int>(corrs.size()); ++i) {
            if (i < n_out)
                REQUIRE(!rr.inliers[i]);
            else
                REQUIRE(rr.inliers[i]);
        }
    }
}

TEST_CASE("collinear correspondences yield no consensus") {
    std::vector<Correspondence> corrs;
    for (int i = 0; i < 12; ++i) {
        Vec2 p{40.0 * i, 20.0 * i};  // all on one line
        corrs.push_back({p, p + Vec2{3, 1}, 1.0});
    }
    EstimatorConfig cfg;
    REQUIRE_THROWS_AS(ransac_homography(corrs, cfg, {480, 360}), NoConsensus);
}

TEST_CASE("identical frames estimate to near-zero motions") {
    Image a = textured(480, 360, 13);
    EstimatorConfig cfg;
    auto est = estimate_spatial(a, a, kSpec, cfg);
    REQUIRE(max_motion(est.m_ref) <= 0.1);
    REQUIRE(max_motion(est.m_tgt) <= 0.1);
    auto mt = estimate_temporal(a, a, kSpec, cfg);
    REQUIRE(max_motion(mt) <= 0.1);
}

TEST_CASE("pure translation splits at the mid-plane") {
    // tgt = ref warped by translation (8,4): both are crops of one texture.
    Image ref = textured(480, 360, 14, 20, 20);
    Image tgt = textured(480, 360, 14, 12, 16);
    EstimatorConfig cfg;
    cfg.beta = 0.5;
    auto est = estimate_spatial(ref, tgt, kSpec, cfg);
    for (const Vec2& m : est.m_tgt.v) {
        REQUIRE(std::abs(m.x - -4.0) <= 0.1);
        REQUIRE(std::abs(m.y - -2.0) <= 0.1);
    }
    for (const Vec2& m : est.m_ref.v) {
        REQUIRE(std::abs(m.x - 4.0) <= 0.1);
        REQUIRE(std::abs(m.y - 2.0) <= 0.1);
    }

    Mesh mesh_ref = rigid_mesh(kSpec) + est.m_ref;
    Mesh mesh_tgt = rigid_mesh(kSpec) + est.m_tgt;
    Canvas canvas = canvas_extent(mesh_ref, mesh_tgt);
    MaskedImage wr = warp_frame(ref, mesh_ref, kSpec, canvas);
    MaskedImage wt = warp_frame(tgt, mesh_tgt, kSpec, canvas);
    // Near-exact up to the one-pixel edge-clamp seam at each warped border.
    REQUIRE(overlap_rmse(wr, wt) <= 0.5);
}

TEST_CASE("estimated motions align projective pairs at any plane fraction") {
    // tgt(z) = T(H(z)) with H = translation plus a mild perspective term.
    ImageSize size{480, 360};
    Homography4pt d{{Vec2{-8, -4}, Vec2{-10, -3}, Vec2{-7, -6}, Vec2{-8, -4}}, size};
    Homography3x3 h = matrix_from_h4pt(d);
    Image ref(480, 360, 1), tgt(480, 360, 1);
    for (int y = 0; y < 360; ++y)
        for (int x = 0; x < 480; ++x) {
            ref.at(x, y) = static_cast<float>(tex(x, y, 15));
            Vec2 m = apply_point(h, {static_cast<double>(x), static_cast<double>(y)});
            tgt.at(x, y) = static_cast<float>(tex(m.x, m.y, 15));
        }
    for (double beta : {0.25, 0.5, 0.75}) {
        EstimatorConfig cfg;
        cfg.beta = beta;
        auto est = estimate_spatial(ref, tgt, kSpec, cfg);
        Mesh mesh_ref = rigid_mesh(kSpec) + est.m_ref;
        Mesh mesh_tgt = rigid_mesh(kSpec) + est.m_tgt;
        Canvas canvas = canvas_extent(mesh_ref, mesh_tgt);
        MaskedImage wr = warp_frame(ref, mesh_ref, kSpec, canvas);
        MaskedImage wt = warp_frame(tgt, mesh_tgt, kSpec, canvas);
        REQUIRE(overlap_rmse(wr, wt) <= 2.0);
    }
}

TEST_CASE("temporal estimation recovers a vertical shift") {
    Image prev = textured(480, 360, 16);
    Image cur(480, 360, 1);
    for (int y = 0; y < 360; ++y)
        for (int x = 0; x < 480; ++x) cur.at(x, y) = prev.at(x, (y - 3 + 360) % 360);
    EstimatorConfig cfg = EstimatorConfig{}.with_radius(16);
    ControlMotions m = estimate_temporal(prev, cur, kSpec, cfg);
    for (const Vec2& v : m.v) {
        REQUIRE(std::abs(v.x) <= 0.5);
        REQUIRE(std::abs(v.y - -3.0) <= 0.5);
    }
}

TEST_CASE("mesh cache round trip and validation") {
    SplitMix64 rng(17);
    MeshCache cache;
    cache.grid = kSpec;
    cache.beta = 0.4;
    for (int t = 1; t <= 2; ++t) {
        MeshCacheFrame f;
        f.t = t;
        for (ControlMotions* m :
             {&f.m_spatial_ref, &f.m_spatial_tgt, &f.m_temporal_ref, &f.m_temporal_tgt}) {
            *m = ControlMotions(kSpec.rows, kSpec.cols);
            if (m == &f.m_temporal_ref || m == &f.m_temporal_tgt) {
                if (t == 1) continue;  // first-frame temporal motions stay zero
            }
            for (Vec2& p : m->v) p = {rng.uniform(-9, 9), rng.uniform(-9, 9)};
        }
        cache.frames.push_back(f);
    }
    const std::string path = "cache_roundtrip.json";
    write_mesh_cache(path, cache);
    MeshCache back = read_mesh_cache(path, kSpec);
    REQUIRE(back.grid == cache.grid);
    REQUIRE(back.beta == cache.beta);
    REQUIRE(back.frames.size() == cache.frames.size());
    for (size_t i = 0; i < cache.frames.size(); ++i) {
        REQUIRE(back.frames[i].t == cache.frames[i].t);
        REQUIRE(back.frames[i].m_spatial_ref.v == cache.frames[i].m_spatial_ref.v);
        REQUIRE(back.frames[i].m_spatial_tgt.v == cache.frames[i].m_spatial_tgt.v);
        REQUIRE(back.frames[i].m_temporal_ref.v == cache.frames[i].m_temporal_ref.v);
        REQUIRE(back.frames[i].m_temporal_tgt.v == cache.frames[i].m_temporal_tgt.v);
    }

    GridSpec other{5, 5, {480, 360}};
    REQUIRE_THROWS_AS(read_mesh_cache(path, other), ShapeMismatch);

    // Frame 2 without temporal motions is rejected.
    nlohmann::json j;
    {
        std::ifstream in(path);
        in >> j;
    }
    j["frames"][1].erase("m_temporal_ref");
    j["frames"][1].erase("m_temporal_tgt");
    {
        std::ofstream out("cache_broken.json");
        out << j;
    }
    REQUIRE_THROWS_AS(read_mesh_cache("cache_broken.json", kSpec), SchemaMismatch);

    std::remove(path.c_str());
    std::remove("cache_broken.json");
}
