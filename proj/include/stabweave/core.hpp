#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace stabweave {

// ---------------------------------------------------------------- errors

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define STABWEAVE_ERROR(NAME)                                   \
    class NAME : public Error {                                 \
    public:                                                     \
        explicit NAME(const std::string& msg) : Error(msg) {}   \
    }

STABWEAVE_ERROR(DegenerateCorrespondences);
STABWEAVE_ERROR(CornerAtInfinity);
STABWEAVE_ERROR(SingularMatrix);
STABWEAVE_ERROR(SingularSystem);
STABWEAVE_ERROR(InsufficientTexture);
STABWEAVE_ERROR(NoConsensus);
STABWEAVE_ERROR(SchemaMismatch);
STABWEAVE_ERROR(ShapeMismatch);
STABWEAVE_ERROR(FoldedMesh);
STABWEAVE_ERROR(MissingHistory);
STABWEAVE_ERROR(CountMismatch);
STABWEAVE_ERROR(SizeMismatch);
STABWEAVE_ERROR(DecodeError);

#undef STABWEAVE_ERROR

// ---------------------------------------------------------------- vec2

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2() = default;
    Vec2(double x_, double y_) : x(x_), y(y_) {}

    bool operator==(const Vec2&) const = default;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2 operator/(double s) const { return {x / s, y / s}; }
    Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
    Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }

    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double norm() const { return std::sqrt(x * x + y * y); }
    double norm2() const { return x * x + y * y; }
};

inline Vec2 operator*(double s, const Vec2& v) { return {v.x * s, v.y * s}; }

// ---------------------------------------------------------------- rng
//
// SplitMix64: tiny, seedable, and stable across standard libraries.
// std:: distributions are implementation-defined, which would break the
// bitwise-reproducibility contract, so all randomness routes through this.

class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        return next() % n;
    }

    // standard normal via Box-Muller (cached pair for determinism)
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // stateless mix, used to derive independent per-frame seeds
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        SplitMix64 g(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
        return g.next();
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// ---------------------------------------------------------------- threads

// Worker budget: explicit argument wins, then STABWEAVE_THREADS, then 4.
inline int thread_budget(int requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("STABWEAVE_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 4;
}

// Deterministic data-parallel loop: [0, n) is split into `threads`
// contiguous chunks with fixed boundaries, so output placement never
// depends on scheduling. Bodies must write disjoint locations.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (n == 0) return;
    std::size_t nt = static_cast<std::size_t>(threads < 1 ? 1 : threads);
    if (nt > n) nt = n;
    if (nt == 1) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nt - 1);
    std::size_t chunk = (n + nt - 1) / nt;
    for (std::size_t t = 1; t < nt; ++t) {
        std::size_t lo = t * chunk;
        if (lo >= n) break;
        std::size_t hi = std::min(n, lo + chunk);
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    fn(std::size_t{0}, std::min(n, chunk));
    for (auto& th : pool) th.join();
}

}  // namespace stabweave
