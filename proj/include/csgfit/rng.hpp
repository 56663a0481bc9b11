// rng.hpp - seeded random source with portable draw semantics.
//
// std::uniform_real_distribution and friends are implementation-defined, which
// breaks the byte-identical-output contract across standard libraries. All
// draws here are defined directly on top of mt19937_64 output so a seed pins
// the exact sample stream.
#pragma once

#include <cstdint>
#include <cmath>
#include <random>

#include "csgfit/vec3.hpp"

namespace csgfit {

// splitmix64 finalizer, used for seed mixing and stable hashing.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
    return mix64(seed ^ (mix64(v) + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(mix64(seed)) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Lemire multiply-shift; bias is < 2^-64.
    std::size_t uniform_index(std::size_t n) {
        const unsigned __int128 m = static_cast<unsigned __int128>(gen_()) * n;
        return static_cast<std::size_t>(m >> 64);
    }

    // Standard normal via Box-Muller (cosine branch).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    Vec3 normal_vec3() {
        const double a = normal(), b = normal(), c = normal();
        return {a, b, c};
    }

    Vec3 uniform_in_box(const Aabb& box) {
        return {uniform(box.min.x, box.max.x), uniform(box.min.y, box.max.y),
                uniform(box.min.z, box.max.z)};
    }

    // Uniform random rotation from a uniform quaternion (Shoemake).
    Mat3 random_rotation() {
        const double u1 = uniform(), u2 = uniform(), u3 = uniform();
        const double sq1 = std::sqrt(1.0 - u1), sq2 = std::sqrt(u1);
        const double qx = sq1 * std::sin(2.0 * M_PI * u2);
        const double qy = sq1 * std::cos(2.0 * M_PI * u2);
        const double qz = sq2 * std::sin(2.0 * M_PI * u3);
        const double qw = sq2 * std::cos(2.0 * M_PI * u3);
        Mat3 r;
        r.row0 = {1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)};
        r.row1 = {2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)};
        r.row2 = {2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)};
        return r;
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace csgfit
