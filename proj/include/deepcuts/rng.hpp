#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace deepcuts {

// splitmix64. Small, fast, and the stream is pinned by this file rather than
// by whatever the standard library ships, so seeded runs stay reproducible
// across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        return next_u64() % n;
    }

    // Standard normal via Box-Muller; one draw per call, no cached spare.
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    // Gaussian(0, sigma^2) rejected outside +/- 2 sigma.
    double next_truncated_gaussian(double sigma) {
        for (;;) {
            const double g = next_gaussian() * sigma;
            if (std::fabs(g) <= 2.0 * sigma) return g;
        }
    }

private:
    std::uint64_t state_;
};

// Stable mix of a base seed with stream indices, for deriving independent
// per-batch / per-path noise streams.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    Rng r(base ^ (a * 0x9e3779b97f4a7c15ull) ^ (b * 0xc2b2ae3d27d4eb4full));
    return r.next_u64();
}

}  // namespace deepcuts
