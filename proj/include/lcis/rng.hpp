#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

#include "lcis/error.hpp"
#include "lcis/math.hpp"

namespace lcis {

// splitmix64; used for seed expansion and for deriving independent
// sub-streams (per chain, per patient, per proposal round).
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    s = h ^ a;
    return splitmix64(s);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(seed, a), b);
}

// xoshiro256++ with hand-rolled distributions. Self-contained so that
// seeded runs are reproducible independent of the standard library's
// distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform on [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // standard normal via Marsaglia polar method
    double normal() {
        for (;;) {
            double u = 2.0 * uniform() - 1.0;
            double v = 2.0 * uniform() - 1.0;
            double r2 = u * u + v * v;
            if (r2 > 0.0 && r2 < 1.0)
                return u * std::sqrt(-2.0 * std::log(r2) / r2);
        }
    }

    double normal(double mean, double var) {
        if (var < kDegenerateVariance) return mean;  // point mass
        return mean + std::sqrt(var) * normal();
    }

    double truncated_normal_nonneg(double mean, double var) {
        for (;;) {
            double x = normal(mean, var);
            if (x >= 0.0) return x;
        }
    }

    // Gamma(shape, scale=1) via Marsaglia–Tsang, with the shape<1 boost.
    double gamma(double shape) {
        require_valid(shape > 0.0, "gamma: shape must be positive");
        if (shape < 1.0) {
            double g = gamma(shape + 1.0);
            double u = uniform();
            while (u <= 0.0) u = uniform();
            return g * std::pow(u, 1.0 / shape);
        }
        double d = shape - 1.0 / 3.0;
        double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double t = 1.0 + c * x;
            if (t <= 0.0) continue;
            double v = t * t * t;
            double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double gamma(double shape, double scale) { return scale * gamma(shape); }

    // Inverse-gamma with shape a, scale b (density ∝ x^{-(a+1)} e^{-b/x}).
    double inv_gamma(double a, double b) { return b / gamma(a); }

    double beta(double a, double b) {
        double x = gamma(a);
        double y = gamma(b);
        return x / (x + y);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
};

}  // namespace lcis
