#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace dchb {

// splitmix64; used both as a seed mixer and to derive independent
// sub-stream seeds from (master, id...) tuples.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t id0,
                                 std::uint64_t id1 = 0, std::uint64_t id2 = 0) {
    std::uint64_t s = master;
    std::uint64_t h = splitmix64(s);
    s ^= id0 * 0xff51afd7ed558ccdULL;
    h ^= splitmix64(s);
    s ^= id1 * 0xc4ceb9fe1a85ec53ULL;
    h ^= splitmix64(s);
    s ^= id2 * 0x2545f4914f6cdd1dULL;
    h ^= splitmix64(s);
    return h;
}

// xoshiro256++ with hand-rolled distributions so that draws are
// bit-reproducible across standard libraries and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform on (0,1); never returns 0 or 1
    double uniform() {
        double u = (next_u64() >> 11) * 0x1.0p-53;
        return u > 0.0 ? u : 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, sine branch discarded; consumes exactly two uniforms
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Marsaglia-Tsang; boost for shape < 1
    double gamma(double shape, double scale) {
        if (shape <= 0.0 || scale <= 0.0)
            throw std::invalid_argument("gamma: shape and scale must be positive");
        if (shape < 1.0) {
            double u = uniform();
            return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
        }
    }

    // scale = 1/rate parameterization helper for variance updates:
    // X ~ InvGamma(shape, rate) <=> 1/X ~ Gamma(shape, 1/rate)
    double inverse_gamma(double shape, double rate) {
        return rate / gamma(shape, 1.0);
    }

    double exponential(double mean) { return -mean * std::log(uniform()); }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t s_[4];
};

}  // namespace dchb
