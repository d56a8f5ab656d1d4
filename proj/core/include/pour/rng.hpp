#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace pour {

// Deterministic random stream. All distributions are implemented by hand on
// top of splitmix64 so that identical seeds give identical sequences on any
// platform / standard library. Every source of randomness in the pipeline
// derives from one root seed via named substreams (see substream_seed).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_index(std::uint64_t n) {
        // Rejection-free modulo is fine here: n is tiny relative to 2^64.
        return next_u64() % n;
    }

    // Standard normal via Box-Muller (one value per call, no caching, so the
    // consumed stream length is predictable).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Poisson sample. Knuth's method for small means, normal approximation
    // above 64 (error is far below the noise levels we model).
    std::uint64_t poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean > 64.0) {
            double v = std::round(normal(mean, std::sqrt(mean)));
            return v < 0.0 ? 0 : static_cast<std::uint64_t>(v);
        }
        const double limit = std::exp(-mean);
        std::uint64_t k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform();
        } while (p > limit);
        return k - 1;
    }

  private:
    std::uint64_t state_;
};

// Derives the seed of a named substream (e.g. "phantom", "init", "patches")
// from the root seed. FNV-1a over the name, mixed with the root.
inline std::uint64_t substream_seed(std::uint64_t root, std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return root ^ h;
}

}  // namespace pour
