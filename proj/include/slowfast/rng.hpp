#pragma once

#include "slowfast/common.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <span>

namespace slowfast {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Order-sensitive key derivation for substreams.
inline std::uint64_t mix_keys(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    s ^= a + 0x9e3779b97f4a7c15ULL;
    h ^= splitmix64(s);
    s ^= b + 0xc2b2ae3d27d4eb4fULL;
    h ^= splitmix64(s);
    s ^= c + 0x165667b19e3779f9ULL;
    h ^= splitmix64(s);
    return h;
}

/// Hashes a double by bit pattern; used to pin estimator streams to the
/// evaluation point so repeated queries at the same x replay the same noise.
inline std::uint64_t hash_double(double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    std::uint64_t s = bits;
    return splitmix64(s);
}

inline std::uint64_t hash_vec(const Vec& v) {
    std::uint64_t h = 0x2545f4914f6cdd1dULL;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        h = mix_keys(h, hash_double(v[i]), static_cast<std::uint64_t>(i));
    }
    return h;
}

/// Deterministic random stream. Draw sequences depend only on the key, never
/// on platform or scheduling. Normal variates use Box-Muller with a cached
/// spare so consumption is pinned at two uniforms per pair.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t key) : engine_(key) {}

    double uniform() {
        // (0,1); never returns 0 so logs are safe
        const std::uint64_t r = engine_();
        return (static_cast<double>(r >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * M_PI * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double exponential(double rate) { return -std::log(uniform()) / rate; }

    /// Knuth multiplication method; fine for the small means used per step.
    std::size_t poisson(double mean) {
        if (mean <= 0.0) return 0;
        const double limit = std::exp(-mean);
        std::size_t count = 0;
        double product = uniform();
        while (product > limit) {
            ++count;
            product *= uniform();
        }
        return count;
    }

    /// Index draw proportional to weights; total must equal their sum.
    std::size_t categorical(std::span<const double> weights, double total) {
        double threshold = uniform() * total;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            threshold -= weights[i];
            if (threshold <= 0.0) return i;
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Stream labels for the independent noise sources of the coupled system.
enum class NoiseStream : std::uint64_t {
    SlowBrownian = 1,   // w
    FastBrownian = 2,   // w1
    SlowJumps = 3,      // N
    FastJumps = 4,      // N1^eps
    Chain = 5,          // r^eps
    AggregatedChain = 6,
    Estimator = 7,
    Sampling = 8,
};

/// Seed plus counter-based splitting: (seed, label, path index) pins a
/// substream, so ensembles are schedule-independent and any stream can be
/// regenerated bit-identically (Picard iterations reuse common noise this way).
struct NoiseBundle {
    std::uint64_t seed = 0;

    RandomStream stream(NoiseStream label, std::uint64_t path_index = 0) const {
        return RandomStream(mix_keys(seed, static_cast<std::uint64_t>(label), path_index));
    }

    NoiseBundle with_substream(std::uint64_t salt) const {
        return NoiseBundle{mix_keys(seed, 0xabcdef12345ULL, salt)};
    }
};

}  // namespace slowfast
