// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

namespace errorflow {

// Stream tags keep unrelated random draws on disjoint keys, so skipping one
// consumer (e.g. the stability branch) never shifts another consumer's stream.
namespace rng_tags {
inline constexpr std::uint64_t perturb_train = 1;
inline constexpr std::uint64_t perturb_eval = 2;
inline constexpr std::uint64_t coord_noise = 3;
inline constexpr std::uint64_t batch = 4;
inline constexpr std::uint64_t data = 5;
inline constexpr std::uint64_t posterior = 6;
inline constexpr std::uint64_t model_init = 7;
}  // namespace rng_tags

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter-based generator keyed by (seed, purpose tag, element id).
/// Identical keys give identical streams regardless of what other streams
/// were consumed in between, which is what makes parallel schedules and
/// partial re-runs bit-reproducible.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t tag, std::uint64_t element) {
        state_ = splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ element);
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller. Consumes exactly two uniforms per call.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    std::uint64_t state_ = 0;
};

}  // namespace errorflow
