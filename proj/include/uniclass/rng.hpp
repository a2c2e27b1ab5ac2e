#pragma once

#include <cmath>
#include <cstdint>

namespace uniclass {

// SplitMix64 generator. Used everywhere instead of <random> so that runs are
// bit-reproducible across standard library implementations.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n), n > 0. Lemire multiply-shift; bias is
    // negligible for the n used here and the mapping is deterministic.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller; the spare value is cached.
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Purpose tags for stream splitting; one master seed drives them all.
namespace streams {
inline constexpr std::uint64_t kDataGen = 1;
inline constexpr std::uint64_t kModelInit = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kAugment = 4;
inline constexpr std::uint64_t kEval = 5;
}  // namespace streams

// Derives an independent stream from (seed, purpose, index).
inline SplitMix64 make_stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0) {
    SplitMix64 mixer(seed);
    const std::uint64_t a = mixer.next_u64();
    SplitMix64 mixer2(a ^ (purpose * 0xd1342543de82ef95ull) ^ (index * 0xaf251af3b0f025b5ull));
    return SplitMix64(mixer2.next_u64());
}

}  // namespace uniclass
