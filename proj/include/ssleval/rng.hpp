#pragma once
#ifndef SSLEVAL_RNG_HPP
#define SSLEVAL_RNG_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <utility>

namespace ssleval {

/// SplitMix64 step; used for seeding and for deriving independent streams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Named purposes for independent random streams derived from one seed.
enum class Stream : std::uint64_t {
    subspace = 1,
    draws = 2,
    noise = 3,
    scores = 4,
    clusters = 5,
    sampling = 6,
    seeding = 7,
    batches = 8,
};

/// xoshiro256** 1.0 seeded through SplitMix64.
///
/// Every distribution below is implemented here rather than through <random>
/// distributions, whose outputs are implementation-defined. Given the same
/// seed the generated sequence is identical on every conforming platform
/// (normals rely on std::log/std::sqrt/std::cos from the C library).
class Xoshiro256 {
public:
    using result_type = std::uint64_t;

    static constexpr std::string_view algorithm_name = "xoshiro256**/splitmix64";

    explicit Xoshiro256(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    /// Independent stream for a given purpose (and optional index, e.g. model number).
    static Xoshiro256 stream(std::uint64_t seed, Stream purpose, std::uint64_t index = 0) {
        std::uint64_t mix = seed;
        std::uint64_t a = splitmix64(mix);
        std::uint64_t tag = static_cast<std::uint64_t>(purpose) * 0xD1B54A32D192ED03ULL + index;
        std::uint64_t b = splitmix64(tag);
        return Xoshiro256(a ^ b);
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }

    result_type operator()() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, bound), bound > 0. Lemire's nearly-divisionless method.
    std::uint64_t below(std::uint64_t bound) {
        unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (low < threshold) {
                m = static_cast<unsigned __int128>((*this)()) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<std::uint64_t, 4> s_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace ssleval

#endif  // SSLEVAL_RNG_HPP
