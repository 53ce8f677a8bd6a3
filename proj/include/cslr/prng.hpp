#pragma once

// Portable pseudo-random numbers. Every stream in the project comes from here
// so corpora and training runs are bit-reproducible across platforms.
//
// Generator: xorshift64* (Vigna, "An experimental exploration of Marsaglia's
// xorshift generators, scrambled"), shifts (12, 25, 27), output multiplier
// 0x2545F4914F6CDD1D. Seeds are expanded with splitmix64 so that nearby seeds
// give unrelated streams and the state is never zero.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace cslr {

inline std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Xorshift64Star {
public:
    explicit Xorshift64Star(std::uint64_t seed = 0) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        std::uint64_t s = seed;
        state_ = splitmix64(s);
        if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;
    }

    std::uint64_t next() {
        state_ ^= state_ >> 12;
        state_ ^= state_ << 25;
        state_ ^= state_ >> 27;
        return state_ * 0x2545F4914F6CDD1DULL;
    }

    // Uniform in [0, 1) with 53 bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], by rejection to avoid modulo bias.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(next());
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return lo + static_cast<std::int64_t>(x % span);
    }

    // Standard normal by Box-Muller; the second variate is discarded so the
    // stream position depends only on the number of calls.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t state() const noexcept { return state_; }
    void set_state(std::uint64_t s) noexcept { state_ = s == 0 ? 0x9E3779B97F4A7C15ULL : s; }

    // Child stream keyed by a tag; used to give splits and subsystems
    // independent streams from one seed.
    static Xorshift64Star derive(std::uint64_t seed, std::uint64_t tag) {
        std::uint64_t s = seed ^ (tag * 0xD1B54A32D192ED03ULL);
        return Xorshift64Star(splitmix64(s));
    }

private:
    std::uint64_t state_ = 0;
};

// Fisher-Yates with the project generator.
template <class Vec>
void shuffle(Vec& v, Xorshift64Star& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
        using std::swap;
        swap(v[i - 1], v[j]);
    }
}

}  // namespace cslr
