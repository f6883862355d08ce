#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace neuroaps {

// splitmix64 finalizer, used for seed derivation and stream splitting.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent sub-seed from a base seed and any number of tag words.
template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t seed, Tags... tags) {
    ((seed = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(tags)))), ...);
    return splitmix64(seed);
}

// FNV-1a string hash, handy for tagging derived streams by name.
inline std::uint64_t tag_hash(const char* s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (; *s; ++s) h = (h ^ static_cast<std::uint8_t>(*s)) * 0x100000001b3ULL;
    return h;
}

/// Deterministic random stream. The engine is std::mt19937_64 (portable bit
/// stream); the value mappings are implemented here because the standard
/// library's distributions are implementation-defined and runs must be
/// byte-identical per seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling, exact for any n > 0.
    std::uint64_t uniform_index(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n + 1) % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x > limit);
        return x % n;
    }

    /// Standard normal via Box-Muller; the second value of each pair is cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    /// Fisher-Yates shuffle (indices drawn from this stream).
    template <typename Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace neuroaps
