#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace vga {

/// Deterministic random source. The mt19937_64 engine output is pinned by the
/// standard, and the distributions below are hand-rolled from raw engine
/// words, so a seed reproduces the same stream on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n). n must be positive.
    std::size_t uniform_index(std::size_t n) {
        const std::uint64_t bound = n;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do { x = engine_(); } while (x >= limit);
        return static_cast<std::size_t>(x % bound);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (pair cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::swap(v[i], v[uniform_index(i + 1)]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline std::uint64_t hash_str(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over the xor; good diffusion for seed derivation.
    std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

/// Independent stream derived from a master seed, a tag and an index.
/// Distinct (tag, index) pairs give uncorrelated streams.
inline Rng derived_rng(std::uint64_t master, std::string_view tag, std::uint64_t index = 0) {
    return Rng(hash_combine(hash_combine(master, hash_str(tag)), index));
}

}  // namespace vga
