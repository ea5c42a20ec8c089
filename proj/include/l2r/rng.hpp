#pragma once

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <random>
#include <string_view>
#include <vector>

namespace l2r {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Stable seed derivation: same (base, tag) gives the same stream on every
// platform, so per-frame / per-cell work can run in any order or thread count.
inline uint64_t derive_seed(uint64_t base, std::string_view tag) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a 64
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return splitmix64(base ^ h);
}

inline uint64_t derive_seed(uint64_t base, int64_t a, int64_t b) {
    uint64_t s = splitmix64(base ^ splitmix64(static_cast<uint64_t>(a)));
    return splitmix64(s ^ static_cast<uint64_t>(b));
}

// Deterministic RNG. mt19937_64 output is pinned by the standard; the
// distributions below are hand-rolled because std:: distributions are not
// bit-stable across library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next() { return engine_(); }

    // Unbiased integer in [0, n). n must be > 0.
    uint64_t bounded(uint64_t n) {
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            const uint64_t r = next();
            if (r >= threshold) return r % n;
        }
    }

    // Uniform double in [0, 1), 53-bit resolution.
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    // Box-Muller; consumes two draws.
    double normal(double mean, double sd) {
        double u1 = unit();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sd * r * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    std::mt19937_64 engine_;
};

// K distinct indices out of [0, n), uniform without replacement, returned in
// ascending order. Partial Fisher-Yates, deterministic per rng state.
inline std::vector<size_t> sample_indices(size_t n, size_t k, Rng& rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    if (k > n) k = n;
    for (size_t i = 0; i < k; ++i) {
        const size_t j = i + static_cast<size_t>(rng.bounded(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace l2r
