#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cnpr {

// All randomness in the project flows from one global seed through named
// substreams, so each stage (cohort, pairs, dropout, rl, bootstrap, forest)
// is independently reproducible. Distribution transforms are implemented
// here instead of <random>'s, whose outputs differ across standard
// libraries; run-to-run and cross-platform determinism is a tested
// property of the pipeline.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Derive a child seed from (seed, name) or (seed, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
    return splitmix64(seed ^ fnv1a64(name));
}
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
}

class RngStream {
  public:
    explicit RngStream(std::uint64_t raw_seed) : eng_(raw_seed) {}
    RngStream(std::uint64_t seed, std::string_view name) : eng_(derive_seed(seed, name)) {}

    RngStream substream(std::string_view name) {
        return RngStream(derive_seed(next_u64(), name));
    }

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // Standard normal via Box-Muller; two uniforms per draw, no cached spare.
    double normal() {
        double u1 = 1.0 - uniform(); // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Uniform integer in [0, n) via Lemire's multiply-shift.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n <= 1) return 0;
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::uint64_t>(m >> 64);
    }

    int uniform_int(int n) { return static_cast<int>(uniform_index(static_cast<std::uint64_t>(n))); }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // First k elements of a seeded Fisher-Yates over [0, n): a uniform
    // k-subset, order randomized.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        if (k > n) k = n;
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = i + uniform_index(n - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

  private:
    std::mt19937_64 eng_;
};

} // namespace cnpr
