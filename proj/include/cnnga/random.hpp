#pragma once

#include <cstddef>
#include <cstdint>
#include <iterator>
#include <random>
#include <string_view>
#include <utility>

namespace cnnga {

/// Engine used for every stochastic decision. Its output sequence is fixed by the C++ standard;
/// the draw helpers below replace the <random> distributions, whose algorithms are
/// implementation-defined, so histories reproduce across standard libraries.
using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// FNV-1a, 64 bit.
constexpr std::uint64_t hash_string(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view key) noexcept {
    return derive_seed(seed, hash_string(key));
}

/// Uniform integer in [0, n). n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    const std::uint64_t bound = n;
    // Reject the top partial bucket so every residue is equally likely.
    const std::uint64_t limit = Rng::max() - (Rng::max() % bound + 1) % bound;
    std::uint64_t x = rng();
    while (x > limit) {
        x = rng();
    }
    return static_cast<std::size_t>(x % bound);
}

/// Uniform real in [0, 1) with 53 random bits.
inline double uniform_real(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_real(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_real(rng);
}

inline bool bernoulli(Rng& rng, double p) {
    return uniform_real(rng) < p;
}

/// Fisher-Yates shuffle driven by uniform_index.
template <std::random_access_iterator It>
void shuffle(It first, It last, Rng& rng) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = uniform_index(rng, i);
        using std::swap;
        swap(first[i - 1], first[j]);
    }
}

} // namespace cnnga
