#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sdforge {

/// Mixes a 64-bit value (splitmix64 finalizer).
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derives an independent sub-stream seed from the run's root seed, a purpose
/// label ("init", "pool", "border", ...) and an iteration counter.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                    std::uint64_t iteration = 0) noexcept {
    return mix64(mix64(root ^ fnv1a(label)) + mix64(iteration + 0x632be59bd9b4e019ULL));
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed) { return Engine(seed); }

/// Uniform double in [0, 1) built from the top 53 bits of one engine draw.
inline double uniform01(Engine& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n) by rejection, so results do not depend on the
/// standard library's distribution implementation.
inline std::uint64_t uniform_index(Engine& eng, std::uint64_t n) {
    const std::uint64_t limit = Engine::max() - Engine::max() % n;
    std::uint64_t r;
    do {
        r = eng();
    } while (r >= limit);
    return r % n;
}

} // namespace sdforge
