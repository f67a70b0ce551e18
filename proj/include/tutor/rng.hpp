#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

namespace tutor {

// splitmix64: cheap, well-mixed 64-bit hash step. Used to derive independent
// sub-seeds so that every stochastic component can be re-run in isolation and
// reproduce exactly what it did inside a larger pipeline.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic sub-seed: chain the base seed through each path component.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = splitmix64(base);
    for (std::uint64_t p : path) s = splitmix64(s ^ p);
    return s;
}

inline std::uint64_t derive_seed(std::uint64_t base, const std::string& tag) {
    return derive_seed(base, {fnv1a64(tag)});
}

inline std::uint64_t derive_seed(std::uint64_t base, const std::string& tag,
                                 std::uint64_t index) {
    return derive_seed(base, {fnv1a64(tag), index});
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace tutor
