#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace great {

// Derives independent deterministic streams from one run seed. Each component
// (model init, data order, noise, attacks) gets its own tag so pipelines that
// consume different amounts of randomness stay aligned on the shared streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    std::uint64_t z = seed ^ h;
    // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view tag) {
    return std::mt19937_64(mix_seed(seed, tag));
}

}  // namespace great
