#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sfa {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent streams from (seed, tag...).
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = splitmix64(seed);
    for (auto t : tags) {
        s = splitmix64(s ^ t);
    }
    return s;
}

}  // namespace sfa
