#pragma once

#include <cstdint>
#include <random>

namespace qmeas {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Sub-seed for stream (tag, index) under master:
///   splitmix64(splitmix64(master ^ splitmix64(tag)) ^ index)
/// Distinct (tag, index) pairs give statistically independent engines and the
/// value depends on nothing else, so streams can be generated in any order.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t index) noexcept {
    return splitmix64(splitmix64(master ^ splitmix64(tag)) ^ index);
}

}  // namespace qmeas
