#pragma once

#include <cstdint>
#include <random>

namespace flforge {

using Rng = std::mt19937_64;

/// Deterministic per-index substream: seed XOR index. Index 0 is the parent
/// stream itself, which is fine because each stream is consumed by exactly
/// one owner.
inline Rng substream(std::uint64_t seed, std::uint64_t index) { return Rng(seed ^ index); }

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

}  // namespace flforge
