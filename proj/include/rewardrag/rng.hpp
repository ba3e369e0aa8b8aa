#pragma once

#include <cstdint>
#include <random>
#include <vector>

// Deterministic randomness helpers. Everything here is specified down to the
// draw order so an independent reimplementation can reproduce results exactly:
// the engine is std::mt19937_64 (fully specified by the standard) and all
// derived draws avoid std::uniform_*_distribution, whose output is
// implementation-defined.

namespace rewardrag::rng {

using Engine = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double uniform_double(Engine& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). Modulo reduction; the bias is negligible for
/// the pool sizes used here and keeps the draw reproducible.
inline std::uint64_t uniform_below(Engine& g, std::uint64_t n) {
  return g() % n;
}

/// In-place Fisher-Yates shuffle, iterating from the back.
template <typename T>
void shuffle(std::vector<T>& v, Engine& g) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_below(g, i));
    std::swap(v[i - 1], v[j]);
  }
}

/// Draw `n` distinct indices from [0, m) by partial Fisher-Yates:
/// for step i, pick j uniformly from [i, m) and swap. Returns the first n
/// entries in draw order. Requires n <= m.
std::vector<std::size_t> sample_without_replacement(std::size_t m, std::size_t n,
                                                    Engine& g);

}  // namespace rewardrag::rng
