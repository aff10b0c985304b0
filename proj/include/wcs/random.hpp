#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace wcs {

using Rng = std::mt19937_64;

/// Derives an independent generator from a master seed and a path of
/// integer labels (episode, worker, stream, ...). Same path, same stream.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * path.size());
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (auto p : path) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  auto rng = derive_rng(seed, path);
  return rng();
}

}  // namespace wcs
