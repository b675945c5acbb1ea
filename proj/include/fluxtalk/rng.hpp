#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fluxtalk {

// SplitMix64 finaliser; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Folds a list of keys (seed, scan kind, column index, ...) into one seed.
constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto k : keys) h = mix64(h ^ mix64(k));
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::initializer_list<std::uint64_t> keys) { return Rng(derive_seed(keys)); }

}  // namespace fluxtalk
