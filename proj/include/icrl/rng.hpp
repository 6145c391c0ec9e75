#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace icrl {

using Rng = std::mt19937_64;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a; only used to turn stream labels into seeds.
constexpr std::uint64_t hash_label(std::string_view label) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Every random stream in the project is derived from the single run seed and
// a fixed label, optionally with an index (episode number, epoch, ...).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                                    std::uint64_t index = 0) noexcept {
  return mix64(mix64(seed ^ hash_label(label)) + index);
}

inline Rng make_rng(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, label, index));
}

}  // namespace icrl
