#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace iif {

using Rng = std::mt19937_64;

// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed for a named consumer of a run seed, so
// that adding draws in one module never perturbs another.
constexpr std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view stream) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(run_seed ^ mix64(h));
}

inline Rng make_rng(std::uint64_t run_seed, std::string_view stream) {
  return Rng(derive_seed(run_seed, stream));
}

}  // namespace iif
