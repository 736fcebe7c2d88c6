#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace distilshield {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed for a named stage, derived from the global seed so that each stage
/// owns an independent stream regardless of execution order.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (const char c : stage) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(seed ^ mix64(h));
}

/// Seed derived from the bit patterns of a vector of doubles.
std::uint64_t derive_seed(std::uint64_t seed, std::span<const double> values);

}  // namespace distilshield
