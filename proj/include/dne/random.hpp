#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>

namespace dne {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Folds a list of integers into one 64-bit stream key.
std::uint64_t hash_key(std::initializer_list<std::uint64_t> parts) noexcept;

/// Derives a sub-seed from a parent seed and a fixed textual label.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) noexcept;

/// Counter-based generator: draw n of a stream is mix64(key + n * gamma), so any
/// position can be reproduced without replaying the stream.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  std::uint64_t next_u64() noexcept {
    return mix64(key_ + (counter_++) * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes two draws per call.
  double normal() noexcept;

  /// Fills `out` with i.i.d. standard normals (both Box-Muller outputs are used).
  void fill_normal(std::span<float> out) noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace dne
