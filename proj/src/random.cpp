#include "dne/random.hpp"

#include <cmath>
#include <numbers>

namespace dne {

std::uint64_t hash_key(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p));
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) noexcept {
  // FNV-1a over the label, then mixed with the parent seed.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return hash_key({seed, h});
}

namespace {

// u1 is drawn from (0, 1] so the logarithm stays finite.
std::pair<double, double> box_muller(std::uint64_t a, std::uint64_t b) noexcept {
  const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(theta), r * std::sin(theta)};
}

}  // namespace

double CounterRng::normal() noexcept {
  const std::uint64_t a = next_u64();
  const std::uint64_t b = next_u64();
  return box_muller(a, b).first;
}

void CounterRng::fill_normal(std::span<float> out) noexcept {
  std::size_t i = 0;
  for (; i + 1 < out.size(); i += 2) {
    const std::uint64_t a = next_u64();
    const std::uint64_t b = next_u64();
    const auto [z0, z1] = box_muller(a, b);
    out[i] = static_cast<float>(z0);
    out[i + 1] = static_cast<float>(z1);
  }
  if (i < out.size()) out[i] = static_cast<float>(normal());
}

}  // namespace dne
