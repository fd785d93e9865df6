#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace dne {

/// Inverted-dropout multipliers: each unit is 0 with probability `rate`, else
/// 1 / (1 - rate). Unit j depends only on (mask_seed, j).
std::vector<float> dropout_mask(std::size_t units, double rate, std::uint64_t mask_seed);

/// Training mode applies `dropout_mask`; inference (training = false) is the identity.
std::vector<float> dropout_forward(std::span<const float> activations, double rate,
                                   std::uint64_t mask_seed, bool training);

}  // namespace dne
