#include "dne/dropout.hpp"

#include <string>

#include "dne/error.hpp"
#include "dne/random.hpp"

namespace dne {

std::vector<float> dropout_mask(std::size_t units, double rate, std::uint64_t mask_seed) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw PreconditionError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  std::vector<float> mask(units, 1.0f);
  if (rate == 0.0) return mask;
  const auto keep_scale = static_cast<float>(1.0 / (1.0 - rate));
  for (std::size_t j = 0; j < units; ++j) {
    CounterRng rng(mask_seed, j);
    mask[j] = rng.uniform() < rate ? 0.0f : keep_scale;
  }
  return mask;
}

std::vector<float> dropout_forward(std::span<const float> activations, double rate,
                                   std::uint64_t mask_seed, bool training) {
  std::vector<float> out(activations.begin(), activations.end());
  if (!training || rate == 0.0) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw PreconditionError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    return out;
  }
  const std::vector<float> mask = dropout_mask(activations.size(), rate, mask_seed);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] *= mask[j];
  return out;
}

}  // namespace dne
