#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dne/data.hpp"

namespace dne {

enum class Architecture { DualBranch, SingleBranch };

enum class ForwardMode { Deterministic, StochasticDropout };

/// Shape of one of the two supported CNN classifiers.
///
/// Branch: conv3x3(1->c1) relu pool, conv3x3(c1->c2) relu pool, flatten,
/// linear(->branch_width) relu [dropout]. DualBranch runs the same branch
/// weights on both globes and concatenates; SingleBranch sees only `left`.
/// Head: linear(->head_width) relu, linear(->2), softmax.
struct NetworkSpec {
  Architecture architecture = Architecture::DualBranch;
  int input_height = kImageSide;
  int input_width = kImageSide;
  int conv1_channels = 8;
  int conv2_channels = 16;
  int branch_width = 32;
  int head_width = 16;
  double dropout_rate = 0.0;

  static constexpr int kClasses = 2;

  static NetworkSpec dual_branch() { return {}; }
  static NetworkSpec single_branch() {
    NetworkSpec s;
    s.architecture = Architecture::SingleBranch;
    return s;
  }
  NetworkSpec with_dropout(double rate) const {
    NetworkSpec s = *this;
    s.dropout_rate = rate;
    return s;
  }

  int branch_count() const noexcept { return architecture == Architecture::DualBranch ? 2 : 1; }

  bool operator==(const NetworkSpec&) const = default;
};

enum class LayerKind { Conv3x3, Relu, MaxPool2, Flatten, Linear, Dropout, Concat, Softmax };

struct ParamSlice {
  std::size_t offset = 0;
  std::size_t count = 0;
};

/// One stage of the pipeline. Branch stages are listed once (shared weights).
struct LayerInfo {
  std::string name;
  LayerKind kind;
  std::array<int, 3> in_shape;   ///< (channels, height, width); linear uses (features, 1, 1)
  std::array<int, 3> out_shape;
  ParamSlice weights;
  ParamSlice bias;
};

/// Throws ShapeError when the layer shapes do not compose.
std::vector<LayerInfo> describe_layers(const NetworkSpec& spec);
std::size_t parameter_count(const NetworkSpec& spec);

/// Persisted spec identifiers (DNEW header). 0 means "not a registered spec".
inline constexpr std::uint32_t kSpecIdDualBranch = 1;
inline constexpr std::uint32_t kSpecIdSingleBranch = 2;
std::uint32_t spec_id(const NetworkSpec& spec) noexcept;
NetworkSpec spec_from_id(std::uint32_t id);

/// Flat parameter vector in `describe_layers` order (weights then bias per layer).
struct WeightVector {
  std::vector<float> values;

  WeightVector() = default;
  explicit WeightVector(std::size_t n, float fill = 0.0f) : values(n, fill) {}
  explicit WeightVector(std::vector<float> v) : values(std::move(v)) {}

  std::size_t size() const noexcept { return values.size(); }
  std::span<const float> view() const noexcept { return values; }
  std::span<float> view() noexcept { return values; }

  bool operator==(const WeightVector&) const = default;
};

/// Throws ShapeError if `w` does not parameterize `spec` or holds non-finite values.
void check_weights(const NetworkSpec& spec, std::span<const float> w);

/// He-normal weights (sqrt(2 / fan_in)), zero biases; pure in (spec, seed).
WeightVector init_weights(const NetworkSpec& spec, std::uint64_t seed);

struct ClassDistribution {
  double p_tumor = 0.5;
  double p_normal = 0.5;

  /// Exact ties resolve to Normal.
  Label predicted() const noexcept { return p_tumor > p_normal ? Label::Tumor : Label::Normal; }
};

ClassDistribution forward(const NetworkSpec& spec, const WeightVector& w, const OrbitSample& sample,
                          ForwardMode mode = ForwardMode::Deterministic, std::uint64_t rng_seed = 0);
ClassDistribution forward(const NetworkSpec& spec, std::span<const float> w, const OrbitSample& sample,
                          ForwardMode mode = ForwardMode::Deterministic, std::uint64_t rng_seed = 0);

/// Argmax class under the deterministic forward pass.
Label predict(const NetworkSpec& spec, std::span<const float> w, const OrbitSample& sample);

/// Deterministic argmax for every sample, reusing one set of buffers.
std::vector<Label> predict_batch(const NetworkSpec& spec, std::span<const float> w,
                                 std::span<const OrbitSample> samples);

/// Dropout mask seed of branch `branch` (0 = left) for a forward with `rng_seed`.
std::uint64_t branch_mask_seed(std::uint64_t rng_seed, int branch) noexcept;

struct LossGradient {
  double loss = 0.0;
  WeightVector grad;
};

/// Cross-entropy -log p(label) and its gradient. Dropout is active iff
/// spec.dropout_rate > 0, with the mask a forward call with the same seed draws.
LossGradient backward(const NetworkSpec& spec, const WeightVector& w, const OrbitSample& sample,
                      Label label, std::uint64_t rng_seed = 0);

// Precision-generic entry points (float and double are instantiated). The
// double path backs the finite-difference checks.

/// Returns (p_normal, p_tumor).
template <typename T>
std::array<T, 2> probabilities_as(const NetworkSpec& spec, std::span<const T> w,
                                  const OrbitSample& sample, ForwardMode mode, std::uint64_t rng_seed);

/// Writes d loss / d w into `grad` (overwritten) and returns the loss.
template <typename T>
T backward_as(const NetworkSpec& spec, std::span<const T> w, const OrbitSample& sample, Label label,
              ForwardMode mode, std::uint64_t rng_seed, std::span<T> grad);

}  // namespace dne
