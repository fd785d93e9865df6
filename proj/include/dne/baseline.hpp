#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "dne/data.hpp"
#include "dne/ensemble.hpp"
#include "dne/network.hpp"

namespace dne {

/// Plain SGD with dropout: batch size 1, fixed sample order, fresh mask per step.
struct SgdConfig {
  double learning_rate = 0.001;
  int epochs = 5000;
  double dropout_rate = 0.5;
  std::uint64_t seed = 0;
  bool stop_at_full_accuracy = false;
};

struct McEnsembleConfig {
  int n_passes = 500;
  int threads = 1;
};

struct SgdCurveRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;  ///< deterministic (dropout off) after the epoch

  bool operator==(const SgdCurveRecord&) const = default;
};

struct SgdResult {
  WeightVector weights;
  std::vector<SgdCurveRecord> curve;
  int first_full_accuracy_epoch = -1;  ///< -1 if the training set was never fit
};

using EpochCallback = std::function<void(const SgdCurveRecord&)>;

/// Trains `spec` with its dropout rate replaced by config.dropout_rate.
/// Throws NumericError if the loss stops being finite.
SgdResult sgd_train(const SgdConfig& config, const NetworkSpec& spec, const Dataset& train,
                    const EpochCallback& on_epoch = {});

/// Relative argmax frequencies over n_passes forwards with dropout active.
ClassDistribution mc_predict(const WeightVector& w, const NetworkSpec& spec, const OrbitSample& sample,
                             const McEnsembleConfig& config, std::uint64_t seed);

/// MC-dropout distributions pushed through the shared UQ report.
UqReport mc_uq_report(const WeightVector& w, const NetworkSpec& spec, const Dataset& test_set,
                      const McEnsembleConfig& config, std::uint64_t seed,
                      double threshold = kDefaultEntropyThreshold);

/// `epoch,mean_loss,train_accuracy`.
void write_sgd_curve_csv(std::ostream& out, std::span<const SgdCurveRecord> curve);

}  // namespace dne
