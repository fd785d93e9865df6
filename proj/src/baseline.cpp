#include "dne/baseline.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>

#include "dne/error.hpp"
#include "dne/parallel.hpp"
#include "dne/random.hpp"

namespace dne {

SgdResult sgd_train(const SgdConfig& config, const NetworkSpec& spec, const Dataset& train,
                    const EpochCallback& on_epoch) {
  if (train.empty()) throw PreconditionError("sgd_train needs a non-empty training set");
  if (!(config.learning_rate >= 0.0)) throw PreconditionError("learning_rate must be >= 0");
  if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0)) {
    throw PreconditionError("dropout_rate must lie in [0, 1)");
  }
  if (config.epochs < 0) throw PreconditionError("epochs must be >= 0");

  const NetworkSpec net = spec.with_dropout(config.dropout_rate);
  const ForwardMode mode = net.dropout_rate > 0.0 ? ForwardMode::StochasticDropout : ForwardMode::Deterministic;
  const std::uint64_t mask_root = derive_seed(config.seed, "sgd-dropout");

  SgdResult result;
  result.weights = init_weights(net, derive_seed(config.seed, "init-weights"));
  std::vector<float> grad(result.weights.size());
  const double n = static_cast<double>(train.size());

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const OrbitSample& s = train.samples[i];
      const std::uint64_t mask_seed = hash_key({mask_root, static_cast<std::uint64_t>(epoch), i});
      const float loss = backward_as<float>(net, result.weights.view(), s, s.label, mode, mask_seed, grad);
      if (!std::isfinite(loss)) {
        throw NumericError("SGD diverged: non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                           s.id);
      }
      loss_sum += loss;
      for (std::size_t j = 0; j < grad.size(); ++j) {
        result.weights.values[j] = static_cast<float>(static_cast<double>(result.weights.values[j]) -
                                                      config.learning_rate * static_cast<double>(grad[j]));
      }
    }
    const std::vector<Label> predicted = predict_batch(net, result.weights.view(), train.samples);
    int correct = 0;
    for (std::size_t i = 0; i < train.size(); ++i) correct += predicted[i] == train.samples[i].label ? 1 : 0;

    SgdCurveRecord rec{epoch, loss_sum / n, static_cast<double>(correct) / n};
    result.curve.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (correct == static_cast<int>(train.size()) && result.first_full_accuracy_epoch < 0) {
      result.first_full_accuracy_epoch = epoch;
      if (config.stop_at_full_accuracy) break;
    }
  }
  return result;
}

ClassDistribution mc_predict(const WeightVector& w, const NetworkSpec& spec, const OrbitSample& sample,
                             const McEnsembleConfig& config, std::uint64_t seed) {
  if (!(spec.dropout_rate > 0.0)) throw PreconditionError("MC dropout needs a spec with dropout_rate > 0");
  if (config.n_passes < 1) throw PreconditionError("n_passes must be >= 1");
  int tumor_votes = 0;
  for (int k = 0; k < config.n_passes; ++k) {
    const std::uint64_t pass_seed = hash_key({seed, static_cast<std::uint64_t>(k)});
    if (forward(spec, w, sample, ForwardMode::StochasticDropout, pass_seed).predicted() == Label::Tumor) {
      ++tumor_votes;
    }
  }
  const double t = static_cast<double>(tumor_votes) / config.n_passes;
  return {t, 1.0 - t};
}

UqReport mc_uq_report(const WeightVector& w, const NetworkSpec& spec, const Dataset& test_set,
                      const McEnsembleConfig& config, std::uint64_t seed, double threshold) {
  if (test_set.empty()) throw PreconditionError("mc_uq_report needs a non-empty test set");
  std::vector<ClassDistribution> dists(test_set.size());
  parallel_for(test_set.size(), config.threads, [&](std::size_t i) {
    const std::uint64_t sample_seed = hash_key({seed, static_cast<std::uint64_t>(i), 0x4D43ULL});
    dists[i] = mc_predict(w, spec, test_set.samples[i], config, sample_seed);
  });
  return report_from_distributions("mc_dropout", static_cast<std::size_t>(config.n_passes), test_set.samples,
                                   dists, threshold);
}

void write_sgd_curve_csv(std::ostream& out, std::span<const SgdCurveRecord> curve) {
  out << "epoch,mean_loss,train_accuracy\n";
  for (const SgdCurveRecord& r : curve) {
    out << r.epoch << ',' << std::fixed << std::setprecision(6) << r.mean_loss << ',' << r.train_accuracy
        << '\n';
    out.unsetf(std::ios::floatfield);
  }
}

}  // namespace dne
