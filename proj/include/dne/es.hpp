#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "dne/data.hpp"
#include "dne/network.hpp"

namespace dne {

class EnsembleSink;

/// Hyperparameters of the antithetic ES loop.
struct EsConfig {
  double alpha = 0.12;
  double mu = 0.05;
  int population_pairs = 40;
  std::int64_t n_epochs = 100000;
  int r_max = 0;  ///< 0 = take it from the objective (|D_T|)
  std::uint64_t seed = 0;
  int n_conv = 500;
  bool early_stop = true;
  int threads = 1;  ///< evaluation workers; never changes results
};

void validate(const EsConfig& config);

/// Address of one reproducible perturbation vector.
struct NoiseKey {
  std::uint64_t seed = 0;
  std::uint64_t generation = 0;
  std::uint32_t member_index = 0;
};

/// Standard-normal vector fully determined by `key`.
std::vector<float> sample_epsilon(const NoiseKey& key, std::size_t dim);

struct PerturbedPair {
  WeightVector plus;
  WeightVector minus;
};

/// w +/- mu * eps.
PerturbedPair perturb_pair(std::span<const float> w, std::span<const float> eps, double mu);

/// Writes w + sign * mu * eps into `out` (sign is +1 or -1).
void perturb_into(std::span<const float> w, std::span<const float> eps, double mu, int sign,
                  std::span<float> out);

/// Number of true positives plus true negatives under argmax prediction.
int fitness(const NetworkSpec& spec, std::span<const float> w, std::span<const OrbitSample> dataset);

/// Rank-shaped utilities. Input is ordered [0+, 0-, 1+, 1-, ...]; rank k = 0 is
/// the best reward and ties keep input order. Utilities sum to 2.
std::vector<double> rank_normalize(std::span<const int> raw_rewards);

enum class Sign : std::uint8_t { Plus, Minus };

struct MemberEval {
  std::uint32_t member_index = 0;
  Sign sign = Sign::Plus;
  int raw_reward = 0;
  int validation_reward = 0;
  double utility = 0.0;
};

/// One generation's 2p evaluations in [0+, 0-, 1+, 1-, ...] order.
struct PopulationEval {
  std::int64_t generation = 0;
  std::vector<MemberEval> records;

  std::size_t pairs() const noexcept { return records.size() / 2; }
};

/// (1/p) * sum_i (u_i+ - u_i-) / (2 mu) * eps_i, accumulated in index order.
WeightVector es_gradient(const PopulationEval& eval, std::span<const std::vector<float>> epsilons, double mu);

/// Same estimator with the perturbations regenerated from their keys.
WeightVector es_gradient(const PopulationEval& eval, std::span<const NoiseKey> keys, double mu,
                         std::size_t dim);

/// What ES needs from a model + data pairing.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t dimension() const = 0;
  virtual WeightVector initial_weights(std::uint64_t seed) const = 0;
  virtual int train_reward(std::span<const float> w) const = 0;
  virtual int validation_reward(std::span<const float> w) const = 0;
  virtual int max_train_reward() const = 0;
};

/// CNN classifier scored by TP + TN on a training and a validation set.
class NetworkObjective final : public Objective {
 public:
  NetworkObjective(NetworkSpec spec, const Dataset& train, const Dataset& validation);

  std::size_t dimension() const override { return dimension_; }
  WeightVector initial_weights(std::uint64_t seed) const override;
  int train_reward(std::span<const float> w) const override;
  int validation_reward(std::span<const float> w) const override;
  int max_train_reward() const override { return static_cast<int>(train_.size()); }

  const NetworkSpec& spec() const noexcept { return spec_; }

 private:
  NetworkSpec spec_;
  const Dataset& train_;
  const Dataset& validation_;
  std::size_t dimension_;
};

struct CurveRecord {
  std::int64_t generation = 0;
  int train_best = 0;
  double train_mean = 0.0;
  int val_best = 0;
  double val_mean = 0.0;

  bool operator==(const CurveRecord&) const = default;
};

struct StepOutcome {
  WeightVector next;
  PopulationEval eval;
  CurveRecord curve;
};

NoiseKey noise_key(const EsConfig& config, std::int64_t generation, std::uint32_t member_index);

/// One generation: perturb, evaluate all 2p members, offer them to `sink`
/// (may be null), rank-shape, estimate the gradient, and step uphill.
StepOutcome es_step(const WeightVector& w, std::int64_t generation, const EsConfig& config,
                    const Objective& objective, EnsembleSink* sink);

struct TrainResult {
  WeightVector weights;
  std::vector<CurveRecord> curve;
  std::int64_t generations = 0;
  bool reached_r_max = false;
  bool stopped_early = false;
};

using GenerationCallback = std::function<void(const CurveRecord&)>;

/// Runs es_step until n_epochs or until the population best has held r_max
/// for n_conv consecutive generations (when early_stop is set).
TrainResult train_es(const EsConfig& config, const Objective& objective, EnsembleSink* sink,
                     const GenerationCallback& on_generation = {});

/// `generation,train_best,train_mean,val_best,val_mean` with one row per record.
void write_curve_csv(std::ostream& out, std::span<const CurveRecord> curve);
std::vector<CurveRecord> read_curve_csv(std::istream& in);

}  // namespace dne
