#include "dne/es.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "dne/ensemble.hpp"
#include "dne/error.hpp"
#include "dne/parallel.hpp"
#include "dne/random.hpp"

namespace dne {

void validate(const EsConfig& c) {
  if (!(c.alpha >= 0.0) || !std::isfinite(c.alpha)) throw PreconditionError("alpha must be finite and >= 0");
  if (!(c.mu > 0.0) || !std::isfinite(c.mu)) throw PreconditionError("mu must be finite and > 0");
  if (c.population_pairs < 1) throw PreconditionError("population_pairs must be >= 1");
  if (c.n_epochs < 0) throw PreconditionError("n_epochs must be >= 0");
  if (c.r_max < 0) throw PreconditionError("r_max must be >= 0");
  if (c.n_conv < 1) throw PreconditionError("n_conv must be >= 1");
}

std::vector<float> sample_epsilon(const NoiseKey& key, std::size_t dim) {
  std::vector<float> eps(dim);
  CounterRng rng(hash_key({key.seed, key.generation, key.member_index}));
  rng.fill_normal(eps);
  return eps;
}

void perturb_into(std::span<const float> w, std::span<const float> eps, double mu, int sign,
                  std::span<float> out) {
  if (w.size() != eps.size() || w.size() != out.size()) {
    throw ShapeError("perturb: weight (" + std::to_string(w.size()) + ") and noise (" +
                     std::to_string(eps.size()) + ") lengths differ");
  }
  const double s = sign >= 0 ? mu : -mu;
  for (std::size_t j = 0; j < w.size(); ++j) {
    out[j] = static_cast<float>(static_cast<double>(w[j]) + s * static_cast<double>(eps[j]));
  }
}

PerturbedPair perturb_pair(std::span<const float> w, std::span<const float> eps, double mu) {
  PerturbedPair pair{WeightVector(w.size()), WeightVector(w.size())};
  perturb_into(w, eps, mu, +1, pair.plus.view());
  perturb_into(w, eps, mu, -1, pair.minus.view());
  return pair;
}

int fitness(const NetworkSpec& spec, std::span<const float> w, std::span<const OrbitSample> dataset) {
  if (dataset.empty()) throw PreconditionError("fitness needs a non-empty dataset");
  const std::vector<Label> predicted = predict_batch(spec, w, dataset);
  int reward = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) reward += predicted[i] == dataset[i].label ? 1 : 0;
  return reward;
}

std::vector<double> rank_normalize(std::span<const int> raw_rewards) {
  const std::size_t n = raw_rewards.size();
  if (n < 2 || n % 2 != 0) {
    throw PreconditionError("rank_normalize needs 2p >= 2 rewards, got " + std::to_string(n));
  }
  const double p = static_cast<double>(n / 2);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return raw_rewards[a] > raw_rewards[b]; });

  std::vector<double> shaped(n);
  double denominator = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    shaped[k] = std::max(0.0, std::log2(p + 1.0) - std::log2(static_cast<double>(k) + 1.0));
    denominator += shaped[k];
  }
  std::vector<double> utilities(n);
  const double offset = 1.0 / (2.0 * p);
  for (std::size_t k = 0; k < n; ++k) {
    const double share = denominator > 0.0 ? shaped[k] / denominator : 1.0 / (2.0 * p);
    utilities[order[k]] = share + offset;
  }
  return utilities;
}

WeightVector es_gradient(const PopulationEval& eval, std::span<const std::vector<float>> epsilons, double mu) {
  const std::size_t p = eval.pairs();
  if (p == 0 || eval.records.size() != 2 * p) throw PreconditionError("es_gradient needs 2p records");
  if (epsilons.size() != p) throw ShapeError("es_gradient needs one perturbation per pair");
  const std::size_t dim = epsilons[0].size();
  std::vector<double> acc(dim, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    if (epsilons[i].size() != dim) throw ShapeError("perturbations have different lengths");
    const double coeff = (eval.records[2 * i].utility - eval.records[2 * i + 1].utility) / (2.0 * mu);
    const std::vector<float>& eps = epsilons[i];
    for (std::size_t j = 0; j < dim; ++j) acc[j] += coeff * static_cast<double>(eps[j]);
  }
  WeightVector g(dim);
  const double inv_p = 1.0 / static_cast<double>(p);
  for (std::size_t j = 0; j < dim; ++j) g.values[j] = static_cast<float>(acc[j] * inv_p);
  return g;
}

WeightVector es_gradient(const PopulationEval& eval, std::span<const NoiseKey> keys, double mu,
                         std::size_t dim) {
  std::vector<std::vector<float>> eps;
  eps.reserve(keys.size());
  for (const NoiseKey& k : keys) eps.push_back(sample_epsilon(k, dim));
  return es_gradient(eval, eps, mu);
}

// ---------------------------------------------------------------------------

NetworkObjective::NetworkObjective(NetworkSpec spec, const Dataset& train, const Dataset& validation)
    : spec_(spec), train_(train), validation_(validation), dimension_(parameter_count(spec)) {
  if (train.empty()) throw PreconditionError("training set is empty");
  if (validation.empty()) throw PreconditionError("validation set is empty");
}

WeightVector NetworkObjective::initial_weights(std::uint64_t seed) const { return init_weights(spec_, seed); }

int NetworkObjective::train_reward(std::span<const float> w) const {
  return fitness(spec_, w, train_.samples);
}

int NetworkObjective::validation_reward(std::span<const float> w) const {
  return fitness(spec_, w, validation_.samples);
}

// ---------------------------------------------------------------------------

NoiseKey noise_key(const EsConfig& config, std::int64_t generation, std::uint32_t member_index) {
  return {derive_seed(config.seed, "es-noise"), static_cast<std::uint64_t>(generation), member_index};
}

namespace {

int resolve_r_max(const EsConfig& config, const Objective& objective) {
  const int r_max = objective.max_train_reward();
  if (config.r_max != 0 && config.r_max != r_max) {
    throw PreconditionError("r_max " + std::to_string(config.r_max) + " does not match the training set size " +
                            std::to_string(r_max));
  }
  return r_max;
}

}  // namespace

StepOutcome es_step(const WeightVector& w, std::int64_t generation, const EsConfig& config,
                    const Objective& objective, EnsembleSink* sink) {
  validate(config);
  const std::size_t dim = objective.dimension();
  if (w.size() != dim) {
    throw ShapeError("reference weights have " + std::to_string(w.size()) + " values, objective expects " +
                     std::to_string(dim));
  }
  const int r_max = resolve_r_max(config, objective);
  const auto p = static_cast<std::size_t>(config.population_pairs);

  std::vector<std::vector<float>> eps(p);
  parallel_for(p, config.threads, [&](std::size_t i) {
    eps[i] = sample_epsilon(noise_key(config, generation, static_cast<std::uint32_t>(i)), dim);
  });

  StepOutcome out;
  out.eval.generation = generation;
  out.eval.records.resize(2 * p);
  parallel_for(2 * p, config.threads, [&](std::size_t m) {
    const std::size_t i = m / 2;
    const int sign = m % 2 == 0 ? +1 : -1;
    std::vector<float> perturbed(dim);
    perturb_into(w.view(), eps[i], config.mu, sign, perturbed);
    MemberEval& rec = out.eval.records[m];
    rec.member_index = static_cast<std::uint32_t>(i);
    rec.sign = sign > 0 ? Sign::Plus : Sign::Minus;
    rec.raw_reward = objective.train_reward(perturbed);
    rec.validation_reward = objective.validation_reward(perturbed);
  });

  // Harvest and statistics consume records in member order.
  CurveRecord& curve = out.curve;
  curve.generation = generation;
  curve.train_best = 0;
  curve.val_best = 0;
  long long train_sum = 0;
  long long val_sum = 0;
  std::vector<int> rewards(2 * p);
  for (std::size_t m = 0; m < 2 * p; ++m) {
    const MemberEval& rec = out.eval.records[m];
    rewards[m] = rec.raw_reward;
    train_sum += rec.raw_reward;
    val_sum += rec.validation_reward;
    curve.train_best = std::max(curve.train_best, rec.raw_reward);
    curve.val_best = std::max(curve.val_best, rec.validation_reward);
    if (sink != nullptr) {
      sink->offer(r_max, generation, rec.raw_reward, rec.validation_reward, [&] {
        WeightVector member(dim);
        perturb_into(w.view(), eps[rec.member_index], config.mu, rec.sign == Sign::Plus ? +1 : -1, member.view());
        return member;
      });
    }
  }
  curve.train_mean = static_cast<double>(train_sum) / static_cast<double>(2 * p);
  curve.val_mean = static_cast<double>(val_sum) / static_cast<double>(2 * p);

  const std::vector<double> utilities = rank_normalize(rewards);
  for (std::size_t m = 0; m < 2 * p; ++m) out.eval.records[m].utility = utilities[m];

  const WeightVector g = es_gradient(out.eval, eps, config.mu);
  out.next = WeightVector(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    out.next.values[j] =
        static_cast<float>(static_cast<double>(w.values[j]) + config.alpha * static_cast<double>(g.values[j]));
  }
  return out;
}

TrainResult train_es(const EsConfig& config, const Objective& objective, EnsembleSink* sink,
                     const GenerationCallback& on_generation) {
  validate(config);
  const int r_max = resolve_r_max(config, objective);
  TrainResult result;
  result.weights = objective.initial_weights(derive_seed(config.seed, "init-weights"));
  int streak = 0;
  for (std::int64_t t = 0; t < config.n_epochs; ++t) {
    StepOutcome step = es_step(result.weights, t, config, objective, sink);
    result.weights = std::move(step.next);
    result.curve.push_back(step.curve);
    result.generations = t + 1;
    if (on_generation) on_generation(step.curve);
    if (step.curve.train_best == r_max) {
      result.reached_r_max = true;
      ++streak;
    } else {
      streak = 0;
    }
    if (config.early_stop && streak >= config.n_conv) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

void write_curve_csv(std::ostream& out, std::span<const CurveRecord> curve) {
  out << "generation,train_best,train_mean,val_best,val_mean\n";
  for (const CurveRecord& r : curve) {
    out << r.generation << ',' << r.train_best << ',' << std::fixed << std::setprecision(6) << r.train_mean
        << ',' << r.val_best << ',' << r.val_mean << '\n';
    out.unsetf(std::ios::floatfield);
  }
}

std::vector<CurveRecord> read_curve_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "generation,train_best,train_mean,val_best,val_mean") {
    throw FormatError("curve CSV: unexpected header");
  }
  std::vector<CurveRecord> curve;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream fields(line);
    CurveRecord r;
    char c1 = 0, c2 = 0, c3 = 0, c4 = 0;
    if (!(fields >> r.generation >> c1 >> r.train_best >> c2 >> r.train_mean >> c3 >> r.val_best >> c4 >>
          r.val_mean) ||
        c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') {
      throw FormatError("curve CSV: malformed row " + std::to_string(row));
    }
    curve.push_back(r);
  }
  return curve;
}

}  // namespace dne
