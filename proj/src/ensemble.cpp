#include "dne/ensemble.hpp"

#include <cmath>
#include <numeric>

#include "dne/error.hpp"
#include "dne/parallel.hpp"

namespace dne {

bool should_save(int train_reward, int r_max, int validation_reward,
                 std::optional<int> last_saved_validation_reward) {
  if (train_reward != r_max) return false;
  return !last_saved_validation_reward || *last_saved_validation_reward != validation_reward;
}

bool EnsembleSink::offer(int r_max, std::int64_t generation, int train_reward, int validation_reward,
                         const std::function<WeightVector()>& weights) {
  if (!should_save(train_reward, r_max, validation_reward, last_validation_)) return false;
  store(EnsembleMember{weights(), generation, train_reward, validation_reward});
  last_validation_ = validation_reward;
  ++saved_;
  return true;
}

void MemoryEnsemble::store(EnsembleMember member) {
  members_.push_back(std::move(member));
  if (keep_last_ > 0 && members_.size() > 2 * keep_last_) {
    members_.erase(members_.begin(), members_.end() - static_cast<std::ptrdiff_t>(keep_last_));
  }
}

std::vector<EnsembleMember> keep_last(std::vector<EnsembleMember> members, std::size_t n) {
  if (n == 0 || members.size() <= n) return members;
  members.erase(members.begin(), members.end() - static_cast<std::ptrdiff_t>(n));
  return members;
}

ClassDistribution ensemble_predict(std::span<const EnsembleMember> members, const NetworkSpec& spec,
                                   const OrbitSample& sample, VoteMode mode) {
  if (members.empty()) throw PreconditionError("ensemble_predict needs at least one member");
  if (mode == VoteMode::Majority) {
    std::size_t tumor_votes = 0;
    for (const EnsembleMember& m : members) {
      if (forward(spec, m.weights, sample).predicted() == Label::Tumor) ++tumor_votes;
    }
    const double t = static_cast<double>(tumor_votes) / static_cast<double>(members.size());
    return {t, 1.0 - t};
  }
  double sum = 0.0;
  for (const EnsembleMember& m : members) sum += forward(spec, m.weights, sample).p_tumor;
  const double t = sum / static_cast<double>(members.size());
  return {t, 1.0 - t};
}

double shannon_entropy(const ClassDistribution& dist) {
  auto term = [](double q) { return q > 0.0 ? -q * std::log2(q) : 0.0; };
  return term(dist.p_tumor) + term(dist.p_normal);
}

std::string_view to_string(UqClass c) noexcept {
  switch (c) {
    case UqClass::CorrectLowUncertainty:
      return "correct_low_uncertainty";
    case UqClass::HighUncertainty:
      return "high_uncertainty";
    case UqClass::IncorrectLowUncertainty:
      return "incorrect_low_uncertainty";
  }
  return "unknown";
}

UqClass parse_uq_class(std::string_view text) {
  for (UqClass c : {UqClass::CorrectLowUncertainty, UqClass::HighUncertainty, UqClass::IncorrectLowUncertainty}) {
    if (to_string(c) == text) return c;
  }
  throw PreconditionError("unknown UQ class '" + std::string(text) + "'");
}

UqClass uq_class(Label predicted, Label truth, double entropy_bits, double threshold) {
  if (entropy_bits > threshold) return UqClass::HighUncertainty;
  return predicted == truth ? UqClass::CorrectLowUncertainty : UqClass::IncorrectLowUncertainty;
}

double UqReport::mean_entropy() const noexcept {
  if (records.empty()) return 0.0;
  double sum = 0.0;
  for (const UqRecord& r : records) sum += r.entropy_bits;
  return sum / static_cast<double>(records.size());
}

UqRecord make_record(const OrbitSample& sample, const ClassDistribution& dist, double threshold) {
  UqRecord r;
  r.sample_id = sample.id;
  r.true_label = sample.label;
  r.p_tumor = dist.p_tumor;
  r.p_normal = dist.p_normal;
  r.entropy_bits = shannon_entropy(dist);
  r.predicted_label = dist.predicted();
  r.uq_class = uq_class(r.predicted_label, r.true_label, r.entropy_bits, threshold);
  return r;
}

UqSummary summarize(std::span<const UqRecord> records) {
  UqSummary s;
  for (const UqRecord& r : records) {
    const int col = r.true_label == Label::Tumor ? 0 : 1;
    ++s.cells[static_cast<int>(r.uq_class)][col].count;
    ++s.totals[col];
  }
  for (auto& row : s.cells) {
    for (int col = 0; col < 2; ++col) {
      const int total = s.totals[col];
      row[col].percent = total == 0 ? 0.0 : std::round(1000.0 * row[col].count / total) / 10.0;
    }
  }
  return s;
}

UqReport report_from_distributions(std::string method, std::size_t ensemble_size,
                                   std::span<const OrbitSample> samples,
                                   std::span<const ClassDistribution> dists, double threshold,
                                   VoteMode vote_mode) {
  if (samples.size() != dists.size()) throw ShapeError("one distribution per sample is required");
  if (!(threshold >= 0.0)) throw PreconditionError("entropy threshold must be >= 0");
  UqReport report;
  report.method = std::move(method);
  report.ensemble_size = ensemble_size;
  report.threshold = threshold;
  report.vote_mode = vote_mode;
  report.records.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) report.records.push_back(make_record(samples[i], dists[i], threshold));
  report.summary = summarize(report.records);
  return report;
}

UqReport uq_report(std::span<const EnsembleMember> members, const NetworkSpec& spec, const Dataset& test_set,
                   double threshold, VoteMode mode, int threads) {
  if (members.empty()) throw PreconditionError("uq_report needs at least one ensemble member");
  if (test_set.empty()) throw PreconditionError("uq_report needs a non-empty test set");
  std::vector<ClassDistribution> dists(test_set.size());
  parallel_for(test_set.size(), threads, [&](std::size_t i) {
    dists[i] = ensemble_predict(members, spec, test_set.samples[i], mode);
  });
  return report_from_distributions("es_ensemble", members.size(), test_set.samples, dists, threshold, mode);
}

}  // namespace dne
