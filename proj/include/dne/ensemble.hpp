#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dne/data.hpp"
#include "dne/network.hpp"

namespace dne {

/// A saved perturbed model and where it came from.
struct EnsembleMember {
  WeightVector weights;
  std::int64_t generation = 0;
  int train_reward = 0;
  int validation_reward = 0;

  bool operator==(const EnsembleMember&) const = default;
};

/// Harvest rule: the model must score r_max on the training set, and its
/// validation reward must differ from the most recently saved member's.
bool should_save(int train_reward, int r_max, int validation_reward,
                 std::optional<int> last_saved_validation_reward);

/// Destination for harvested members; applies `should_save` before storing.
class EnsembleSink {
 public:
  virtual ~EnsembleSink() = default;

  /// `weights` is only invoked when the candidate is accepted.
  bool offer(int r_max, std::int64_t generation, int train_reward, int validation_reward,
             const std::function<WeightVector()>& weights);

  std::optional<int> last_saved_validation() const noexcept { return last_validation_; }
  std::size_t saved_count() const noexcept { return saved_; }

 protected:
  virtual void store(EnsembleMember member) = 0;

 private:
  std::optional<int> last_validation_;
  std::size_t saved_ = 0;
};

/// Keeps members in memory. With keep_last > 0 only the newest keep_last stay
/// resident; saved_count() still counts every accepted member.
class MemoryEnsemble final : public EnsembleSink {
 public:
  explicit MemoryEnsemble(std::size_t keep_last = 0) : keep_last_(keep_last) {}

  const std::vector<EnsembleMember>& members() const noexcept { return members_; }
  std::vector<EnsembleMember> take() && { return std::move(members_); }

 protected:
  void store(EnsembleMember member) override;

 private:
  std::size_t keep_last_;
  std::vector<EnsembleMember> members_;
};

/// Post-filter keeping the newest `n` members (n = 0 keeps all).
std::vector<EnsembleMember> keep_last(std::vector<EnsembleMember> members, std::size_t n);

enum class VoteMode {
  Majority,         ///< each member votes its argmax class
  MeanProbability,  ///< average of the members' softmax outputs
};

/// Relative class frequencies over the ensemble.
ClassDistribution ensemble_predict(std::span<const EnsembleMember> members, const NetworkSpec& spec,
                                   const OrbitSample& sample, VoteMode mode = VoteMode::Majority);

/// Binary Shannon entropy in bits, with 0 log 0 = 0.
double shannon_entropy(const ClassDistribution& dist);

enum class UqClass { CorrectLowUncertainty, HighUncertainty, IncorrectLowUncertainty };

std::string_view to_string(UqClass c) noexcept;
UqClass parse_uq_class(std::string_view text);

inline constexpr double kDefaultEntropyThreshold = 0.2;

/// Entropy strictly above the threshold is high uncertainty; otherwise the
/// class depends on whether the prediction is right.
UqClass uq_class(Label predicted, Label truth, double entropy_bits,
                 double threshold = kDefaultEntropyThreshold);

struct UqRecord {
  std::string sample_id;
  Label true_label = Label::Normal;
  double p_tumor = 0.0;
  double p_normal = 0.0;
  double entropy_bits = 0.0;
  Label predicted_label = Label::Normal;  ///< majority; ties go to normal
  UqClass uq_class = UqClass::CorrectLowUncertainty;

  bool operator==(const UqRecord&) const = default;
};

struct UqCell {
  int count = 0;
  double percent = 0.0;  ///< of that label's samples, one decimal

  bool operator==(const UqCell&) const = default;
};

/// Table layout: rows indexed by UqClass, columns {tumor, normal}.
struct UqSummary {
  std::array<std::array<UqCell, 2>, 3> cells{};
  std::array<int, 2> totals{};  ///< samples per column {tumor, normal}

  const UqCell& at(UqClass c, Label column) const noexcept {
    return cells[static_cast<int>(c)][column == Label::Tumor ? 0 : 1];
  }
  bool operator==(const UqSummary&) const = default;
};

struct UqReport {
  std::string method;  ///< "es_ensemble" or "mc_dropout"
  std::size_t ensemble_size = 0;
  double threshold = kDefaultEntropyThreshold;
  VoteMode vote_mode = VoteMode::Majority;
  std::vector<UqRecord> records;
  UqSummary summary;

  double mean_entropy() const noexcept;
  bool operator==(const UqReport&) const = default;
};

UqRecord make_record(const OrbitSample& sample, const ClassDistribution& dist, double threshold);
UqSummary summarize(std::span<const UqRecord> records);

/// Builds records and the summary from already-computed distributions.
UqReport report_from_distributions(std::string method, std::size_t ensemble_size,
                                   std::span<const OrbitSample> samples,
                                   std::span<const ClassDistribution> dists, double threshold,
                                   VoteMode vote_mode = VoteMode::Majority);

/// Scores every test sample with the ensemble (samples may run in parallel).
UqReport uq_report(std::span<const EnsembleMember> members, const NetworkSpec& spec,
                   const Dataset& test_set, double threshold = kDefaultEntropyThreshold,
                   VoteMode mode = VoteMode::Majority, int threads = 1);

/// Deterministic JSON text of the report (same schema for ES and MC dropout).
std::string report_to_json(const UqReport& report);
UqReport report_from_json(std::string_view text);

/// Structural check against the shared report schema; returns the violations.
std::vector<std::string> report_schema_violations(std::string_view json_text);

}  // namespace dne
