#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mma/datasets.hpp"
#include "mma/models.hpp"
#include "mma/oracle.hpp"
#include "mma/sgd.hpp"

namespace mma {

enum class LossMode {
  /// Empirical risk of the soft cross-entropy against teacher probabilities.
  soft_cross_entropy,
  /// alpha * CE(student, argmax teacher) + (1 - alpha) * tau^2 * KL(teacher_tau || student_tau).
  weighted_kd,
};

struct DistillationConfig {
  /// Match tolerance: training stops once every sample is within epsilon / 4 in the inf-norm.
  double epsilon = 0.1;
  std::size_t max_epochs = 2000;
  /// Full-batch training up to this many samples, mini-batches of this size beyond.
  std::size_t batch_size = 512;
  SgdConfig optimizer{.learning_rate = 0.05, .momentum = 0.9, .weight_decay = 0.0};
  LossMode loss_mode = LossMode::soft_cross_entropy;
  double alpha = 0.5;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  bool record_loss = false;

  void validate() const;
};

struct SampleMatch {
  bool argmax_match = false;
  double inf_gap = 0.0;
};

struct MatchReport {
  std::vector<SampleMatch> samples;
  bool passed = false;
  double worst_gap = 0.0;
  std::size_t argmax_mismatches = 0;
};

enum class MatchStatus { matched, epoch_capped };

struct MatchOutcome {
  MatchStatus status = MatchStatus::epoch_capped;
  std::size_t epochs = 0;
  double worst_gap = 0.0;
  /// Empirical risk at the start of each epoch (only when record_loss is set).
  std::vector<double> loss_history;

  bool matched() const noexcept { return status == MatchStatus::matched; }
};

/// The growing training set D(S_i) together with the current student S_i.
struct DistillationState {
  DistillationState(NeuralClassifier student_model, SoftLabeledDataset data)
      : dataset(std::move(data)), student(std::move(student_model)) {}

  SoftLabeledDataset dataset;
  NeuralClassifier student;
  std::size_t iteration = 1;
  MatchReport match_report;
};

/// Labels every point through setup-phase oracle queries; repeated points are
/// stored once and answered from the oracle cache.
SoftLabeledDataset build_student_dataset(BlackBoxOracle& oracle, std::span<const std::vector<double>> points);

/// Per-sample argmax agreement and inf-norm gap; passes iff every sample agrees and
/// every gap is strictly below epsilon / 4.
MatchReport check_perfect_match(const NeuralClassifier& student, const SoftLabeledDataset& dataset, double epsilon);

/// Same predicate over precomputed student probabilities (row-major [n, K]).
MatchReport evaluate_match(std::span<const double> student_probs, const SoftLabeledDataset& dataset, double epsilon);

/// Trains `state.student` in place (warm start) until the match predicate holds on
/// every sample or max_epochs epochs have run.
MatchOutcome train_student(DistillationState& state, const DistillationConfig& config);

/// Empirical risk (mean per-sample loss) of the student on the dataset under `config`'s loss.
double empirical_risk(const NeuralClassifier& student, const SoftLabeledDataset& dataset,
                      const DistillationConfig& config);

}  // namespace mma
