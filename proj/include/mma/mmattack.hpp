#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "mma/distillation.hpp"
#include "mma/oracle.hpp"
#include "mma/whitebox.hpp"

namespace mma {

enum class RunMode { first_hit, full_run };

struct MmaConfig {
  std::size_t max_iterations = 20;
  std::size_t candidates_per_iter = 10;
  std::size_t initial_dataset_size = 10;
  DistillationConfig distill;
  PgdConfig pgd;
  RunMode mode = RunMode::first_hit;
  std::uint64_t seed = 0;
  /// Re-initialise the student before every retraining instead of warm-starting.
  bool cold_start = false;
  /// Diagnostic oracles only: also train on candidates that did not fool the student,
  /// labelled through the uncounted glass-box teacher.
  bool add_non_adversarial = false;

  void validate() const;
};

/// SplitMix64 step over `base ^ salt`; used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);

struct CandidateRecord {
  std::vector<double> point;
  ClassIndex student_class = 0;
  std::vector<double> student_probs;
  /// Set once the candidate has been shown to the oracle.
  bool checked = false;
  std::optional<ClassIndex> teacher_class;
  std::vector<double> teacher_probs;
  /// Teacher and student agree on a class other than the target's.
  bool transferred = false;
  /// Teacher leaves the target's class but disagrees with the student.
  bool weak = false;
};

struct IterationRecord {
  std::size_t iteration = 0;
  std::size_t dataset_size = 0;
  MatchOutcome match;
  std::vector<CandidateRecord> candidates;
  std::size_t points_added = 0;
  QueryLedger ledger;
};

struct FoundExample {
  std::vector<double> point;
  std::size_t iteration = 0;
  ClassIndex teacher_class = 0;
  std::vector<double> student_probs;
  std::vector<double> teacher_probs;
};

struct AttackTrace {
  std::vector<double> target;
  ClassIndex label = 0;
  std::vector<IterationRecord> iterations;
  std::vector<FoundExample> found;
  std::vector<FoundExample> weak_found;
  QueryLedger ledger;
  std::uint64_t transfer_checks = 0;
  std::uint64_t transfer_cache_hits = 0;
  std::optional<QueryLedger> ledger_at_first_hit;
  /// The oracle budget ran out before the run finished.
  bool truncated = false;

  bool success() const noexcept { return !found.empty(); }
};

/// One oracle lookup of a candidate that fooled the student; true iff the teacher
/// assigns it the same class as the student.
bool transfer_check(BlackBoxOracle& oracle, const CandidateRecord& candidate, ClassIndex y);

/// Runs the distill / attack / check loop against the oracle. `student` holds the
/// initial student on entry and the last trained student on return. The hold-out
/// pool supplies the initial training points. Throws std::invalid_argument when the
/// oracle does not assign x to y; budget exhaustion truncates the trace instead.
AttackTrace run_mmattack(BlackBoxOracle& oracle, std::span<const double> x, ClassIndex y, NeuralClassifier& student,
                         const MmaConfig& config, std::span<const std::vector<double>> holdout_pool);

struct HypothesisFlags {
  bool perfect_match_held = false;
  bool margin_condition_held = false;
  /// beta * (l2 distance from the hit to the nearest earlier checked candidate) < epsilon / 4.
  bool step_condition_held = false;
};

struct TheoremDiagnostics {
  double beta_estimate = 0.0;
  std::size_t beta_samples = 0;
  std::vector<double> gap_at_candidates;
  std::optional<double> margin_at_hit;
  std::optional<double> gap_at_hit;
  /// l2 distance from the hit to the nearest candidate checked in an earlier iteration.
  std::optional<double> step_to_prior;
  double epsilon_used = 0.0;
  HypothesisFlags flags;
};

/// Row-major [K, d] Jacobian of the class probabilities at x.
std::vector<double> probability_jacobian(const NeuralClassifier& model, std::span<const double> x);

/// Largest Frobenius norm of the Jacobian of (student - teacher) over x and
/// `samples - 1` seeded points of the ball. Larger sample counts extend the same sequence.
double estimate_beta(const NeuralClassifier& student, const NeuralClassifier& teacher, std::span<const double> x,
                     const PgdConfig& ball, std::size_t samples, std::uint64_t seed);

/// Needs a diagnostic oracle (AccessError otherwise). `student` is the last student
/// of the run; gaps are taken at the last iteration's candidates, the margin and the
/// gap at the first strict hit come from the trace.
TheoremDiagnostics compute_diagnostics(const BlackBoxOracle& oracle, const NeuralClassifier& student,
                                       const AttackTrace& trace, const MmaConfig& config,
                                       std::size_t beta_samples = 256);

nlohmann::json to_json(const AttackTrace& trace);
nlohmann::json to_json(const TheoremDiagnostics& diagnostics);

}  // namespace mma
