#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mma/baselines.hpp"
#include "mma/datasets.hpp"
#include "mma/mmattack.hpp"
#include "mma/teacher.hpp"

namespace mma {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  /// "blobs", "rings" or "csv".
  std::string kind = "blobs";
  std::size_t classes = 2;
  std::size_t dim = 2;
  std::size_t n_per_class = 300;
  double spread = 0.015;
  std::uint64_t seed = 2;
  double holdout_fraction = 0.3;
  std::string csv;
};

struct TeacherSpec {
  std::vector<std::size_t> hidden{32, 32};
  std::uint64_t seed = 1;
  TeacherTrainingConfig training{.epochs = 300,
                                 .batch_size = 32,
                                 .optimizer = {.learning_rate = 0.01, .momentum = 0.9, .weight_decay = 1e-4},
                                 .seed = 0};
  std::string checkpoint = "teacher.json";
};

struct StudentSpec {
  std::vector<std::size_t> hidden{8};
  std::uint64_t seed = 100;
};

struct SweepSpec {
  std::uint64_t total_budget = 200;
  std::size_t runs = 30;
};

struct OutputSpec {
  std::string dir = "mma_out";
  /// Off by default so repeated runs produce byte-identical files.
  bool record_wall_time = false;
  bool gnuplot = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  TeacherSpec teacher;
  StudentSpec student;
  std::vector<std::string> attacks{"mmattack", "nes", "zoo", "square"};
  std::size_t targets = 50;
  /// Per-target oracle budget; 0 means unlimited.
  std::uint64_t query_budget = 0;
  MmaConfig mma;
  /// Baseline radii match mma.pgd.delta.
  NesConfig nes{.epsilon = 0.05, .alpha = 0.01};
  ZooConfig zoo{.epsilon = 0.05};
  SquareConfig square{.epsilon = 0.05};
  SweepSpec sweep;
  OutputSpec output;

  void validate() const;
};

nlohmann::json config_to_json(const ExperimentConfig& config);
/// Keys missing from `doc` keep their defaults; unknown keys and type mismatches throw ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& doc);
/// Sets a dotted key ("pgd.delta") in `doc`; the value is parsed as JSON when possible, else kept as a string.
void apply_override(nlohmann::json& doc, const std::string& dotted_key, const std::string& value);
ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides);

struct DeskTask {
  LabeledDataset train;
  LabeledDataset holdout;
};

DeskTask build_task(const DatasetSpec& spec);
ArchitectureSpec teacher_architecture(const ExperimentConfig& config);
NeuralClassifier make_student(const ExperimentConfig& config, std::uint64_t salt);
NeuralClassifier train_teacher(const ExperimentConfig& config, const DeskTask& task);

struct TargetSelection {
  /// Indices into the hold-out set.
  std::vector<std::size_t> indices;
  /// Hold-out points the teacher misclassifies; never used as targets.
  std::size_t excluded = 0;
};

/// The first `count` correctly classified hold-out points in a seeded order.
TargetSelection select_targets(const NeuralClassifier& teacher, const LabeledDataset& holdout, std::size_t count,
                               std::uint64_t seed);

/// One (attack, target) cell. Columns follow the metrics CSV.
struct MetricsRow {
  std::string attack;
  std::size_t target_id = 0;
  std::uint64_t seed = 0;
  bool success = false;
  std::uint64_t queries_setup = 0;
  std::uint64_t queries_attack = 0;
  std::size_t iterations = 0;
  std::int64_t wall_ms = 0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

struct AttackSummary {
  std::string attack;
  std::size_t attempted = 0;
  std::size_t successes = 0;
  double asr = 0.0;
  /// Over successful rows: setup plus attack queries, and attack queries alone.
  std::optional<double> aqn_total;
  std::optional<double> aqn_attack_only;
};

struct ComparisonReport {
  std::vector<MetricsRow> rows;
  std::vector<AttackSummary> summary;
  /// MMAttack traces, one per target.
  nlohmann::json traces = nlohmann::json::array();
  std::size_t excluded_targets = 0;
  double teacher_holdout_accuracy = 0.0;
};

/// Summaries in the order attacks first appear in `rows`.
std::vector<AttackSummary> summarize(const std::vector<MetricsRow>& rows);

ComparisonReport run_comparison(const ExperimentConfig& config, const NeuralClassifier& teacher,
                                const DeskTask& task);

struct SweepRow {
  std::size_t iteration = 0;
  std::uint64_t qn1 = 0;
  std::uint64_t qn2 = 0;
  /// Mean over runs of the distinct strict transfers found with the attack budget.
  double generated = 0.0;
  /// Transfers per transfer check, pooled over runs.
  std::optional<double> asr;
  /// Mean of (queries spent) / (transfers) over the paired runs; absent when there are none.
  std::optional<double> aqn;
  std::size_t runs = 0;
  /// Runs with at least one transfer at this split.
  std::size_t successful_runs = 0;
  /// Runs with at least one transfer at every split.
  std::size_t paired_runs = 0;
};

/// Rows for QN1 = s, 2s, ... below the total, where s = mma.initial_dataset_size.
/// Growth labels every candidate, so QN1 rises by exactly candidates_per_iter = s
/// per iteration when both are equal; the attack phase spends QN2 = total - QN1 on
/// the frozen student of that iteration.
std::vector<SweepRow> run_tradeoff_sweep(const ExperimentConfig& config, const NeuralClassifier& teacher,
                                         const DeskTask& task, std::uint64_t total_budget);

struct DiagnosticRecord {
  std::size_t target_id = 0;
  AttackTrace trace;
  TheoremDiagnostics diagnostics;
};

std::vector<DiagnosticRecord> run_diagnostics(const ExperimentConfig& config, const NeuralClassifier& teacher,
                                              const DeskTask& task);

std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string summary_csv(const std::vector<AttackSummary>& summary);
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string sweep_dat(const std::vector<SweepRow>& rows);
std::string diagnostics_csv(const std::vector<DiagnosticRecord>& records, double epsilon);

nlohmann::json report_to_json(const ExperimentConfig& config, const ComparisonReport& report);
/// Rows stored in a report document, for recomputing tables.
std::vector<MetricsRow> rows_from_report(const nlohmann::json& report);

}  // namespace mma
