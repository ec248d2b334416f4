#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>

#include "mma/datasets.hpp"
#include "mma/models.hpp"
#include "mma/prob_vector.hpp"

namespace mma {

/// Who pays for a query: growing the student's training set (setup, QN1) or
/// checking candidates against the teacher (attack, QN2).
enum class QueryPhase { setup, attack };

/// Diagnostic oracles additionally expose the teacher for uncounted glass-box analysis.
enum class OracleMode { attack, diagnostic };

struct QueryLedger {
  std::uint64_t setup_queries = 0;
  std::uint64_t attack_queries = 0;

  std::uint64_t total() const noexcept { return setup_queries + attack_queries; }
  friend bool operator==(const QueryLedger&, const QueryLedger&) = default;
};

/// Raised when a query would exceed the budget; carries the counts spent so far.
class BudgetExhausted : public std::runtime_error {
 public:
  explicit BudgetExhausted(QueryLedger spent);
  const QueryLedger& ledger() const noexcept { return ledger_; }

 private:
  QueryLedger ledger_;
};

/// Raised when glass-box access is requested from an attack-mode oracle.
class AccessError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Query-counted black-box view of a teacher returning soft labels only.
///
/// Every distinct input (bit-exact) costs one query, attributed to the phase that
/// first asked for it; repeated inputs are answered from the cache for free.
class BlackBoxOracle {
 public:
  using ResponseFn = std::function<ProbVector(std::span<const double>)>;

  explicit BlackBoxOracle(std::shared_ptr<const NeuralClassifier> teacher, OracleMode mode = OracleMode::attack,
                          std::optional<std::uint64_t> budget = std::nullopt);
  /// Opaque teacher given only as a response function; never exposes a glass-box handle.
  BlackBoxOracle(ResponseFn teacher, std::size_t input_dim, std::optional<std::uint64_t> budget = std::nullopt);

  ProbVector query(std::span<const double> x, QueryPhase phase);
  ClassIndex hard_label(std::span<const double> x, QueryPhase phase);
  bool is_cached(std::span<const double> x) const;

  /// Uncounted teacher access for diagnostics; throws AccessError in attack mode.
  const NeuralClassifier& glass_box_handle() const;

  std::uint64_t query_count() const noexcept { return query_count_; }
  const QueryLedger& ledger() const noexcept { return ledger_; }
  std::uint64_t cache_hits() const noexcept { return cache_hits_; }
  std::optional<std::uint64_t> budget() const noexcept { return budget_; }
  void set_budget(std::optional<std::uint64_t> budget) { budget_ = budget; }
  OracleMode mode() const noexcept { return mode_; }
  std::size_t input_dim() const noexcept { return input_dim_; }

 private:
  std::shared_ptr<const NeuralClassifier> teacher_;
  ResponseFn respond_;
  OracleMode mode_;
  std::size_t input_dim_;
  std::optional<std::uint64_t> budget_;
  std::uint64_t query_count_ = 0;
  std::uint64_t cache_hits_ = 0;
  QueryLedger ledger_;
  std::map<FeatureKey, ProbVector> cache_;
};

}  // namespace mma
