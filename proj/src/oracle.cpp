#include "mma/oracle.hpp"

#include <string>

namespace mma {

BudgetExhausted::BudgetExhausted(QueryLedger spent)
    : std::runtime_error("query budget exhausted after " + std::to_string(spent.total()) + " queries (" +
                         std::to_string(spent.setup_queries) + " setup, " + std::to_string(spent.attack_queries) +
                         " attack)"),
      ledger_(spent) {}

BlackBoxOracle::BlackBoxOracle(std::shared_ptr<const NeuralClassifier> teacher, OracleMode mode,
                               std::optional<std::uint64_t> budget)
    : teacher_(std::move(teacher)), mode_(mode), budget_(budget) {
  if (!teacher_) throw std::invalid_argument("oracle: null teacher");
  input_dim_ = teacher_->input_size();
  respond_ = [model = teacher_](std::span<const double> x) { return model->predict_proba(x); };
}

BlackBoxOracle::BlackBoxOracle(ResponseFn teacher, std::size_t input_dim, std::optional<std::uint64_t> budget)
    : respond_(std::move(teacher)), mode_(OracleMode::attack), input_dim_(input_dim), budget_(budget) {
  if (!respond_) throw std::invalid_argument("oracle: empty response function");
}

ProbVector BlackBoxOracle::query(std::span<const double> x, QueryPhase phase) {
  if (x.size() != input_dim_) {
    throw std::invalid_argument("oracle: query has " + std::to_string(x.size()) + " features, expected " +
                                std::to_string(input_dim_));
  }
  FeatureKey key = feature_key(x);
  if (auto it = cache_.find(key); it != cache_.end()) {
    ++cache_hits_;
    return it->second;
  }
  if (budget_ && query_count_ >= *budget_) throw BudgetExhausted(ledger_);
  ProbVector response = respond_(x);
  ++query_count_;
  (phase == QueryPhase::setup ? ledger_.setup_queries : ledger_.attack_queries) += 1;
  cache_.emplace(std::move(key), response);
  return response;
}

ClassIndex BlackBoxOracle::hard_label(std::span<const double> x, QueryPhase phase) { return query(x, phase).argmax(); }

bool BlackBoxOracle::is_cached(std::span<const double> x) const { return cache_.contains(feature_key(x)); }

const NeuralClassifier& BlackBoxOracle::glass_box_handle() const {
  if (mode_ != OracleMode::diagnostic || !teacher_) {
    throw AccessError("glass-box teacher access is only available on diagnostic-mode oracles");
  }
  return *teacher_;
}

}  // namespace mma
