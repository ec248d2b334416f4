#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mma/oracle.hpp"

namespace mma {

struct NesConfig {
  double epsilon = 0.1;
  std::size_t num_samples = 50;
  std::size_t num_iterations = 300;
  double sigma = 0.01;
  double alpha = 0.03;

  void validate() const;
};

struct ZooConfig {
  double epsilon = 0.05;
  std::size_t num_iterations = 5000;
  double learning_rate = 0.01;
  double fd_step = 1e-3;

  void validate() const;
};

struct SquareConfig {
  double epsilon = 0.1;
  std::size_t num_queries = 5000;
  double p_init = 0.8;

  void validate() const;
};

struct AttackResult {
  bool success = false;
  std::optional<std::vector<double>> adversarial_point;
  /// Oracle queries charged during the call; cache hits are free.
  std::uint64_t queries_spent = 0;
  std::size_t iterations = 0;
  /// Square attack only: margin loss of the kept point after initialisation and each proposal.
  std::vector<double> loss_trace;
};

/// Untargeted loss the score-based attacks ascend: -log p_y.
double untargeted_loss(const ProbVector& p, ClassIndex y);

/// Symmetric finite-difference estimate of d(-log p_y)/dx_j from two oracle queries.
double zoo_partial(BlackBoxOracle& oracle, std::span<const double> x, ClassIndex y, std::size_t j, double h);

/// Every attack first checks hard_label(x) == y (free when x is already cached)
/// and throws std::invalid_argument otherwise. Queries are charged to the attack phase.
AttackResult nes_attack(BlackBoxOracle& oracle, std::span<const double> x, ClassIndex y, const NesConfig& config,
                        std::uint64_t seed);
AttackResult zoo_attack(BlackBoxOracle& oracle, std::span<const double> x, ClassIndex y, const ZooConfig& config);
AttackResult square_attack(BlackBoxOracle& oracle, std::span<const double> x, ClassIndex y,
                           const SquareConfig& config, std::uint64_t seed);

}  // namespace mma
