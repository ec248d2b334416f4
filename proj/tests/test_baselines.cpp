#include <cmath>

#include "doctest.h"
#include "mma/baselines.hpp"
#include "mma/whitebox.hpp"

using namespace mma;

namespace {

BlackBoxOracle constant_oracle(std::optional<std::uint64_t> budget = std::nullopt) {
  return BlackBoxOracle([](std::span<const double>) { return ProbVector({0.9, 0.1}); }, 2, budget);
}

// Two-class logistic teacher whose boundary is the line x0 = threshold.
BlackBoxOracle step_oracle(double threshold, double slope = 40.0) {
  return BlackBoxOracle(
      [=](std::span<const double> x) {
        const double z = slope * (x[0] - threshold);
        const double p1 = 1.0 / (1.0 + std::exp(-z));
        return ProbVector({1.0 - p1, p1});
      },
      2);
}

const std::vector<double> kTarget{0.5, 0.5};

}  // namespace

TEST_CASE("NES against a constant teacher spends exactly iterations * samples") {
  auto oracle = constant_oracle();
  oracle.query(kTarget, QueryPhase::setup);
  NesConfig cfg;
  cfg.num_iterations = 6;
  cfg.num_samples = 10;
  const AttackResult r = nes_attack(oracle, kTarget, 0, cfg, 1);
  CHECK_FALSE(r.success);
  CHECK_FALSE(r.adversarial_point.has_value());
  CHECK(r.queries_spent == 60);
  CHECK(r.iterations == 6);
  CHECK(oracle.ledger().attack_queries == 60);
}

TEST_CASE("NES crosses a nearby linear boundary") {
  int successes = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto oracle = step_oracle(0.56);
    const AttackResult r = nes_attack(oracle, kTarget, 0, NesConfig{}, seed);
    if (!r.success) continue;
    ++successes;
    CHECK(ball_distance(*r.adversarial_point, kTarget, BallNorm::linf) <= 0.1 + 1e-12);
    CHECK(oracle.hard_label(*r.adversarial_point, QueryPhase::attack) == 1);
  }
  CHECK(successes >= 18);
}

TEST_CASE("NES is deterministic under a fixed seed") {
  auto a = step_oracle(0.58);
  auto b = step_oracle(0.58);
  const AttackResult ra = nes_attack(a, kTarget, 0, NesConfig{}, 9);
  const AttackResult rb = nes_attack(b, kTarget, 0, NesConfig{}, 9);
  CHECK(ra.success == rb.success);
  CHECK(ra.queries_spent == rb.queries_spent);
  CHECK(ra.adversarial_point == rb.adversarial_point);
}

TEST_CASE("ZOO spends two queries per coordinate visit") {
  // Never flips, but has a gradient everywhere so every probe is a fresh point.
  BlackBoxOracle oracle(
      [](std::span<const double> x) {
        const double p0 = 0.6 + 0.3 * x[0] * x[1];
        return ProbVector({p0, 1.0 - p0});
      },
      2);
  oracle.query(kTarget, QueryPhase::setup);
  ZooConfig cfg;
  cfg.num_iterations = 7;
  const AttackResult r = zoo_attack(oracle, kTarget, 0, cfg);
  CHECK_FALSE(r.success);
  // Plus one final look at the moved iterate when the cap is reached.
  CHECK(r.queries_spent == 2 * 7 + 1);
  CHECK(r.iterations == 7);
}

TEST_CASE("ZOO ignores coordinates the teacher ignores") {
  auto oracle = step_oracle(0.53);
  CHECK(zoo_partial(oracle, kTarget, 0, 1, 1e-3) == 0.0);
  const AttackResult r = zoo_attack(oracle, kTarget, 0, ZooConfig{});
  REQUIRE(r.success);
  CHECK((*r.adversarial_point)[1] == kTarget[1]);
  CHECK((*r.adversarial_point)[0] > 0.53);
  CHECK(ball_distance(*r.adversarial_point, kTarget, BallNorm::linf) <= 0.05);
}

TEST_CASE("ZOO partials carry second-order truncation error") {
  // -log p_0 = q(x) = x0^3 + 2 x0 x1, so the exact partial in x0 is 3 x0^2 + 2 x1 and the
  // symmetric difference is off by exactly h^2 (the third derivative is 6).
  BlackBoxOracle oracle(
      [](std::span<const double> x) {
        const double p0 = std::exp(-(x[0] * x[0] * x[0] + 2.0 * x[0] * x[1]));
        return ProbVector({p0, 1.0 - p0});
      },
      2);
  const std::vector<double> x{0.4, 0.3};
  const double exact = 3.0 * 0.16 + 0.6;
  for (double h : {1e-2, 5e-3, 1e-3}) {
    const double err = zoo_partial(oracle, x, 0, 0, h) - exact;
    CHECK(err == doctest::Approx(h * h).epsilon(1e-4));
  }
}

TEST_CASE("Square attack respects its query cap and only keeps improvements") {
  auto oracle = constant_oracle();
  oracle.query(kTarget, QueryPhase::setup);
  SquareConfig cfg;
  cfg.num_queries = 40;
  const AttackResult r = square_attack(oracle, kTarget, 0, cfg, 3);
  CHECK_FALSE(r.success);
  CHECK(r.queries_spent <= cfg.num_queries + 1);

  auto boundary = step_oracle(0.59, 5.0);
  const AttackResult s = square_attack(boundary, kTarget, 0, SquareConfig{}, 4);
  REQUIRE(s.loss_trace.size() >= 1);
  for (std::size_t i = 1; i < s.loss_trace.size(); ++i) CHECK(s.loss_trace[i] <= s.loss_trace[i - 1]);
  CHECK(s.queries_spent <= SquareConfig{}.num_queries + 1);
}

TEST_CASE("Square attack reaches a mixed-sign corner in two dimensions") {
  // Class 1 needs x0 - x1 > 0.08: of the four corners at radius 0.05 only (+, -) qualifies.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    BlackBoxOracle oracle(
        [](std::span<const double> x) {
          const double z = 40.0 * (x[0] - x[1] - 0.08);
          const double p1 = 1.0 / (1.0 + std::exp(-z));
          return ProbVector({1.0 - p1, p1});
        },
        2);
    SquareConfig cfg;
    cfg.epsilon = 0.05;
    cfg.num_queries = 200;
    const AttackResult r = square_attack(oracle, kTarget, 0, cfg, seed);
    CHECK(r.success);
    CHECK(r.queries_spent <= 5);
  }
}

TEST_CASE("Square attack versus NES at equal budget on the linear teacher") {
  int square_wins_or_ties = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    NesConfig nes;
    nes.num_iterations = 2;  // 100 queries
    SquareConfig sq;
    sq.num_queries = 100;
    auto a = step_oracle(0.58);
    auto b = step_oracle(0.58);
    const bool nes_ok = nes_attack(a, kTarget, 0, nes, seed).success;
    const bool square_ok = square_attack(b, kTarget, 0, sq, seed).success;
    square_wins_or_ties += (square_ok || !nes_ok) ? 1 : 0;
  }
  // Recorded only: the comparison depends on the geometry.
  MESSAGE("square >= NES in " << square_wins_or_ties << "/10 seeds");
}

TEST_CASE("baselines check their precondition and propagate budget errors") {
  auto oracle = step_oracle(0.4);  // the target is already class 1
  CHECK_THROWS_AS(nes_attack(oracle, kTarget, 0, NesConfig{}, 1), std::invalid_argument);
  CHECK_THROWS_AS(zoo_attack(oracle, kTarget, 0, ZooConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(square_attack(oracle, kTarget, 0, SquareConfig{}, 1), std::invalid_argument);

  auto limited = constant_oracle(5);
  CHECK_THROWS_AS(nes_attack(limited, kTarget, 0, NesConfig{}, 1), BudgetExhausted);
}
