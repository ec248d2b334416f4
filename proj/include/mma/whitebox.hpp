#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "mma/models.hpp"
#include "mma/prob_vector.hpp"

namespace mma {

enum class BallNorm { linf, l2 };

struct PgdConfig {
  double delta = 0.05;
  double step = 0.005;
  std::size_t steps = 10;
  BallNorm norm = BallNorm::linf;
  bool random_start = false;
  /// PGD runs per batch candidate; the run with the highest final loss is kept.
  std::size_t restarts = 1;

  void validate() const;
};

struct Candidate {
  std::vector<double> point;
  ClassIndex student_class = 0;
  /// Student cross-entropy at the start point and after each update.
  std::vector<double> loss_trajectory;
};

/// Called with every iterate, the start point included.
using IterateObserver = std::function<void(std::span<const double>)>;

double ball_distance(std::span<const double> a, std::span<const double> b, BallNorm norm);

/// Nearest point to `x0` in the delta-ball around `center`, then clipped to [0,1]^d.
std::vector<double> project_ball(std::span<const double> x0, std::span<const double> center, double delta,
                                 BallNorm norm);

/// Uniform draw from the delta-ball around `center`, clipped to the box.
template <class Rng>
std::vector<double> random_ball_point(std::span<const double> center, double delta, BallNorm norm, Rng& rng) {
  std::vector<double> offset(center.size());
  if (norm == BallNorm::linf) {
    std::uniform_real_distribution<double> u(-delta, delta);
    for (auto& v : offset) v = u(rng);
  } else {
    std::normal_distribution<double> g(0.0, 1.0);
    double length = 0.0;
    for (auto& v : offset) {
      v = g(rng);
      length += v * v;
    }
    length = std::sqrt(length);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double radius = delta * std::pow(u(rng), 1.0 / static_cast<double>(center.size()));
    for (auto& v : offset) v = length > 0.0 ? v * radius / length : 0.0;
  }
  for (std::size_t i = 0; i < offset.size(); ++i) offset[i] += center[i];
  return project_ball(offset, center, delta, norm);
}

/// Cross-entropy of the student at `x` against class `y` and its input gradient.
double input_loss_gradient(const NeuralClassifier& student, std::span<const double> x, ClassIndex y,
                           std::vector<double>& gradient);

/// Sign-gradient ascent on the student's cross-entropy: `steps` updates
/// x <- Proj(x + step * sign(grad)), starting at x or at `start` when given.
Candidate pgd_attack(const NeuralClassifier& student, std::span<const double> x, ClassIndex y, const PgdConfig& config,
                     std::span<const double> start = {}, const IterateObserver& observer = nullptr);

/// Up to `count` distinct candidates. The first run starts at x unless random_start
/// is set; every other run starts at a seeded random point of the ball. Duplicates
/// are redrawn at most 3 * count times, so fewer than `count` may come back.
std::vector<Candidate> generate_candidate_batch(const NeuralClassifier& student, std::span<const double> x,
                                                ClassIndex y, const PgdConfig& config, std::size_t count,
                                                std::uint64_t seed);

}  // namespace mma
