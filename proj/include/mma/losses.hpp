#pragma once

#include <cstddef>
#include <span>

namespace mma {

/// Probabilities are clamped to this value before any logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

/// -log(probs[target]); `target` is a 0-based class index.
double cross_entropy(std::span<const double> probs, std::size_t target);

/// -sum_k target_k * log(probs_k).
double soft_cross_entropy(std::span<const double> probs, std::span<const double> target);

/// KL(teacher || student) = sum_k teacher_k * log(teacher_k / student_k). Terms with
/// teacher_k == 0 contribute nothing.
double kl_divergence(std::span<const double> student, std::span<const double> teacher);

}  // namespace mma
