#include "mma/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mma {

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(op) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
}

double floored_log(double p) { return std::log(std::max(p, kProbabilityFloor)); }

}  // namespace

double cross_entropy(std::span<const double> probs, std::size_t target) {
  if (target >= probs.size()) {
    throw std::out_of_range("cross_entropy: class " + std::to_string(target) + " out of range for " +
                            std::to_string(probs.size()) + " classes");
  }
  return -floored_log(probs[target]);
}

double soft_cross_entropy(std::span<const double> probs, std::span<const double> target) {
  require_same_length(probs, target, "soft_cross_entropy");
  double total = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) total -= target[k] * floored_log(probs[k]);
  return total;
}

double kl_divergence(std::span<const double> student, std::span<const double> teacher) {
  require_same_length(student, teacher, "kl_divergence");
  double total = 0.0;
  for (std::size_t k = 0; k < teacher.size(); ++k) {
    if (teacher[k] <= 0.0) continue;
    total += teacher[k] * (floored_log(teacher[k]) - floored_log(student[k]));
  }
  // Rounding can leave a tiny negative residue for identical inputs.
  return std::max(total, 0.0);
}

}  // namespace mma
