#include "mma/prob_vector.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mma {

ClassIndex argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty vector");
  ClassIndex best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) best = k;
  }
  return best;
}

bool ProbVector::is_valid(std::span<const double> values) {
  if (values.empty()) return false;
  double total = 0.0;
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) return false;
    total += v;
  }
  return std::abs(total - 1.0) <= kSumTolerance;
}

ProbVector::ProbVector(std::vector<double> values) : values_(std::move(values)) {
  if (!is_valid(values_)) {
    throw std::invalid_argument("not a probability vector over " + std::to_string(values_.size()) + " classes");
  }
}

double inf_norm_gap(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("inf_norm_gap: length mismatch");
  double gap = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) gap = std::max(gap, std::abs(a[k] - b[k]));
  return gap;
}

}  // namespace mma
