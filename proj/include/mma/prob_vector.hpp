#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mma {

/// 0-based class index. Files and reports written for people use 1-based labels.
using ClassIndex = std::size_t;

/// Index of the largest entry; ties go to the lowest index.
ClassIndex argmax(std::span<const double> values);

/// A point on the probability simplex over K classes.
class ProbVector {
 public:
  /// Tolerance on |sum - 1|.
  static constexpr double kSumTolerance = 1e-9;

  ProbVector() = default;
  /// Throws std::invalid_argument unless every entry lies in [0,1] and the sum is within tolerance of 1.
  explicit ProbVector(std::vector<double> values);

  static bool is_valid(std::span<const double> values);

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t k) const { return values_[k]; }
  std::span<const double> values() const noexcept { return values_; }
  ClassIndex argmax() const { return mma::argmax(values_); }

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  std::vector<double> values_;
};

/// max_k |a_k - b_k|.
double inf_norm_gap(std::span<const double> a, std::span<const double> b);

}  // namespace mma
