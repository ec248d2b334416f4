#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "mma/prob_vector.hpp"

namespace mma {

/// Bit pattern of a feature vector; two points share a key iff they are bit-identical.
using FeatureKey = std::vector<std::uint64_t>;
FeatureKey feature_key(std::span<const double> features);

/// True when every coordinate lies in [0, 1].
bool in_unit_box(std::span<const double> features);

struct LabeledSample {
  std::vector<double> features;
  ClassIndex label = 0;
};

/// Hard-labelled samples inside the box [0,1]^d.
class LabeledDataset {
 public:
  LabeledDataset(std::size_t dim, std::size_t num_classes);

  /// Throws std::invalid_argument on a wrong dimension, an out-of-range label or a
  /// feature outside [0,1].
  void add(std::vector<double> features, ClassIndex label);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  const LabeledSample& operator[](std::size_t i) const { return samples_[i]; }
  const std::vector<LabeledSample>& samples() const noexcept { return samples_; }

  std::vector<std::vector<double>> points() const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&);

 private:
  std::size_t dim_;
  std::size_t num_classes_;
  std::vector<LabeledSample> samples_;
};

bool operator==(const LabeledSample& a, const LabeledSample& b);

struct SoftSample {
  std::vector<double> features;
  ProbVector soft_label;
};

/// Soft-labelled training set with no two bit-identical feature vectors.
class SoftLabeledDataset {
 public:
  explicit SoftLabeledDataset(std::size_t dim) : dim_(dim) {}

  /// Inserts a new sample, or overwrites the label of an existing identical point.
  /// Returns true when the point was new.
  bool upsert(std::vector<double> features, ProbVector soft_label);
  bool contains(std::span<const double> features) const;

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  const SoftSample& operator[](std::size_t i) const { return samples_[i]; }
  const std::vector<SoftSample>& samples() const noexcept { return samples_; }

  /// Row-major [size, dim] features and [size, K] labels for the given sample indices.
  std::vector<double> packed_features(std::span<const std::size_t> rows) const;
  std::vector<double> packed_labels(std::span<const std::size_t> rows) const;

 private:
  std::size_t dim_;
  std::vector<SoftSample> samples_;
  std::map<FeatureKey, std::size_t> index_;
};

/// K Gaussian blobs with centres drawn uniformly in [0.2,0.8]^d; samples are
/// centre + spread * N(0, I), clipped to [0,1]^d. Class-major order.
LabeledDataset gen_gaussian_blobs(std::size_t num_classes, std::size_t dim, std::size_t n_per_class, double spread,
                                  std::uint64_t seed);

/// K concentric annuli around (0.5, 0.5) with disjoint, increasing radius bands in (0, 0.45].
LabeledDataset gen_ring_classes(std::size_t num_classes, std::size_t n_per_class, std::uint64_t seed);

/// Rows "label,f1,...,fd" with 1-based labels. `num_classes` of 0 infers K from the largest label.
LabeledDataset load_csv(const std::filesystem::path& path, std::size_t num_classes = 0);
void save_csv(const LabeledDataset& dataset, const std::filesystem::path& path);

/// Seeded shuffle into (first, second) parts of sizes round(n*fractions.first) and the rest.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& dataset, std::pair<double, double> fractions,
                                                std::uint64_t seed);

}  // namespace mma
