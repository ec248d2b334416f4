#include "mma/datasets.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mma {

FeatureKey feature_key(std::span<const double> features) {
  FeatureKey key(features.size());
  std::transform(features.begin(), features.end(), key.begin(), [](double v) { return std::bit_cast<std::uint64_t>(v); });
  return key;
}

bool in_unit_box(std::span<const double> features) {
  return std::all_of(features.begin(), features.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

LabeledDataset::LabeledDataset(std::size_t dim, std::size_t num_classes) : dim_(dim), num_classes_(num_classes) {
  if (dim == 0) throw std::invalid_argument("dataset: feature dimension must be positive");
  if (num_classes < 2) throw std::invalid_argument("dataset: need at least two classes");
}

void LabeledDataset::add(std::vector<double> features, ClassIndex label) {
  if (features.size() != dim_) {
    throw std::invalid_argument("dataset: sample has " + std::to_string(features.size()) + " features, expected " +
                                std::to_string(dim_));
  }
  if (label >= num_classes_) throw std::invalid_argument("dataset: label " + std::to_string(label + 1) + " out of range");
  if (!in_unit_box(features)) throw std::invalid_argument("dataset: features must lie in [0,1]");
  samples_.push_back({std::move(features), label});
}

std::vector<std::vector<double>> LabeledDataset::points() const {
  std::vector<std::vector<double>> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.features);
  return out;
}

bool operator==(const LabeledSample& a, const LabeledSample& b) {
  return a.label == b.label && feature_key(a.features) == feature_key(b.features);
}

bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
  return a.dim_ == b.dim_ && a.num_classes_ == b.num_classes_ && a.samples_ == b.samples_;
}

bool SoftLabeledDataset::upsert(std::vector<double> features, ProbVector soft_label) {
  if (features.size() != dim_) throw std::invalid_argument("soft dataset: feature dimension mismatch");
  if (!samples_.empty() && soft_label.size() != samples_.front().soft_label.size()) {
    throw std::invalid_argument("soft dataset: label length mismatch");
  }
  auto [it, inserted] = index_.try_emplace(feature_key(features), samples_.size());
  if (!inserted) {
    samples_[it->second].soft_label = std::move(soft_label);
    return false;
  }
  samples_.push_back({std::move(features), std::move(soft_label)});
  return true;
}

bool SoftLabeledDataset::contains(std::span<const double> features) const {
  return index_.contains(feature_key(features));
}

std::vector<double> SoftLabeledDataset::packed_features(std::span<const std::size_t> rows) const {
  std::vector<double> out;
  out.reserve(rows.size() * dim_);
  for (std::size_t r : rows) out.insert(out.end(), samples_[r].features.begin(), samples_[r].features.end());
  return out;
}

std::vector<double> SoftLabeledDataset::packed_labels(std::span<const std::size_t> rows) const {
  std::vector<double> out;
  for (std::size_t r : rows) {
    auto values = samples_[r].soft_label.values();
    out.insert(out.end(), values.begin(), values.end());
  }
  return out;
}

LabeledDataset gen_gaussian_blobs(std::size_t num_classes, std::size_t dim, std::size_t n_per_class, double spread,
                                  std::uint64_t seed) {
  if (!(spread > 0.0)) throw std::invalid_argument("gen_gaussian_blobs: spread must be positive");
  LabeledDataset out(dim, num_classes);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> place(0.2, 0.8);
  std::vector<std::vector<double>> centres(num_classes, std::vector<double>(dim));
  for (auto& c : centres) {
    for (double& v : c) v = place(rng);
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      std::vector<double> x(dim);
      for (std::size_t j = 0; j < dim; ++j) x[j] = std::clamp(centres[k][j] + spread * noise(rng), 0.0, 1.0);
      out.add(std::move(x), k);
    }
  }
  return out;
}

LabeledDataset gen_ring_classes(std::size_t num_classes, std::size_t n_per_class, std::uint64_t seed) {
  LabeledDataset out(2, num_classes);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  const double band = 0.45 / static_cast<double>(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    // Inner tenth of each band is left empty so consecutive rings never touch.
    std::uniform_real_distribution<double> radius((static_cast<double>(k) + 0.1) * band,
                                                  static_cast<double>(k + 1) * band);
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const double r = radius(rng), a = angle(rng);
      out.add({std::clamp(0.5 + r * std::cos(a), 0.0, 1.0), std::clamp(0.5 + r * std::sin(a), 0.0, 1.0)}, k);
    }
  }
  return out;
}

namespace {

[[noreturn]] void csv_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

LabeledDataset load_csv(const std::filesystem::path& path, std::size_t num_classes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  struct Row {
    std::vector<double> features;
    long label;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::string text;
  std::size_t line = 0;
  long max_label = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(text);
    for (std::string field; std::getline(ss, field, ',');) fields.push_back(field);
    if (fields.size() < 2) csv_error(path, line, "expected 'label,f1,...,fd'");
    Row row{{}, 0, line};
    const std::string& lf = fields.front();
    auto [lp, lec] = std::from_chars(lf.data(), lf.data() + lf.size(), row.label);
    if (lec != std::errc{} || lp != lf.data() + lf.size()) csv_error(path, line, "malformed label '" + lf + "'");
    if (row.label < 1) csv_error(path, line, "labels are 1-based; got " + lf);
    for (std::size_t j = 1; j < fields.size(); ++j) {
      const std::string& f = fields[j];
      double v = 0.0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc{} || p != f.data() + f.size()) csv_error(path, line, "malformed feature '" + f + "'");
      if (!(v >= 0.0 && v <= 1.0)) csv_error(path, line, "feature " + f + " outside [0,1]");
      row.features.push_back(v);
    }
    if (!rows.empty() && row.features.size() != rows.front().features.size()) {
      csv_error(path, line, "inconsistent feature count");
    }
    max_label = std::max(max_label, row.label);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path.string() + ": no samples");
  const std::size_t classes = num_classes != 0 ? num_classes : std::max<std::size_t>(2, static_cast<std::size_t>(max_label));
  LabeledDataset out(rows.front().features.size(), classes);
  for (auto& row : rows) {
    if (static_cast<std::size_t>(row.label) > classes) csv_error(path, row.line, "label exceeds class count");
    out.add(std::move(row.features), static_cast<ClassIndex>(row.label - 1));
  }
  return out;
}

void save_csv(const LabeledDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  char buf[32];
  for (const auto& s : dataset.samples()) {
    out << s.label + 1;
    for (double v : s.features) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& dataset, std::pair<double, double> fractions,
                                                std::uint64_t seed) {
  const auto [first, second] = fractions;
  if (!(first >= 0.0 && second >= 0.0) || std::abs(first + second - 1.0) > 1e-9) {
    throw std::invalid_argument("split: fractions must be nonnegative and sum to 1");
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_first = static_cast<std::size_t>(std::llround(first * static_cast<double>(dataset.size())));
  LabeledDataset a(dataset.dim(), dataset.num_classes()), b(dataset.dim(), dataset.num_classes());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& s = dataset[order[i]];
    (i < n_first ? a : b).add(s.features, s.label);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace mma
