#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mma/graph.hpp"
#include "mma/prob_vector.hpp"
#include "mma/tensor.hpp"

namespace mma {

struct AffineLayer {
  std::size_t out = 0;
};
struct ConvLayer {
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
};
struct ReluLayer {};
struct MaxPoolLayer {
  std::size_t kernel = 2;
  std::size_t stride = 2;
};
struct FlattenLayer {};

using LayerSpec = std::variant<AffineLayer, ConvLayer, ReluLayer, MaxPoolLayer, FlattenLayer>;

/// Layer chain over a per-sample input shape ({d} for vectors, {C,H,W} for images).
/// The final layer must be an affine layer whose width is the class count.
struct ArchitectureSpec {
  Shape input_shape;
  std::vector<LayerSpec> layers;

  /// Checks that shapes chain and returns the per-sample output shape of every layer.
  std::vector<Shape> validate() const;
  std::size_t num_classes() const;
  std::size_t input_size() const { return shape_size(input_shape); }
};

class NeuralClassifier;

/// Graph wiring of a classifier over a batch input leaf named "x".
struct ClassifierGraph {
  ComputeGraph graph;
  NodeId input = 0;
  NodeId logits = 0;
  NodeId probs = 0;
};

/// Differentiable map R^d -> simplex: the layer chain followed by a softmax head.
///
/// Parameters are named "L<i>.weight" / "L<i>.bias" after the layer index.
/// Inference is const and safe to run concurrently; training mutates `parameters()`.
class NeuralClassifier {
 public:
  /// Initialises weights and biases uniformly in [-sqrt(1/fan_in), sqrt(1/fan_in)].
  NeuralClassifier(ArchitectureSpec arch, std::uint64_t seed);
  NeuralClassifier(ArchitectureSpec arch, TensorMap parameters);

  const ArchitectureSpec& architecture() const noexcept { return arch_; }
  std::size_t input_size() const noexcept { return input_size_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t parameter_count() const;

  TensorMap& parameters() noexcept { return params_; }
  const TensorMap& parameters() const noexcept { return params_; }

  /// Appends the layer chain to `graph` on top of `input` (shape [N, ...input_shape]).
  NodeId build_logits(ComputeGraph& graph, NodeId input) const;
  ClassifierGraph make_graph() const;

  /// Shapes a flat row-major batch of n samples into [n, ...input_shape].
  Tensor batch_tensor(std::span<const double> flat, std::size_t n) const;

  ProbVector predict_proba(std::span<const double> x) const;
  /// Row-wise probabilities for `n` samples packed row-major in `flat`.
  std::vector<ProbVector> predict_proba_batch(std::span<const double> flat, std::size_t n) const;
  std::vector<double> logits(std::span<const double> x) const;
  ClassIndex classify(std::span<const double> x) const;

  nlohmann::json to_json() const;
  static NeuralClassifier from_json(const nlohmann::json& doc);
  void save(const std::filesystem::path& path) const;
  static NeuralClassifier load(const std::filesystem::path& path);

 private:
  void check_input(std::size_t length) const;

  ArchitectureSpec arch_;
  TensorMap params_;
  std::size_t input_size_ = 0;
  std::size_t num_classes_ = 0;
};

/// widths[0] is the input dimension; each further entry adds affine+relu; the head is affine(K).
ArchitectureSpec mlp_architecture(const std::vector<std::size_t>& widths, std::size_t num_classes);
NeuralClassifier build_mlp(const std::vector<std::size_t>& widths, std::size_t num_classes, std::uint64_t seed);

/// conv(8,3,1,1) relu pool(2,2) conv(16,3,1,1) relu pool(2,2) flatten affine(64) relu affine(K).
ArchitectureSpec small_cnn_analog_architecture(std::size_t channels, std::size_t height, std::size_t width,
                                               std::size_t num_classes);
NeuralClassifier build_small_cnn_analog(std::size_t channels, std::size_t height, std::size_t width,
                                        std::size_t num_classes, std::uint64_t seed);

/// Full-size SmallCNN: three conv(3x3, pad 1)+relu+pool blocks of 64/128/256 channels,
/// then affine(512) relu affine(K). Needs image sides divisible by 8.
ArchitectureSpec small_cnn_architecture(std::size_t channels, std::size_t height, std::size_t width,
                                        std::size_t num_classes);

}  // namespace mma
