#pragma once

#include "mma/tensor.hpp"

namespace mma {

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;

  void validate() const;
};

/// Momentum SGD with L2 weight decay:
///   g <- grad + weight_decay * p;  v <- momentum * v + g;  p <- p - learning_rate * v
class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdConfig config);

  /// Updates every entry of `params` that has a gradient in `grads`. Gradients for
  /// names not in `params` (e.g. inputs) are ignored.
  void step(TensorMap& params, const TensorMap& grads);

  const SgdConfig& config() const noexcept { return config_; }
  const TensorMap& velocity() const noexcept { return velocity_; }
  void reset() { velocity_.clear(); }

 private:
  SgdConfig config_;
  TensorMap velocity_;
};

}  // namespace mma
