#include "mma/sgd.hpp"

#include <stdexcept>

namespace mma {

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("sgd: learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("sgd: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("sgd: weight_decay must be nonnegative");
}

SgdOptimizer::SgdOptimizer(SgdConfig config) : config_(config) { config_.validate(); }

void SgdOptimizer::step(TensorMap& params, const TensorMap& grads) {
  for (auto& [name, param] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& grad = git->second;
    if (grad.shape() != param.shape()) {
      throw std::invalid_argument("sgd: gradient shape " + shape_to_string(grad.shape()) + " does not match parameter '" +
                                  name + "' " + shape_to_string(param.shape()));
    }
    auto [vit, inserted] = velocity_.try_emplace(name, param.shape(), 0.0);
    Tensor& vel = vit->second;
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double g = grad[i] + config_.weight_decay * param[i];
      vel[i] = config_.momentum * vel[i] + g;
      param[i] -= config_.learning_rate * vel[i];
    }
  }
}

}  // namespace mma
