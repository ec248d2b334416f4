#include "mma/teacher.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

#include "mma/losses.hpp"

namespace mma {

void train_supervised(NeuralClassifier& model, const LabeledDataset& data, const TeacherTrainingConfig& config) {
  if (data.empty()) throw std::invalid_argument("train_supervised: empty dataset");
  if (data.dim() != model.input_size() || data.num_classes() != model.num_classes()) {
    throw std::invalid_argument("train_supervised: dataset does not match the model's input or class count");
  }
  if (config.batch_size == 0) throw std::invalid_argument("train_supervised: batch_size must be positive");
  SgdOptimizer optimizer(config.optimizer);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t k = model.num_classes();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      std::vector<double> xs;
      xs.reserve(count * data.dim());
      Tensor onehot({count, k}, 0.0);
      for (std::size_t r = 0; r < count; ++r) {
        const auto& s = data[order[start + r]];
        xs.insert(xs.end(), s.features.begin(), s.features.end());
        onehot[r * k + s.label] = 1.0;
      }
      ComputeGraph g;
      const NodeId x = g.leaf("x");
      const NodeId y = g.leaf("y");
      const NodeId probs = g.softmax(model.build_logits(g, x));
      const NodeId loss =
          g.scale(g.sum(g.multiply(y, g.log(probs, kProbabilityFloor))), -1.0 / static_cast<double>(count));
      g.forward({{"x", model.batch_tensor(xs, count)}, {"y", std::move(onehot)}}, model.parameters());
      optimizer.step(model.parameters(), g.backward(loss));
    }
  }
}

double accuracy(const NeuralClassifier& model, const LabeledDataset& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : data.samples()) correct += model.classify(s.features) == s.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace mma
