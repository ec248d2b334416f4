#pragma once

#include <cstdint>

#include "mma/datasets.hpp"
#include "mma/models.hpp"
#include "mma/sgd.hpp"

namespace mma {

struct TeacherTrainingConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  SgdConfig optimizer{.learning_rate = 0.1, .momentum = 0.9, .weight_decay = 1e-4};
  std::uint64_t seed = 0;
};

/// Mini-batch cross-entropy training on hard labels.
void train_supervised(NeuralClassifier& model, const LabeledDataset& data, const TeacherTrainingConfig& config);

double accuracy(const NeuralClassifier& model, const LabeledDataset& data);

}  // namespace mma
