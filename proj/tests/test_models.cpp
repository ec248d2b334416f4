#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "mma/models.hpp"

using namespace mma;

namespace {

std::vector<double> random_point(std::mt19937_64& rng, std::size_t d) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> x(d);
  for (double& v : x) v = unit(rng);
  return x;
}

// Independent forward pass for an affine/relu chain: plain loops over the stored weights.
std::vector<double> hand_rolled_mlp(const NeuralClassifier& net, std::vector<double> h, std::size_t affine_layers) {
  std::size_t layer = 0;
  for (std::size_t a = 0; a < affine_layers; ++a, layer += 2) {
    const Tensor& w = net.parameters().at("L" + std::to_string(layer) + ".weight");
    const Tensor& b = net.parameters().at("L" + std::to_string(layer) + ".bias");
    std::vector<double> next(w.dim(0));
    for (std::size_t o = 0; o < w.dim(0); ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < w.dim(1); ++i) acc += w[o * w.dim(1) + i] * h[i];
      next[o] = acc + b[o];
      if (a + 1 < affine_layers) next[o] = std::max(next[o], 0.0);
    }
    h = std::move(next);
  }
  double top = *std::max_element(h.begin(), h.end());
  double total = 0.0;
  for (double& v : h) total += v = std::exp(v - top);
  for (double& v : h) v /= total;
  return h;
}

}  // namespace

TEST_CASE("zero weights give uniform probabilities") {
  NeuralClassifier net = build_mlp({3, 5}, 4, 1);
  for (auto& [name, t] : net.parameters()) {
    for (double& v : t.data()) v = 0.0;
  }
  const ProbVector p = net.predict_proba(std::vector<double>{0.3, 0.9, 0.1});
  for (std::size_t k = 0; k < 4; ++k) CHECK(p[k] == 0.25);
}

TEST_CASE("predict_proba matches an independent forward pass") {
  NeuralClassifier net = build_mlp({2, 16}, 2, 2024);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_point(rng, 2);
    const ProbVector p = net.predict_proba(x);
    const std::vector<double> expected = hand_rolled_mlp(net, x, 2);
    CHECK(std::abs(p.values()[0] + p.values()[1] - 1.0) <= 1e-9);
    for (std::size_t k = 0; k < 2; ++k) CHECK(p[k] == doctest::Approx(expected[k]).epsilon(1e-13));
  }
}

TEST_CASE("predict_proba rejects wrong input size") {
  NeuralClassifier net = build_mlp({3}, 2, 1);
  CHECK_THROWS_AS(net.predict_proba(std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("argmax tie-break and classify") {
  CHECK(argmax(std::vector<double>{0.1, 0.7, 0.2}) == 1);
  CHECK(argmax(std::vector<double>{0.5, 0.5}) == 0);
  NeuralClassifier net = build_mlp({4, 12}, 5, 3);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_point(rng, 4);
    CHECK(net.classify(x) == argmax(net.predict_proba(x).values()));
  }
}

TEST_CASE("classify is invariant to a uniform logit shift") {
  NeuralClassifier net = build_mlp({2, 8}, 3, 77);
  NeuralClassifier shifted = net;
  for (double& v : shifted.parameters().at("L2.bias").data()) v += 3.25;
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = random_point(rng, 2);
    CHECK(net.classify(x) == shifted.classify(x));
  }
}

TEST_CASE("mlp construction") {
  // (2*16+16) + (16*16+16) + (16*2+2)
  const std::size_t expected = (2 * 16 + 16) + (16 * 16 + 16) + (16 * 2 + 2);
  CHECK(expected == 354);
  CHECK(build_mlp({2, 16, 16}, 2, 0).parameter_count() == expected);

  NeuralClassifier linear = build_mlp({6}, 3, 0);
  CHECK(linear.architecture().layers.size() == 1);
  CHECK(linear.parameter_count() == 6 * 3 + 3);

  CHECK(build_mlp({2, 8}, 2, 42).parameters() == build_mlp({2, 8}, 2, 42).parameters());
  CHECK(build_mlp({2, 8}, 2, 42).parameters() != build_mlp({2, 8}, 2, 43).parameters());
  CHECK_THROWS_AS(build_mlp({}, 2, 0), std::invalid_argument);
}

TEST_CASE("initialisation stays within the fan-in bound") {
  NeuralClassifier net = build_mlp({9, 25}, 4, 10);
  const double first = std::sqrt(1.0 / 9.0), second = std::sqrt(1.0 / 25.0);
  for (double v : net.parameters().at("L0.weight").data()) CHECK(std::abs(v) <= first);
  for (double v : net.parameters().at("L2.weight").data()) CHECK(std::abs(v) <= second);
}

TEST_CASE("small CNN analog") {
  // conv(1->8, 3x3) + conv(8->16, 3x3) + affine(16*4*4 -> 64) + affine(64 -> 10)
  const std::size_t expected = 8 * (9 * 1 + 1) + 16 * (9 * 8 + 1) + 64 * (16 * 4 * 4 + 1) + 10 * (64 + 1);
  CHECK(expected == 18346);
  NeuralClassifier cnn = build_small_cnn_analog(1, 16, 16, 10, 5);
  CHECK(cnn.parameter_count() == expected);
  CHECK(cnn.input_size() == 256);

  std::mt19937_64 rng(1);
  const ProbVector p = cnn.predict_proba(random_point(rng, 256));
  CHECK(p.size() == 10);
  CHECK(ProbVector::is_valid(p.values()));
  CHECK_THROWS_AS(build_small_cnn_analog(1, 14, 14, 10, 0), std::invalid_argument);
}

TEST_CASE("full-size SmallCNN layout") {
  const ArchitectureSpec arch = small_cnn_architecture(3, 32, 32, 10);
  const std::size_t expected = 64 * (27 + 1) + 128 * (64 * 9 + 1) + 256 * (128 * 9 + 1) + 512 * (4096 + 1) + 10 * (512 + 1);
  std::size_t count = 0;
  Shape current = arch.input_shape;
  const auto shapes = arch.validate();
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (auto* c = std::get_if<ConvLayer>(&arch.layers[i])) count += c->out_channels * (current[0] * 9 + 1);
    if (auto* a = std::get_if<AffineLayer>(&arch.layers[i])) count += a->out * (current[0] + 1);
    current = shapes[i];
  }
  CHECK(shapes[9] == Shape{4096});
  CHECK(count == expected);
}

TEST_CASE("checkpoint round trip is bit-identical") {
  const auto path = std::filesystem::temp_directory_path() / "mma_test_checkpoint.json";
  NeuralClassifier net = build_mlp({3, 10, 7}, 4, 123);
  net.save(path);
  NeuralClassifier loaded = NeuralClassifier::load(path);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_point(rng, 3);
    CHECK(net.predict_proba(x) == loaded.predict_proba(x));
  }
  NeuralClassifier cnn = build_small_cnn_analog(1, 8, 8, 3, 9);
  cnn.save(path);
  CHECK(NeuralClassifier::load(path).parameters() == cnn.parameters());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(NeuralClassifier::load(path), std::runtime_error);
}
