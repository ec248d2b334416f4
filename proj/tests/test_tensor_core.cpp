#include <cmath>
#include <random>

#include "doctest.h"
#include "mma/graph.hpp"
#include "mma/losses.hpp"
#include "mma/sgd.hpp"
#include "support/gradcheck.hpp"

using namespace mma;
using doctest::Approx;

namespace {

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

}  // namespace

TEST_CASE("tensor rejects inconsistent shapes") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({0, 2}), std::invalid_argument);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
}

TEST_CASE("forward: identity, relu, softmax") {
  SUBCASE("identity graph") {
    ComputeGraph g;
    g.leaf("x");
    const Tensor& out = g.forward({{"x", Tensor::from_vector({1, 2, 3})}});
    CHECK(out.values() == std::vector<double>{1, 2, 3});
  }
  SUBCASE("relu") {
    ComputeGraph g;
    g.relu(g.leaf("x"));
    CHECK(g.forward({{"x", Tensor::from_vector({-1, 0, 2})}}).values() == std::vector<double>{0, 0, 2});
  }
  SUBCASE("softmax of uniform logits") {
    ComputeGraph g;
    g.softmax(g.leaf("x"));
    const Tensor& out = g.forward({{"x", row({0, 0, 0, 0})}});
    for (double v : out.data()) CHECK(v == 0.25);
  }
}

TEST_CASE("forward errors name the offending node") {
  ComputeGraph g;
  const NodeId x = g.leaf("x");
  g.affine(x, g.leaf("w"), g.leaf("b"));
  try {
    g.forward({{"x", row({1, 2, 3})}, {"w", Tensor({2, 4})}, {"b", Tensor({2})}});
    FAIL("expected a shape error");
  } catch (const GraphError& e) {
    CHECK(std::string(e.what()).find("node 3 (affine)") != std::string::npos);
  }
  ComputeGraph unbound;
  unbound.relu(unbound.leaf("x"));
  CHECK_THROWS_AS(unbound.forward({}), GraphError);
}

TEST_CASE("backward: analytic cases") {
  SUBCASE("sum") {
    ComputeGraph g;
    const NodeId loss = g.sum(g.leaf("x"));
    g.forward({{"x", Tensor::from_vector({4, -1, 7})}});
    CHECK(g.backward(loss).at("x").values() == std::vector<double>{1, 1, 1});
  }
  SUBCASE("sum of squares") {
    ComputeGraph g;
    const NodeId x = g.leaf("x");
    const NodeId loss = g.sum(g.multiply(x, x));
    g.forward({{"x", Tensor::from_vector({1, 2})}});
    CHECK(g.backward(loss).at("x").values() == std::vector<double>{2, 4});
  }
  SUBCASE("backward before forward") {
    ComputeGraph g;
    const NodeId loss = g.sum(g.leaf("x"));
    CHECK_THROWS_AS(g.backward(loss), GraphError);
  }
  SUBCASE("non-scalar loss") {
    ComputeGraph g;
    const NodeId y = g.relu(g.leaf("x"));
    g.forward({{"x", Tensor::from_vector({1, 2})}});
    CHECK_THROWS_AS(g.backward(y), GraphError);
  }
}

TEST_CASE("backward matches finite differences on random MLPs") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto stats = testing::random_network_gradcheck(seed);
    CHECK(stats.pass_fraction() >= 0.99);
  }
}

TEST_CASE("conv and pooling gradients match finite differences") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto random_tensor = [&](Shape s) {
    Tensor t(std::move(s));
    for (double& v : t.data()) v = unit(rng);
    return t;
  };
  ComputeGraph g;
  const NodeId x = g.leaf("x");
  NodeId h = g.conv2d(x, g.leaf("w1"), g.leaf("b1"), 1, 1);
  h = g.maxpool2d(g.relu(h), 2, 2);
  h = g.conv2d(h, g.leaf("w2"), g.leaf("b2"), 2, 0);
  h = g.flatten(h);
  const NodeId loss = g.sum(g.multiply(h, g.leaf("c")));
  TensorMap vars{{"x", random_tensor({2, 2, 6, 6})},
                 {"w1", random_tensor({3, 2, 3, 3})},
                 {"b1", random_tensor({3})},
                 {"w2", random_tensor({2, 3, 2, 2})},
                 {"b2", random_tensor({2})}};
  const TensorMap constants{{"c", random_tensor({2, 2})}};
  g.forward(vars, constants);
  const TensorMap analytic = g.backward(loss);
  const auto stats = testing::finite_difference_check(g, vars, constants, analytic, 1e-5, 1e-4);
  CHECK(stats.pass_fraction() >= 0.99);
}

TEST_CASE("softmax stays on the simplex") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> logit(0.0, 30.0);
  ComputeGraph g;
  g.softmax(g.leaf("x"));
  for (int trial = 0; trial < 200; ++trial) {
    Tensor x({3, 7});
    for (double& v : x.data()) v = logit(rng);
    const Tensor& p = g.forward({{"x", x}});
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t k = 0; k < 7; ++k) {
        CHECK(p[r * 7 + k] >= 0.0);
        total += p[r * 7 + k];
      }
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("forward is deterministic") {
  NeuralClassifier net = build_mlp({3, 16, 16}, 4, 99);
  const std::vector<double> x{0.1, 0.7, 0.3};
  CHECK(net.predict_proba(x) == net.predict_proba(x));
}

TEST_CASE("cross entropy") {
  CHECK(cross_entropy(std::vector<double>{1, 0, 0}, 0) == Approx(0.0));
  CHECK(cross_entropy(std::vector<double>{0.5, 0.5}, 0) == Approx(std::log(2.0)));
  CHECK(cross_entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 2) == Approx(std::log(4.0)));
  CHECK(std::isfinite(cross_entropy(std::vector<double>{1, 0}, 1)));
  CHECK_THROWS_AS(cross_entropy(std::vector<double>{0.5, 0.5}, 2), std::out_of_range);
}

TEST_CASE("soft cross entropy") {
  const std::vector<double> half{0.5, 0.5};
  CHECK(soft_cross_entropy(half, half) == Approx(std::log(2.0)));
  CHECK(soft_cross_entropy(std::vector<double>{1, 0}, std::vector<double>{1, 0}) == Approx(0.0));
  CHECK(soft_cross_entropy(half, std::vector<double>{0.7, 0.3}) == Approx(std::log(2.0)));
  CHECK_THROWS_AS(soft_cross_entropy(half, std::vector<double>{1, 0, 0}), std::invalid_argument);
}

TEST_CASE("kl divergence") {
  const std::vector<double> p{0.2, 0.3, 0.5};
  CHECK(kl_divergence(p, p) == 0.0);
  CHECK(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0}) == Approx(std::log(2.0)));
  // Direct evaluation: 0.5*ln(0.5/0.9) + 0.5*ln(0.5/0.1).
  const double expected = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  CHECK(expected == Approx(0.5108).epsilon(1e-4));
  CHECK(kl_divergence(std::vector<double>{0.9, 0.1}, std::vector<double>{0.5, 0.5}) == Approx(expected));
  CHECK_THROWS_AS(kl_divergence(p, std::vector<double>{1, 0}), std::invalid_argument);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.01, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> a(4), b(4);
    double sa = 0, sb = 0;
    for (int k = 0; k < 4; ++k) {
      sa += a[k] = unit(rng);
      sb += b[k] = unit(rng);
    }
    for (int k = 0; k < 4; ++k) {
      a[k] /= sa;
      b[k] /= sb;
    }
    CHECK(kl_divergence(a, b) > 0.0);
  }
}

TEST_CASE("sgd step") {
  SUBCASE("plain step") {
    TensorMap params{{"p", Tensor::from_vector({5})}};
    SgdOptimizer opt({.learning_rate = 1.0});
    opt.step(params, {{"p", Tensor::from_vector({2})}});
    CHECK(params.at("p")[0] == 3.0);
  }
  SUBCASE("zero gradient is a fixed point") {
    TensorMap params{{"p", Tensor::from_vector({5, -2})}};
    SgdOptimizer opt({.learning_rate = 0.3});
    opt.step(params, {{"p", Tensor::from_vector({0, 0})}});
    CHECK(params.at("p").values() == std::vector<double>{5, -2});
  }
  SUBCASE("momentum recurrence") {
    // v1 = 1, p1 = -0.1; v2 = 0.9 + 1 = 1.9, p2 = -0.1 - 0.19 = -0.29.
    TensorMap params{{"p", Tensor::from_vector({0})}};
    SgdOptimizer opt({.learning_rate = 0.1, .momentum = 0.9});
    const TensorMap grads{{"p", Tensor::from_vector({1})}};
    opt.step(params, grads);
    CHECK(params.at("p")[0] == Approx(-0.1));
    opt.step(params, grads);
    CHECK(params.at("p")[0] == Approx(-0.29));
  }
  SUBCASE("weight decay") {
    TensorMap params{{"p", Tensor::from_vector({2})}};
    SgdOptimizer opt({.learning_rate = 0.5, .weight_decay = 0.1});
    opt.step(params, {{"p", Tensor::from_vector({0})}});
    CHECK(params.at("p")[0] == Approx(1.9));
  }
  SUBCASE("errors") {
    TensorMap params{{"p", Tensor::from_vector({1, 2})}};
    SgdOptimizer opt({});
    CHECK_THROWS_AS(opt.step(params, {{"p", Tensor::from_vector({1})}}), std::invalid_argument);
    CHECK_THROWS_AS(SgdOptimizer({.learning_rate = 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(SgdOptimizer({.momentum = 1.0}), std::invalid_argument);
  }
}
