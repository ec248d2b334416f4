#include "mma/whitebox.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "mma/datasets.hpp"
#include "mma/losses.hpp"

namespace mma {

void PgdConfig::validate() const {
  if (!(delta > 0.0)) throw std::invalid_argument("pgd.delta must be positive");
  if (!(step > 0.0)) throw std::invalid_argument("pgd.step must be positive");
  if (steps == 0) throw std::invalid_argument("pgd.steps must be at least 1");
  if (restarts == 0) throw std::invalid_argument("pgd.restarts must be at least 1");
}

double ball_distance(std::span<const double> a, std::span<const double> b, BallNorm norm) {
  if (a.size() != b.size()) throw std::invalid_argument("ball_distance: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    acc = norm == BallNorm::linf ? std::max(acc, d) : acc + d * d;
  }
  return norm == BallNorm::linf ? acc : std::sqrt(acc);
}

std::vector<double> project_ball(std::span<const double> x0, std::span<const double> center, double delta,
                                 BallNorm norm) {
  if (x0.size() != center.size()) throw std::invalid_argument("project_ball: shape mismatch");
  std::vector<double> out(x0.begin(), x0.end());
  if (norm == BallNorm::linf) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], center[i] - delta, center[i] + delta);
  } else {
    const double dist = ball_distance(x0, center, BallNorm::l2);
    if (dist > delta) {
      const double shrink = delta / dist;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = center[i] + (x0[i] - center[i]) * shrink;
    }
  }
  for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

namespace {

struct LossGraph {
  ComputeGraph graph;
  NodeId loss = 0;
};

LossGraph make_loss_graph(const NeuralClassifier& student) {
  LossGraph lg;
  const NodeId x = lg.graph.leaf("x");
  const NodeId onehot = lg.graph.leaf("y");
  const NodeId probs = lg.graph.softmax(student.build_logits(lg.graph, x));
  lg.loss = lg.graph.scale(lg.graph.sum(lg.graph.multiply(onehot, lg.graph.log(probs, kProbabilityFloor))), -1.0);
  return lg;
}

double eval_loss_gradient(LossGraph& lg, const NeuralClassifier& student, std::span<const double> x, ClassIndex y,
                          std::vector<double>* gradient) {
  if (y >= student.num_classes()) throw std::out_of_range("PGD target class out of range");
  Tensor onehot({1, student.num_classes()}, 0.0);
  onehot[y] = 1.0;
  const Tensor& loss = lg.graph.forward({{"x", student.batch_tensor(x, 1)}, {"y", std::move(onehot)}},
                                        student.parameters());
  const double value = loss[0];
  if (gradient != nullptr) {
    const TensorMap grads = lg.graph.backward(lg.loss);
    const auto& gx = grads.at("x").values();
    gradient->assign(gx.begin(), gx.end());
  }
  return value;
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

double input_loss_gradient(const NeuralClassifier& student, std::span<const double> x, ClassIndex y,
                           std::vector<double>& gradient) {
  LossGraph lg = make_loss_graph(student);
  return eval_loss_gradient(lg, student, x, y, &gradient);
}

Candidate pgd_attack(const NeuralClassifier& student, std::span<const double> x, ClassIndex y, const PgdConfig& config,
                     std::span<const double> start, const IterateObserver& observer) {
  config.validate();
  if (x.size() != student.input_size()) throw std::invalid_argument("pgd_attack: input size mismatch");
  if (!start.empty() && start.size() != x.size()) throw std::invalid_argument("pgd_attack: start size mismatch");
  LossGraph lg = make_loss_graph(student);
  Candidate out;
  std::vector<double> current = start.empty() ? std::vector<double>(x.begin(), x.end())
                                              : project_ball(start, x, config.delta, config.norm);
  std::vector<double> gradient;
  out.loss_trajectory.reserve(config.steps + 1);
  if (observer) observer(current);
  for (std::size_t t = 0; t < config.steps; ++t) {
    out.loss_trajectory.push_back(eval_loss_gradient(lg, student, current, y, &gradient));
    for (std::size_t i = 0; i < current.size(); ++i) current[i] += config.step * sign(gradient[i]);
    current = project_ball(current, x, config.delta, config.norm);
    if (observer) observer(current);
  }
  out.loss_trajectory.push_back(eval_loss_gradient(lg, student, current, y, nullptr));
  out.student_class = student.classify(current);
  out.point = std::move(current);
  return out;
}

std::vector<Candidate> generate_candidate_batch(const NeuralClassifier& student, std::span<const double> x,
                                                ClassIndex y, const PgdConfig& config, std::size_t count,
                                                std::uint64_t seed) {
  config.validate();
  if (count == 0) throw std::invalid_argument("generate_candidate_batch: count must be at least 1");
  std::mt19937_64 rng(seed);
  std::vector<Candidate> batch;
  std::set<FeatureKey> seen;
  const std::size_t max_attempts = count + 3 * count;
  bool deterministic_pending = !config.random_start;
  for (std::size_t attempt = 0; attempt < max_attempts && batch.size() < count; ++attempt) {
    Candidate best;
    bool have_best = false;
    for (std::size_t r = 0; r < config.restarts; ++r) {
      Candidate run;
      if (deterministic_pending) {
        run = pgd_attack(student, x, y, config);
        deterministic_pending = false;
      } else {
        const auto start = random_ball_point(x, config.delta, config.norm, rng);
        run = pgd_attack(student, x, y, config, start);
      }
      if (!have_best || run.loss_trajectory.back() > best.loss_trajectory.back()) {
        best = std::move(run);
        have_best = true;
      }
    }
    if (seen.insert(feature_key(best.point)).second) batch.push_back(std::move(best));
  }
  return batch;
}

}  // namespace mma
