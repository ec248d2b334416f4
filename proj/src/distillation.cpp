#include "mma/distillation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "mma/losses.hpp"

namespace mma {

void DistillationConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("distillation: epsilon must be positive");
  if (batch_size == 0) throw std::invalid_argument("distillation: batch_size must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("distillation: alpha must lie in [0,1]");
  if (!(temperature > 0.0)) throw std::invalid_argument("distillation: temperature must be positive");
  optimizer.validate();
}

SoftLabeledDataset build_student_dataset(BlackBoxOracle& oracle, std::span<const std::vector<double>> points) {
  SoftLabeledDataset out(oracle.input_dim());
  for (const auto& x : points) {
    if (!in_unit_box(x)) throw std::invalid_argument("build_student_dataset: point outside [0,1]^d");
    out.upsert(x, oracle.query(x, QueryPhase::setup));
  }
  return out;
}

MatchReport evaluate_match(std::span<const double> student_probs, const SoftLabeledDataset& dataset, double epsilon) {
  MatchReport report;
  report.samples.reserve(dataset.size());
  const double threshold = epsilon / 4.0;
  bool passed = true;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto teacher = dataset[i].soft_label.values();
    const auto student = student_probs.subspan(i * teacher.size(), teacher.size());
    SampleMatch m{argmax(student) == argmax(teacher), inf_norm_gap(student, teacher)};
    if (!m.argmax_match) ++report.argmax_mismatches;
    passed = passed && m.argmax_match && m.inf_gap < threshold;
    report.worst_gap = std::max(report.worst_gap, m.inf_gap);
    report.samples.push_back(m);
  }
  report.passed = passed;
  return report;
}

MatchReport check_perfect_match(const NeuralClassifier& student, const SoftLabeledDataset& dataset, double epsilon) {
  if (dataset.empty()) return {.passed = true};
  std::vector<std::size_t> rows(dataset.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  ClassifierGraph g = student.make_graph();
  const Tensor& probs = g.graph.forward({{"x", student.batch_tensor(dataset.packed_features(rows), rows.size())}},
                                        student.parameters());
  return evaluate_match(probs.data(), dataset, epsilon);
}

namespace {

/// Loss graph over a batch; "x" and "target" are bound per batch.
struct LossGraph {
  ClassifierGraph net;
  NodeId loss = 0;
};

LossGraph make_loss_graph(const NeuralClassifier& student, const DistillationConfig& config, std::size_t rows) {
  LossGraph lg;
  ComputeGraph& g = lg.net.graph;
  lg.net.input = g.leaf("x");
  lg.net.logits = student.build_logits(g, lg.net.input);
  lg.net.probs = g.softmax(lg.net.logits);
  const double inv_rows = 1.0 / static_cast<double>(rows);
  if (config.loss_mode == LossMode::soft_cross_entropy) {
    const NodeId target = g.leaf("target");
    lg.loss = g.scale(g.sum(g.multiply(target, g.log(lg.net.probs, kProbabilityFloor))), -inv_rows);
    return lg;
  }
  const NodeId hard = g.leaf("hard_target");
  const NodeId soft = g.leaf("tempered_target");
  const NodeId hard_term =
      g.scale(g.sum(g.multiply(hard, g.log(lg.net.probs, kProbabilityFloor))), -config.alpha * inv_rows);
  const NodeId tempered = g.softmax(g.scale(lg.net.logits, 1.0 / config.temperature));
  const double tau2 = config.temperature * config.temperature;
  const NodeId soft_term = g.scale(g.sum(g.multiply(soft, g.log(tempered, kProbabilityFloor))),
                                   -(1.0 - config.alpha) * tau2 * inv_rows);
  lg.loss = g.add(hard_term, soft_term);
  return lg;
}

/// Bindings for the loss graph plus the constant that turns the cross-entropy form of
/// the KL term into the KL divergence itself (teacher entropy).
struct TargetBindings {
  TensorMap tensors;
  double constant = 0.0;
};

TargetBindings make_targets(const SoftLabeledDataset& dataset, std::span<const std::size_t> rows,
                            const DistillationConfig& config, const NeuralClassifier& student) {
  TargetBindings out;
  out.tensors.emplace("x", student.batch_tensor(dataset.packed_features(rows), rows.size()));
  const std::size_t k = student.num_classes();
  const Shape shape{rows.size(), k};
  if (config.loss_mode == LossMode::soft_cross_entropy) {
    out.tensors.emplace("target", Tensor(shape, dataset.packed_labels(rows)));
    return out;
  }
  Tensor hard(shape, 0.0), tempered(shape, 0.0);
  double entropy_sum = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto teacher = dataset[rows[r]].soft_label.values();
    hard[r * k + argmax(teacher)] = 1.0;
    // softmax(log T / tau) without forming logits of zero probabilities.
    std::vector<double> scaled(k);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      scaled[c] = std::log(std::max(teacher[c], kProbabilityFloor)) / config.temperature;
      top = std::max(top, scaled[c]);
    }
    double total = 0.0;
    for (double& v : scaled) total += v = std::exp(v - top);
    for (std::size_t c = 0; c < k; ++c) {
      const double t = scaled[c] / total;
      tempered[r * k + c] = t;
      if (t > 0.0) entropy_sum += t * std::log(std::max(t, kProbabilityFloor));
    }
  }
  const double tau2 = config.temperature * config.temperature;
  out.constant = (1.0 - config.alpha) * tau2 * entropy_sum / static_cast<double>(rows.size());
  out.tensors.emplace("hard_target", std::move(hard));
  out.tensors.emplace("tempered_target", std::move(tempered));
  return out;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

}  // namespace

double empirical_risk(const NeuralClassifier& student, const SoftLabeledDataset& dataset,
                      const DistillationConfig& config) {
  if (dataset.empty()) return 0.0;
  const auto rows = all_rows(dataset.size());
  LossGraph lg = make_loss_graph(student, config, rows.size());
  const TargetBindings targets = make_targets(dataset, rows, config, student);
  lg.net.graph.forward(targets.tensors, student.parameters());
  return lg.net.graph.value(lg.loss)[0] + targets.constant;
}

MatchOutcome train_student(DistillationState& state, const DistillationConfig& config) {
  config.validate();
  if (state.dataset.empty()) throw std::invalid_argument("train_student: empty dataset");
  NeuralClassifier& student = state.student;
  const SoftLabeledDataset& dataset = state.dataset;
  SgdOptimizer optimizer(config.optimizer);
  MatchOutcome outcome;

  const std::size_t n = dataset.size();
  const auto rows = all_rows(n);

  if (n <= config.batch_size) {
    // Full batch: the forward pass that evaluates the stopping predicate also
    // supplies the gradient for the next step.
    LossGraph lg = make_loss_graph(student, config, n);
    const TargetBindings targets = make_targets(dataset, rows, config, student);
    for (std::size_t epoch = 0;; ++epoch) {
      lg.net.graph.forward(targets.tensors, student.parameters());
      state.match_report = evaluate_match(lg.net.graph.value(lg.net.probs).data(), dataset, config.epsilon);
      if (config.record_loss) outcome.loss_history.push_back(lg.net.graph.value(lg.loss)[0] + targets.constant);
      outcome.epochs = epoch;
      outcome.worst_gap = state.match_report.worst_gap;
      if (state.match_report.passed) {
        outcome.status = MatchStatus::matched;
        return outcome;
      }
      if (epoch == config.max_epochs) {
        outcome.status = MatchStatus::epoch_capped;
        return outcome;
      }
      optimizer.step(student.parameters(), lg.net.graph.backward(lg.loss));
    }
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order = rows;
  for (std::size_t epoch = 0;; ++epoch) {
    state.match_report = check_perfect_match(student, dataset, config.epsilon);
    if (config.record_loss) outcome.loss_history.push_back(empirical_risk(student, dataset, config));
    outcome.epochs = epoch;
    outcome.worst_gap = state.match_report.worst_gap;
    if (state.match_report.passed) {
      outcome.status = MatchStatus::matched;
      return outcome;
    }
    if (epoch == config.max_epochs) {
      outcome.status = MatchStatus::epoch_capped;
      return outcome;
    }
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - start);
      const std::span<const std::size_t> batch(order.data() + start, count);
      LossGraph lg = make_loss_graph(student, config, count);
      const TargetBindings targets = make_targets(dataset, batch, config, student);
      lg.net.graph.forward(targets.tensors, student.parameters());
      optimizer.step(student.parameters(), lg.net.graph.backward(lg.loss));
    }
  }
}

}  // namespace mma
