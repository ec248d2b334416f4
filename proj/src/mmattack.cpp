#include "mma/mmattack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace mma {

void MmaConfig::validate() const {
  if (max_iterations == 0) throw std::invalid_argument("mma.max_iterations must be at least 1");
  if (candidates_per_iter == 0) throw std::invalid_argument("mma.candidates_per_iter must be at least 1");
  distill.validate();
  pgd.validate();
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base ^ (salt + 0x9e3779b97f4a7c15ULL + (base << 6) + (base >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

bool transfer_check(BlackBoxOracle& oracle, const CandidateRecord& candidate, ClassIndex y) {
  if (candidate.student_class == y) throw std::invalid_argument("transfer_check: candidate does not fool the student");
  return oracle.hard_label(candidate.point, QueryPhase::attack) == candidate.student_class;
}

namespace {

std::vector<double> to_vector(const ProbVector& p) { return {p.values().begin(), p.values().end()}; }

std::vector<std::vector<double>> sample_pool(std::span<const std::vector<double>> pool, std::size_t count,
                                             std::uint64_t seed) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(count, order.size()));
  std::vector<std::vector<double>> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(pool[i]);
  return out;
}

FoundExample make_found(const CandidateRecord& c, std::size_t iteration) {
  return FoundExample{c.point, iteration, *c.teacher_class, c.student_probs, c.teacher_probs};
}

}  // namespace

AttackTrace run_mmattack(BlackBoxOracle& oracle, std::span<const double> x, ClassIndex y, NeuralClassifier& student,
                         const MmaConfig& config, std::span<const std::vector<double>> holdout_pool) {
  config.validate();
  if (x.size() != oracle.input_dim()) throw std::invalid_argument("run_mmattack: target has the wrong dimension");
  AttackTrace trace;
  trace.target.assign(x.begin(), x.end());
  trace.label = y;
  if (oracle.hard_label(x, QueryPhase::setup) != y) {
    throw std::invalid_argument("run_mmattack: the oracle does not assign the target its label");
  }
  const NeuralClassifier initial_student = student;
  const bool glass_labels = config.add_non_adversarial && oracle.mode() == OracleMode::diagnostic;

  try {
    auto points = sample_pool(holdout_pool, config.initial_dataset_size, mix_seed(config.seed, 0));
    points.emplace_back(x.begin(), x.end());
    DistillationState state(student, build_student_dataset(oracle, points));

    for (std::size_t i = 1; i <= config.max_iterations; ++i) {
      IterationRecord record;
      record.iteration = i;
      state.iteration = i;
      if (config.cold_start && i > 1) state.student = initial_student;
      record.dataset_size = state.dataset.size();
      DistillationConfig distill = config.distill;
      distill.seed = mix_seed(config.seed, 2 * i);
      record.match = train_student(state, distill);

      const auto batch = generate_candidate_batch(state.student, x, y, config.pgd, config.candidates_per_iter,
                                                  mix_seed(config.seed, 2 * i + 1));
      bool exhausted = false;
      for (const Candidate& c : batch) {
        CandidateRecord rec;
        rec.point = c.point;
        rec.student_class = c.student_class;
        rec.student_probs = to_vector(state.student.predict_proba(c.point));
        if (c.student_class != y && !exhausted) {
          const std::uint64_t before = oracle.query_count();
          try {
            const ProbVector answer = oracle.query(c.point, QueryPhase::attack);
            ++trace.transfer_checks;
            if (oracle.query_count() == before) ++trace.transfer_cache_hits;
            rec.checked = true;
            rec.teacher_class = answer.argmax();
            rec.teacher_probs = to_vector(answer);
            rec.transferred = *rec.teacher_class == c.student_class;
            rec.weak = *rec.teacher_class != y && !rec.transferred;
            if (state.dataset.upsert(c.point, answer)) ++record.points_added;
            if (rec.transferred) {
              trace.found.push_back(make_found(rec, i));
              if (!trace.ledger_at_first_hit) trace.ledger_at_first_hit = oracle.ledger();
            } else if (rec.weak) {
              trace.weak_found.push_back(make_found(rec, i));
            }
          } catch (const BudgetExhausted&) {
            exhausted = true;
          }
        } else if (c.student_class == y && glass_labels) {
          if (state.dataset.upsert(c.point, oracle.glass_box_handle().predict_proba(c.point))) ++record.points_added;
        }
        record.candidates.push_back(std::move(rec));
      }
      record.ledger = oracle.ledger();
      trace.iterations.push_back(std::move(record));
      if (exhausted) {
        trace.truncated = true;
        break;
      }
      if (config.mode == RunMode::first_hit && trace.success()) break;
    }
    student = std::move(state.student);
  } catch (const BudgetExhausted&) {
    trace.truncated = true;
  }
  trace.ledger = oracle.ledger();
  return trace;
}

std::vector<double> probability_jacobian(const NeuralClassifier& model, std::span<const double> x) {
  const std::size_t k = model.num_classes();
  const std::size_t d = model.input_size();
  ComputeGraph g;
  const NodeId in = g.leaf("x");
  const NodeId select = g.leaf("select");
  const NodeId probs = g.softmax(model.build_logits(g, in));
  const NodeId picked = g.sum(g.multiply(probs, select));
  std::vector<double> jac(k * d);
  for (std::size_t c = 0; c < k; ++c) {
    Tensor onehot({1, k}, 0.0);
    onehot[c] = 1.0;
    g.forward({{"x", model.batch_tensor(x, 1)}, {"select", std::move(onehot)}}, model.parameters());
    const auto grads = g.backward(picked);
    const auto& gx = grads.at("x").values();
    std::copy(gx.begin(), gx.end(), jac.begin() + static_cast<std::ptrdiff_t>(c * d));
  }
  return jac;
}

double estimate_beta(const NeuralClassifier& student, const NeuralClassifier& teacher, std::span<const double> x,
                     const PgdConfig& ball, std::size_t samples, std::uint64_t seed) {
  if (student.num_classes() != teacher.num_classes() || student.input_size() != teacher.input_size()) {
    throw std::invalid_argument("estimate_beta: student and teacher disagree on shape");
  }
  std::mt19937_64 rng(seed);
  double beta = 0.0;
  std::vector<double> point(x.begin(), x.end());
  for (std::size_t s = 0; s < samples; ++s) {
    if (s > 0) point = random_ball_point(x, ball.delta, ball.norm, rng);
    const auto js = probability_jacobian(student, point);
    const auto jt = probability_jacobian(teacher, point);
    double frob = 0.0;
    for (std::size_t i = 0; i < js.size(); ++i) frob += (js[i] - jt[i]) * (js[i] - jt[i]);
    beta = std::max(beta, std::sqrt(frob));
  }
  return beta;
}

TheoremDiagnostics compute_diagnostics(const BlackBoxOracle& oracle, const NeuralClassifier& student,
                                       const AttackTrace& trace, const MmaConfig& config, std::size_t beta_samples) {
  const NeuralClassifier& teacher = oracle.glass_box_handle();
  TheoremDiagnostics diag;
  diag.epsilon_used = config.distill.epsilon;
  diag.beta_samples = beta_samples;
  diag.beta_estimate = estimate_beta(student, teacher, trace.target, config.pgd, beta_samples,
                                     mix_seed(config.seed, 0xbe7a));
  if (!trace.iterations.empty()) {
    for (const auto& c : trace.iterations.back().candidates) {
      diag.gap_at_candidates.push_back(inf_norm_gap(student.predict_proba(c.point).values(),
                                                    teacher.predict_proba(c.point).values()));
    }
  }
  const std::size_t last = trace.success() ? trace.found.front().iteration : trace.iterations.size();
  diag.flags.perfect_match_held = !trace.iterations.empty();
  for (const auto& it : trace.iterations) {
    if (it.iteration <= last && !it.match.matched()) diag.flags.perfect_match_held = false;
  }
  if (trace.success()) {
    const FoundExample& hit = trace.found.front();
    std::vector<double> sorted = hit.student_probs;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    diag.margin_at_hit = (sorted[0] - sorted[1]) / 2.0;
    diag.gap_at_hit = inf_norm_gap(hit.student_probs, hit.teacher_probs);
    diag.flags.margin_condition_held = diag.epsilon_used < *diag.margin_at_hit;
    for (const auto& it : trace.iterations) {
      if (it.iteration >= hit.iteration) break;
      for (const auto& c : it.candidates) {
        if (!c.checked) continue;
        const double d = ball_distance(c.point, hit.point, BallNorm::l2);
        if (!diag.step_to_prior || d < *diag.step_to_prior) diag.step_to_prior = d;
      }
    }
    diag.flags.step_condition_held =
        diag.step_to_prior && diag.beta_estimate * *diag.step_to_prior < diag.epsilon_used / 4.0;
  }
  return diag;
}

namespace {

nlohmann::json found_json(const FoundExample& f) {
  return {{"point", f.point},
          {"iteration", f.iteration},
          {"teacher_class", f.teacher_class + 1},
          {"student_probs", f.student_probs},
          {"teacher_probs", f.teacher_probs}};
}

nlohmann::json ledger_json(const QueryLedger& l) {
  return {{"setup", l.setup_queries}, {"attack", l.attack_queries}, {"total", l.total()}};
}

}  // namespace

nlohmann::json to_json(const AttackTrace& trace) {
  nlohmann::json iterations = nlohmann::json::array();
  for (const auto& it : trace.iterations) {
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : it.candidates) {
      nlohmann::json jc{{"point", c.point},
                        {"student_class", c.student_class + 1},
                        {"checked", c.checked},
                        {"transferred", c.transferred},
                        {"weak", c.weak}};
      if (c.teacher_class) jc["teacher_class"] = *c.teacher_class + 1;
      cands.push_back(std::move(jc));
    }
    iterations.push_back({{"iteration", it.iteration},
                          {"dataset_size", it.dataset_size},
                          {"match",
                           {{"status", it.match.matched() ? "matched" : "epoch_capped"},
                            {"epochs", it.match.epochs},
                            {"worst_gap", it.match.worst_gap}}},
                          {"points_added", it.points_added},
                          {"ledger", ledger_json(it.ledger)},
                          {"candidates", std::move(cands)}});
  }
  nlohmann::json found = nlohmann::json::array();
  for (const auto& f : trace.found) found.push_back(found_json(f));
  nlohmann::json weak = nlohmann::json::array();
  for (const auto& f : trace.weak_found) weak.push_back(found_json(f));
  nlohmann::json doc{{"target", trace.target},
                     {"label", trace.label + 1},
                     {"success", trace.success()},
                     {"truncated", trace.truncated},
                     {"ledger", ledger_json(trace.ledger)},
                     {"transfer_checks", trace.transfer_checks},
                     {"transfer_cache_hits", trace.transfer_cache_hits},
                     {"iterations", std::move(iterations)},
                     {"found", std::move(found)},
                     {"weak_found", std::move(weak)}};
  doc["ledger_at_first_hit"] = trace.ledger_at_first_hit ? ledger_json(*trace.ledger_at_first_hit) : nlohmann::json();
  return doc;
}

nlohmann::json to_json(const TheoremDiagnostics& d) {
  nlohmann::json doc{{"beta_estimate", d.beta_estimate},
                     {"beta_samples", d.beta_samples},
                     {"gap_at_candidates", d.gap_at_candidates},
                     {"epsilon_used", d.epsilon_used},
                     {"perfect_match_held", d.flags.perfect_match_held},
                     {"margin_condition_held", d.flags.margin_condition_held},
                     {"step_condition_held", d.flags.step_condition_held}};
  doc["margin_at_hit"] = d.margin_at_hit ? nlohmann::json(*d.margin_at_hit) : nlohmann::json();
  doc["gap_at_hit"] = d.gap_at_hit ? nlohmann::json(*d.gap_at_hit) : nlohmann::json();
  doc["step_to_prior"] = d.step_to_prior ? nlohmann::json(*d.step_to_prior) : nlohmann::json();
  return doc;
}

}  // namespace mma
