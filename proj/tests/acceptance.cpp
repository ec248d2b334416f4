// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>

#include "mma/experiment.hpp"
#include "mma/metrics.hpp"
#include "support/gradcheck.hpp"

using namespace mma;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

// Shared desk task and teacher.
struct Desk {
  ExperimentConfig cfg;
  DeskTask task;
  NeuralClassifier teacher;
  std::shared_ptr<const NeuralClassifier> shared;
  std::vector<std::vector<double>> pool;

  Desk() : task(build_task(cfg.dataset)), teacher(train_teacher(cfg, task)) {
    shared = std::make_shared<const NeuralClassifier>(teacher);
    pool = task.holdout.points();
  }
};

Desk& desk() {
  static Desk d;
  return d;
}

Outcome gradient_oracle() {
  testing::GradCheckStats all;
  for (std::uint64_t seed = 0; seed < 50; ++seed) all.merge(testing::random_network_gradcheck(1000 + seed));
  return {all.pass_fraction() >= 0.99,
          fmt("%.0f/%.0f coordinates within 1e-4 (%.4f), worst %.2e", double(all.within_tolerance),
              double(all.coordinates), all.pass_fraction(), all.worst_relative_error)};
}

Outcome perfect_student() {
  Desk& dk = desk();
  const auto targets = select_targets(dk.teacher, dk.task.holdout, 20, 77);
  std::size_t matched = 0;
  for (std::size_t s = 0; s < 20; ++s) {
    std::mt19937_64 rng(500 + s);
    std::vector<std::vector<double>> points{dk.task.holdout[targets.indices[s]].features};
    std::uniform_int_distribution<std::size_t> pick(0, dk.pool.size() - 1);
    while (points.size() < 11) points.push_back(dk.pool[pick(rng)]);
    BlackBoxOracle oracle(dk.shared);
    DistillationState state(build_mlp({2, 32, 32}, 2, 900 + s), build_student_dataset(oracle, points));
    DistillationConfig dc;
    dc.seed = s;
    if (train_student(state, dc).matched() && check_perfect_match(state.student, state.dataset, 0.1).passed) {
      ++matched;
    }
  }
  return {matched >= 19, fmt("%.0f/20 seeds matched within %.0f epochs (need 19)", double(matched),
                             double(DistillationConfig{}.max_epochs))};
}

Outcome pgd_feasibility() {
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t iterates = 0, violations = 0;
  double worst = 0.0;
  for (int run = 0; run < 1000; ++run) {
    const NeuralClassifier student = build_mlp({2, 8}, 2, rng());
    // Every fourth target sits on the box boundary.
    std::vector<double> x{unit(rng), unit(rng)};
    if (run % 4 == 0) x[run % 8 == 0 ? 0 : 1] = run % 3 == 0 ? 0.0 : 1.0;
    PgdConfig cfg;
    cfg.norm = run % 2 ? BallNorm::l2 : BallNorm::linf;
    cfg.delta = 0.01 + 0.2 * unit(rng);
    cfg.step = cfg.delta * (0.05 + unit(rng));
    cfg.steps = 1 + rng() % 30;
    cfg.random_start = unit(rng) < 0.5;
    const ClassIndex y = student.classify(x);
    auto check = [&](std::span<const double> p) {
      ++iterates;
      const double dist = ball_distance(p, x, cfg.norm);
      worst = std::max(worst, dist - cfg.delta);
      bool ok = dist <= cfg.delta + 1e-9;
      for (double v : p) ok = ok && v >= 0.0 && v <= 1.0;
      if (!ok) ++violations;
    };
    std::vector<double> start;
    if (cfg.random_start) start = project_ball(random_ball_point(x, cfg.delta, cfg.norm, rng), x, cfg.delta, cfg.norm);
    const Candidate c = pgd_attack(student, x, y, cfg, start, check);
    check(c.point);
  }
  return {violations == 0, fmt("%.0f iterates over 1000 runs, %.0f violations, max excess %.2e", double(iterates),
                               double(violations), worst)};
}

Outcome query_exactness() {
  Desk& dk = desk();
  std::mt19937_64 rng(31337);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto targets = select_targets(dk.teacher, dk.task.holdout, 100, 99);
  std::size_t exact = 0, total_attack = 0;
  std::string first_miss;
  for (std::size_t run = 0; run < 100; ++run) {
    const std::size_t t = targets.indices[run % targets.indices.size()];
    const auto& sample = dk.task.holdout[t];
    std::vector<std::vector<double>> pool;
    for (std::size_t i = 0; i < dk.pool.size(); ++i) {
      if (i != t) pool.push_back(dk.pool[i]);
    }
    MmaConfig mc;
    mc.max_iterations = 1 + rng() % 4;
    mc.candidates_per_iter = 1 + rng() % 6;
    mc.initial_dataset_size = 1 + rng() % 12;
    mc.pgd.delta = 0.01 + 0.07 * unit(rng);
    mc.pgd.step = mc.pgd.delta / (2 + rng() % 8);
    mc.pgd.random_start = unit(rng) < 0.5;
    mc.pgd.restarts = 1 + rng() % 2;
    mc.mode = unit(rng) < 0.5 ? RunMode::first_hit : RunMode::full_run;
    mc.distill.max_epochs = 300;
    mc.seed = rng();
    NeuralClassifier student = build_mlp({2, rng() % 2 ? 4u : 8u}, 2, rng());
    BlackBoxOracle oracle(dk.shared);
    const AttackTrace trace = run_mmattack(oracle, sample.features, sample.label, student, mc, pool);

    // Independent simulation of the attack-phase cache: distinct checked points, x already known.
    std::set<FeatureKey> seen{feature_key(sample.features)};
    std::size_t checks = 0, expected_attack = 0;
    for (const auto& it : trace.iterations) {
      for (const auto& c : it.candidates) {
        if (!c.checked) continue;
        ++checks;
        if (seen.insert(feature_key(c.point)).second) ++expected_attack;
      }
    }
    const QueryLedger& l = trace.ledger;
    const bool ok = l.setup_queries == mc.initial_dataset_size + 1 && l.attack_queries == expected_attack &&
                    l.attack_queries == trace.transfer_checks - trace.transfer_cache_hits &&
                    trace.transfer_checks == checks;
    total_attack += l.attack_queries;
    if (ok) {
      ++exact;
    } else if (first_miss.empty()) {
      first_miss = fmt("; first mismatch run %.0f: setup %.0f attack %.0f expected %.0f", double(run),
                       double(l.setup_queries), double(l.attack_queries), double(expected_attack));
    }
  }
  return {exact == 100, fmt("%.0f/100 configs exact, %.0f attack queries in total", double(exact),
                            double(total_attack)) + first_miss};
}

ComparisonReport& comparison() {
  static ComparisonReport report = [] {
    Desk& dk = desk();
    ExperimentConfig cfg = dk.cfg;
    cfg.attacks = {"mmattack", "nes", "zoo"};
    return run_comparison(cfg, dk.teacher, dk.task);
  }();
  return report;
}

const AttackSummary& summary_of(const ComparisonReport& r, const std::string& name) {
  for (const auto& s : r.summary) {
    if (s.attack == name) return s;
  }
  throw std::logic_error("no summary for " + name);
}

// Fraction of targets whose l-inf ball holds a teacher-adversarial grid point.
double attackable_ceiling(const std::vector<std::size_t>& targets, double delta) {
  Desk& dk = desk();
  std::size_t hits = 0;
  for (std::size_t t : targets) {
    const auto& s = dk.task.holdout[t];
    bool found = false;
    for (int i = 0; i <= 40 && !found; ++i) {
      for (int j = 0; j <= 40 && !found; ++j) {
        std::vector<double> p{s.features[0] + delta * (i / 20.0 - 1.0), s.features[1] + delta * (j / 20.0 - 1.0)};
        p = project_ball(p, s.features, delta, BallNorm::linf);
        found = dk.teacher.classify(p) != s.label;
      }
    }
    hits += found;
  }
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

Outcome mmattack_success() {
  const auto& s = summary_of(comparison(), "mmattack");
  std::vector<std::size_t> targets;
  for (const auto& row : comparison().rows) {
    if (row.attack == "mmattack") targets.push_back(row.target_id);
  }
  return {s.attempted == 50 && s.asr >= 0.80,
          fmt("%.0f/%.0f targets (%.2f, threshold 0.80); glass-box ceiling %.2f", double(s.successes),
              double(s.attempted), s.asr, attackable_ceiling(targets, desk().cfg.mma.pgd.delta))};
}

Outcome table1_ordering() {
  const auto& r = comparison();
  const auto mma = summary_of(r, "mmattack").aqn_attack_only;
  const auto nes = summary_of(r, "nes").aqn_attack_only;
  const auto zoo = summary_of(r, "zoo").aqn_attack_only;
  const bool pass = mma && nes && zoo && *mma < *nes && *mma < *zoo;
  return {pass, "attack-only AQN mmattack " + format_metric(mma, 2) + " < nes " + format_metric(nes, 2) +
                    ", < zoo " + format_metric(zoo, 2) + " (mmattack total " +
                    format_metric(summary_of(r, "mmattack").aqn_total, 2) + ")"};
}

Outcome sweep_trends() {
  Desk& dk = desk();
  const auto rows = run_tradeoff_sweep(dk.cfg, dk.teacher, dk.task, 200);
  std::size_t aqn_inv = 0, gen_inv = 0;
  bool complete = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    complete = complete && rows[i].aqn.has_value();
    if (i == 0) continue;
    if (rows[i].generated > rows[i - 1].generated) ++gen_inv;
    if (rows[i].aqn && rows[i - 1].aqn && *rows[i].aqn < *rows[i - 1].aqn) ++aqn_inv;
  }
  return {complete && aqn_inv <= 2 && gen_inv <= 2,
          fmt("%.0f splits; AQN %.2f -> %.2f with %.0f inversion(s); ", double(rows.size()),
              rows.front().aqn.value_or(NAN), rows.back().aqn.value_or(NAN), double(aqn_inv)) +
              fmt("generated %.2f -> %.2f with %.0f inversion(s); %.0f paired runs", rows.front().generated,
                  rows.back().generated, double(gen_inv), double(rows.front().paired_runs))};
}

Outcome capacity_trend() {
  Desk& dk = desk();
  const std::vector<std::pair<std::string, std::vector<std::size_t>>> students{
      {"medium", {32, 32}}, {"small", {8}}, {"tiny", {4}}};
  std::vector<std::optional<double>> aqn;
  std::string detail;
  for (const auto& [name, hidden] : students) {
    ExperimentConfig cfg = dk.cfg;
    cfg.attacks = {"mmattack"};
    cfg.targets = 30;
    cfg.student.hidden = hidden;
    const auto s = run_comparison(cfg, dk.teacher, dk.task).summary.front();
    aqn.push_back(s.aqn_total);
    detail += name + " AQN " + format_metric(s.aqn_total, 2) + " (attack-only " +
              format_metric(s.aqn_attack_only, 2) + ", ASR " + format_metric(s.asr, 2) + "); ";
  }
  const bool pass = aqn[0] && aqn[1] && aqn[2] && *aqn[1] <= *aqn[0] && *aqn[2] <= *aqn[1];
  return {pass, detail + "non-increasing as capacity shrinks"};
}

Outcome theorem_diagnostic() {
  Desk& dk = desk();
  const auto records = run_diagnostics(dk.cfg, dk.teacher, dk.task);
  const double eps = dk.cfg.mma.distill.epsilon;
  std::size_t eligible = 0, bounded = 0, full_hypothesis = 0;
  for (const auto& r : records) {
    const auto& d = r.diagnostics;
    if (!(d.flags.perfect_match_held && d.flags.margin_condition_held && r.trace.success())) continue;
    ++eligible;
    if (*d.gap_at_hit < eps) ++bounded;
    if (d.flags.step_condition_held) ++full_hypothesis;
  }
  return {eligible > 0 && bounded == eligible,
          fmt("gap_at_hit < eps in %.0f/%.0f eligible runs; proof step condition held in %.0f of them",
              double(bounded), double(eligible), double(full_hypothesis))};
}

Outcome degenerate_budget() {
  Desk& dk = desk();
  const double delta = 0.01;
  // Targets whose small ball is certified free of teacher-adversarial grid points.
  const auto candidates = select_targets(dk.teacher, dk.task.holdout, 50, 5);
  std::vector<std::size_t> targets;
  for (std::size_t t : candidates.indices) {
    if (attackable_ceiling({t}, delta) == 0.0) targets.push_back(t);
    if (targets.size() == 10) break;
  }
  std::vector<MetricsRow> rows;
  bool capped = true;
  for (std::size_t t : targets) {
    const auto& s = dk.task.holdout[t];
    MmaConfig mc = dk.cfg.mma;
    mc.initial_dataset_size = 5;
    mc.candidates_per_iter = 5;
    mc.pgd.delta = delta;
    mc.pgd.step = delta / 10;
    mc.seed = t;
    NeuralClassifier student = make_student(dk.cfg, t);
    BlackBoxOracle oracle(dk.shared);
    const AttackTrace trace = run_mmattack(oracle, s.features, s.label, student, mc, dk.pool);
    capped = capped && trace.iterations.size() == mc.max_iterations;
    rows.push_back({"mmattack", t, mc.seed, trace.success(), trace.ledger.setup_queries,
                    trace.ledger.attack_queries, trace.iterations.size(), 0});
  }
  if (rows.empty()) return {false, "no target with an empty ball at delta 0.01"};
  const auto s = summarize(rows).front();
  const std::string rendered = format_metric(s.aqn_total);
  return {s.successes == 0 && capped && rendered == "-",
          fmt("%.0f targets, %.0f successes, all at the iteration cap: ", double(rows.size()), double(s.successes)) +
              (capped ? "yes" : "no") + "; AQN renders '" + rendered + "'"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"perfect-student predicate", perfect_student},
      {"PGD feasibility", pgd_feasibility},
      {"query-count exactness", query_exactness},
      {"MMAttack success", mmattack_success},
      {"attack-only AQN ordering", table1_ordering},
      {"trade-off trends", sweep_trends},
      {"student capacity trend", capacity_trend},
      {"theorem diagnostic", theorem_diagnostic},
      {"degenerate budget", degenerate_budget},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
