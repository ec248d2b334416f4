#include "mma/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "mma/experiment.hpp"
#include "mma/metrics.hpp"

namespace mma {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string checkpoint;
};

// Leftover "--a.b value" or "--a.b=value" pairs become config overrides.
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.size() == 2) throw ConfigError("unexpected argument '" + arg + "'");
    std::string key = arg.substr(2);
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(key.substr(0, eq), key.substr(eq + 1));
      continue;
    }
    if (i + 1 >= extras.size()) throw ConfigError("override --" + key + " needs a value");
    out.emplace_back(key, extras[++i]);
  }
  return out;
}

ExperimentConfig resolve_config(const CommonOptions& opts, const std::vector<std::string>& extras) {
  auto overrides = parse_overrides(extras);
  if (opts.seed) overrides.emplace_back("seed", std::to_string(*opts.seed));
  if (!opts.out_dir.empty()) overrides.emplace_back("output.dir", json(opts.out_dir).dump());
  if (!opts.checkpoint.empty()) overrides.emplace_back("teacher.checkpoint", json(opts.checkpoint).dump());
  std::optional<fs::path> path;
  if (!opts.config_path.empty()) path = opts.config_path;
  return load_config(path, overrides);
}

NeuralClassifier load_teacher(const ExperimentConfig& cfg) {
  const fs::path path = cfg.teacher.checkpoint;
  if (!fs::exists(path)) {
    throw std::runtime_error("teacher checkpoint " + path.string() + " not found; run train-teacher first");
  }
  NeuralClassifier teacher = NeuralClassifier::load(path);
  if (teacher.input_size() != cfg.dataset.dim || teacher.num_classes() != cfg.dataset.classes) {
    throw std::runtime_error("teacher checkpoint " + path.string() + " does not match dataset.dim / dataset.classes");
  }
  return teacher;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

void print_summary(std::ostream& out, const std::vector<AttackSummary>& summary) {
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %9s %9s %8s %12s %16s\n", "attack", "attempted", "successes", "asr",
                "aqn_total", "aqn_attack_only");
  out << line;
  for (const auto& s : summary) {
    std::snprintf(line, sizeof line, "%-10s %9zu %9zu %8s %12s %16s\n", s.attack.c_str(), s.attempted, s.successes,
                  format_metric(s.asr).c_str(), format_metric(s.aqn_total, 2).c_str(),
                  format_metric(s.aqn_attack_only, 2).c_str());
    out << line;
  }
}

int cmd_train_teacher(const ExperimentConfig& cfg, std::ostream& out) {
  const DeskTask task = build_task(cfg.dataset);
  const NeuralClassifier teacher = train_teacher(cfg, task);
  const fs::path path = cfg.teacher.checkpoint;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  teacher.save(path);
  out << "teacher saved to " << path.string() << "\n"
      << "train accuracy " << format_metric(accuracy(teacher, task.train)) << ", hold-out accuracy "
      << format_metric(accuracy(teacher, task.holdout)) << "\n";
  return 0;
}

int cmd_attack(const ExperimentConfig& cfg, std::optional<std::size_t> target, std::ostream& out) {
  const NeuralClassifier teacher = load_teacher(cfg);
  const DeskTask task = build_task(cfg.dataset);
  std::size_t target_id = 0;
  if (target) {
    if (*target >= task.holdout.size()) {
      throw std::runtime_error("target " + std::to_string(*target) + " is outside the hold-out set (size " +
                               std::to_string(task.holdout.size()) + ")");
    }
    target_id = *target;
  } else {
    const auto sel = select_targets(teacher, task.holdout, 1, mix_seed(cfg.seed, 0x7a));
    if (sel.indices.empty()) throw std::runtime_error("the teacher misclassifies every hold-out point");
    target_id = sel.indices.front();
  }
  std::vector<std::vector<double>> pool;
  for (const auto& s : task.holdout.samples()) pool.push_back(s.features);
  const auto shared = std::make_shared<const NeuralClassifier>(teacher);
  BlackBoxOracle oracle(shared, OracleMode::attack,
                        cfg.query_budget == 0 ? std::nullopt : std::optional<std::uint64_t>(cfg.query_budget));
  NeuralClassifier student = make_student(cfg, target_id);
  MmaConfig mc = cfg.mma;
  mc.seed = mix_seed(cfg.seed, target_id * 16);
  const auto& sample = task.holdout[target_id];
  const AttackTrace trace = run_mmattack(oracle, sample.features, sample.label, student, mc, pool);
  json doc = to_json(trace);
  doc["target_id"] = target_id;
  write_file(fs::path(cfg.output.dir) / "attack_trace.json", doc.dump(2) + "\n");
  out << "target " << target_id << ": " << (trace.success() ? "success" : "failure") << " after "
      << trace.iterations.size() << " iteration(s), " << trace.ledger.setup_queries << " setup + "
      << trace.ledger.attack_queries << " attack queries"
      << (trace.truncated ? " (budget exhausted)" : "") << "\n";
  return trace.success() ? 0 : 3;
}

int cmd_compare(const ExperimentConfig& cfg, std::ostream& out) {
  const NeuralClassifier teacher = load_teacher(cfg);
  const DeskTask task = build_task(cfg.dataset);
  const ComparisonReport report = run_comparison(cfg, teacher, task);
  const fs::path dir = cfg.output.dir;
  write_file(dir / "metrics.csv", metrics_csv(report.rows));
  write_file(dir / "summary.csv", summary_csv(report.summary));
  write_file(dir / "report.json", report_to_json(cfg, report).dump(2) + "\n");
  write_file(dir / "traces.json", report.traces.dump() + "\n");
  out << "teacher hold-out accuracy " << format_metric(report.teacher_holdout_accuracy) << ", "
      << report.excluded_targets << " misclassified hold-out point(s) excluded\n";
  print_summary(out, report.summary);
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, std::ostream& out) {
  const NeuralClassifier teacher = load_teacher(cfg);
  const DeskTask task = build_task(cfg.dataset);
  const auto rows = run_tradeoff_sweep(cfg, teacher, task, cfg.sweep.total_budget);
  const fs::path dir = cfg.output.dir;
  write_file(dir / "sweep.csv", sweep_csv(rows));
  write_file(dir / "sweep.dat", sweep_dat(rows));
  if (cfg.output.gnuplot) {
    write_file(dir / "sweep.gp",
               "set xlabel 'QN1'\nset ylabel 'AQN'\nset y2label 'generated'\nset y2tics\n"
               "plot 'sweep.dat' using 2:6 with linespoints title 'AQN', "
               "'sweep.dat' using 2:4 axes x1y2 with linespoints title 'generated'\n");
  }
  out << sweep_csv(rows);
  return 0;
}

int cmd_diagnose(const ExperimentConfig& cfg, std::ostream& out) {
  const NeuralClassifier teacher = load_teacher(cfg);
  const DeskTask task = build_task(cfg.dataset);
  const auto records = run_diagnostics(cfg, teacher, task);
  const double eps = cfg.mma.distill.epsilon;
  write_file(fs::path(cfg.output.dir) / "diagnostics.csv", diagnostics_csv(records, eps));
  std::size_t hits = 0, below = 0;
  for (const auto& r : records) {
    if (!r.diagnostics.gap_at_hit) continue;
    ++hits;
    if (*r.diagnostics.gap_at_hit < eps) ++below;
  }
  out << records.size() << " target(s), " << hits << " with a transfer, " << below
      << " with gap_at_hit below epsilon = " << eps << "\n";
  return 0;
}

int cmd_report(const std::string& input, const ExperimentConfig& cfg, bool out_given, std::ostream& out) {
  std::ifstream in(input);
  if (!in) throw std::runtime_error("cannot open report " + input);
  const json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw std::runtime_error(input + " is not valid JSON");
  const auto rows = rows_from_report(doc);
  const auto summary = summarize(rows);
  fs::path dir = out_given ? fs::path(cfg.output.dir) : fs::path(input).parent_path();
  write_file(dir / "metrics.csv", metrics_csv(rows));
  write_file(dir / "summary.csv", summary_csv(summary));
  print_summary(out, summary);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Model mimic attack experiments"};
  app.require_subcommand(1);
  CommonOptions opts;
  std::optional<std::size_t> target;
  std::optional<std::uint64_t> total_budget;
  std::string input;

  auto add_common = [&](CLI::App* sub) {
    sub->allow_extras();
    sub->add_option("--config", opts.config_path, "JSON config file");
    sub->add_option("--seed", opts.seed, "Experiment seed");
    sub->add_option("--out", opts.out_dir, "Output directory");
    sub->add_option("--checkpoint", opts.checkpoint, "Teacher checkpoint path");
  };
  auto* train = app.add_subcommand("train-teacher", "Train the teacher and save a checkpoint");
  auto* attack = app.add_subcommand("attack", "Run MMAttack on one hold-out point");
  auto* compare = app.add_subcommand("compare", "Run every configured attack on every target");
  auto* sweep = app.add_subcommand("sweep", "Trade QN1 against QN2 under a fixed total budget");
  auto* diagnose = app.add_subcommand("diagnose", "Check the transfer theorem quantities per target");
  auto* report = app.add_subcommand("report", "Recompute CSV summaries from a saved report.json");
  for (auto* sub : {train, attack, compare, sweep, diagnose, report}) add_common(sub);
  attack->add_option("--target", target, "Hold-out index to attack");
  sweep->add_option("--total-budget", total_budget, "Total query budget per run");
  report->add_option("--input", input, "report.json from compare")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    ExperimentConfig cfg = resolve_config(opts, sub->remaining());
    if (total_budget) cfg.sweep.total_budget = *total_budget;
    if (sub == train) return cmd_train_teacher(cfg, out);
    if (sub == attack) return cmd_attack(cfg, target, out);
    if (sub == compare) return cmd_compare(cfg, out);
    if (sub == sweep) return cmd_sweep(cfg, out);
    if (sub == diagnose) return cmd_diagnose(cfg, out);
    return cmd_report(input, cfg, !opts.out_dir.empty(), out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mma
