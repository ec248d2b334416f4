#include "mma/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "mma/metrics.hpp"

namespace mma {

using nlohmann::json;

namespace {

const char* mode_name(RunMode m) { return m == RunMode::first_hit ? "first_hit" : "full_run"; }
const char* norm_name(BallNorm n) { return n == BallNorm::linf ? "linf" : "l2"; }
const char* loss_name(LossMode l) { return l == LossMode::soft_cross_entropy ? "soft_cross_entropy" : "weighted_kd"; }

RunMode parse_mode(const std::string& s) {
  if (s == "first_hit") return RunMode::first_hit;
  if (s == "full_run") return RunMode::full_run;
  throw ConfigError("mma.mode must be first_hit or full_run, got '" + s + "'");
}

BallNorm parse_norm(const std::string& s) {
  if (s == "linf") return BallNorm::linf;
  if (s == "l2") return BallNorm::l2;
  throw ConfigError("pgd.norm must be linf or l2, got '" + s + "'");
}

LossMode parse_loss(const std::string& s) {
  if (s == "soft_cross_entropy") return LossMode::soft_cross_entropy;
  if (s == "weighted_kd") return LossMode::weighted_kd;
  throw ConfigError("distill.loss_mode must be soft_cross_entropy or weighted_kd, got '" + s + "'");
}

bool same_kind(const json& base, const json& value) {
  if (base.is_number_unsigned()) {
    return value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
  }
  if (base.is_number()) return value.is_number();
  if (base.is_array()) return value.is_array();
  return base.type() == value.type();
}

void merge_checked(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_checked(slot, value, path);
    } else if (!same_kind(slot, value)) {
      throw ConfigError("config key '" + path + "' expects " + std::string(slot.type_name()) + ", got " +
                        value.dump());
    } else {
      slot = value;
    }
  }
}

std::vector<std::size_t> architecture_widths(std::size_t dim, const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> widths{dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  return widths;
}

std::int64_t elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
}

std::vector<std::vector<double>> holdout_points(const DeskTask& task) {
  std::vector<std::vector<double>> pool;
  pool.reserve(task.holdout.size());
  for (const auto& s : task.holdout.samples()) pool.push_back(s.features);
  return pool;
}

std::string number(double v) { return format_metric(v, 4); }

}  // namespace

void ExperimentConfig::validate() const {
  if (targets == 0) throw ConfigError("targets must be at least 1");
  if (dataset.classes < 2) throw ConfigError("dataset.classes must be at least 2");
  if (dataset.dim == 0) throw ConfigError("dataset.dim must be positive");
  if (!(dataset.holdout_fraction > 0.0 && dataset.holdout_fraction < 1.0)) {
    throw ConfigError("dataset.holdout_fraction must lie in (0, 1)");
  }
  if (dataset.kind != "blobs" && dataset.kind != "rings" && dataset.kind != "csv") {
    throw ConfigError("dataset.kind must be blobs, rings or csv, got '" + dataset.kind + "'");
  }
  for (const auto& a : attacks) {
    if (a != "mmattack" && a != "nes" && a != "zoo" && a != "square") {
      throw ConfigError("unknown attack '" + a + "' (expected mmattack, nes, zoo or square)");
    }
  }
  if (sweep.runs == 0) throw ConfigError("sweep.runs must be at least 1");
  try {
    mma.validate();
    nes.validate();
    zoo.validate();
    square.validate();
    teacher.training.optimizer.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

json config_to_json(const ExperimentConfig& c) {
  const auto& t = c.teacher.training;
  const auto& d = c.mma.distill;
  return json{
      {"seed", c.seed},
      {"dataset",
       {{"kind", c.dataset.kind},
        {"classes", c.dataset.classes},
        {"dim", c.dataset.dim},
        {"n_per_class", c.dataset.n_per_class},
        {"spread", c.dataset.spread},
        {"seed", c.dataset.seed},
        {"holdout_fraction", c.dataset.holdout_fraction},
        {"csv", c.dataset.csv}}},
      {"teacher",
       {{"hidden", c.teacher.hidden},
        {"seed", c.teacher.seed},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.optimizer.learning_rate},
        {"momentum", t.optimizer.momentum},
        {"weight_decay", t.optimizer.weight_decay},
        {"training_seed", t.seed},
        {"checkpoint", c.teacher.checkpoint}}},
      {"student", {{"hidden", c.student.hidden}, {"seed", c.student.seed}}},
      {"attacks", c.attacks},
      {"targets", c.targets},
      {"query_budget", c.query_budget},
      {"mma",
       {{"max_iterations", c.mma.max_iterations},
        {"candidates_per_iter", c.mma.candidates_per_iter},
        {"initial_dataset_size", c.mma.initial_dataset_size},
        {"mode", mode_name(c.mma.mode)},
        {"cold_start", c.mma.cold_start},
        {"add_non_adversarial", c.mma.add_non_adversarial}}},
      {"distill",
       {{"epsilon", d.epsilon},
        {"max_epochs", d.max_epochs},
        {"batch_size", d.batch_size},
        {"learning_rate", d.optimizer.learning_rate},
        {"momentum", d.optimizer.momentum},
        {"weight_decay", d.optimizer.weight_decay},
        {"loss_mode", loss_name(d.loss_mode)},
        {"alpha", d.alpha},
        {"temperature", d.temperature}}},
      {"pgd",
       {{"delta", c.mma.pgd.delta},
        {"step", c.mma.pgd.step},
        {"steps", c.mma.pgd.steps},
        {"norm", norm_name(c.mma.pgd.norm)},
        {"random_start", c.mma.pgd.random_start},
        {"restarts", c.mma.pgd.restarts}}},
      {"nes",
       {{"epsilon", c.nes.epsilon},
        {"num_samples", c.nes.num_samples},
        {"num_iterations", c.nes.num_iterations},
        {"sigma", c.nes.sigma},
        {"alpha", c.nes.alpha}}},
      {"zoo",
       {{"epsilon", c.zoo.epsilon},
        {"num_iterations", c.zoo.num_iterations},
        {"learning_rate", c.zoo.learning_rate},
        {"fd_step", c.zoo.fd_step}}},
      {"square", {{"epsilon", c.square.epsilon}, {"num_queries", c.square.num_queries}, {"p_init", c.square.p_init}}},
      {"sweep", {{"total_budget", c.sweep.total_budget}, {"runs", c.sweep.runs}}},
      {"output",
       {{"dir", c.output.dir}, {"record_wall_time", c.output.record_wall_time}, {"gnuplot", c.output.gnuplot}}},
  };
}

ExperimentConfig config_from_json(const json& doc) {
  json m = config_to_json(ExperimentConfig{});
  merge_checked(m, doc, "");
  ExperimentConfig c;
  c.seed = m["seed"].get<std::uint64_t>();
  const json& ds = m["dataset"];
  c.dataset = {ds["kind"].get<std::string>(),          ds["classes"].get<std::size_t>(),
               ds["dim"].get<std::size_t>(),           ds["n_per_class"].get<std::size_t>(),
               ds["spread"].get<double>(),             ds["seed"].get<std::uint64_t>(),
               ds["holdout_fraction"].get<double>(),   ds["csv"].get<std::string>()};
  const json& t = m["teacher"];
  c.teacher.hidden = t["hidden"].get<std::vector<std::size_t>>();
  c.teacher.seed = t["seed"].get<std::uint64_t>();
  c.teacher.training.epochs = t["epochs"].get<std::size_t>();
  c.teacher.training.batch_size = t["batch_size"].get<std::size_t>();
  c.teacher.training.optimizer = {t["learning_rate"].get<double>(), t["momentum"].get<double>(),
                                  t["weight_decay"].get<double>()};
  c.teacher.training.seed = t["training_seed"].get<std::uint64_t>();
  c.teacher.checkpoint = t["checkpoint"].get<std::string>();
  c.student.hidden = m["student"]["hidden"].get<std::vector<std::size_t>>();
  c.student.seed = m["student"]["seed"].get<std::uint64_t>();
  c.attacks = m["attacks"].get<std::vector<std::string>>();
  c.targets = m["targets"].get<std::size_t>();
  c.query_budget = m["query_budget"].get<std::uint64_t>();
  const json& a = m["mma"];
  c.mma.max_iterations = a["max_iterations"].get<std::size_t>();
  c.mma.candidates_per_iter = a["candidates_per_iter"].get<std::size_t>();
  c.mma.initial_dataset_size = a["initial_dataset_size"].get<std::size_t>();
  c.mma.mode = parse_mode(a["mode"].get<std::string>());
  c.mma.cold_start = a["cold_start"].get<bool>();
  c.mma.add_non_adversarial = a["add_non_adversarial"].get<bool>();
  const json& d = m["distill"];
  c.mma.distill.epsilon = d["epsilon"].get<double>();
  c.mma.distill.max_epochs = d["max_epochs"].get<std::size_t>();
  c.mma.distill.batch_size = d["batch_size"].get<std::size_t>();
  c.mma.distill.optimizer = {d["learning_rate"].get<double>(), d["momentum"].get<double>(),
                             d["weight_decay"].get<double>()};
  c.mma.distill.loss_mode = parse_loss(d["loss_mode"].get<std::string>());
  c.mma.distill.alpha = d["alpha"].get<double>();
  c.mma.distill.temperature = d["temperature"].get<double>();
  const json& p = m["pgd"];
  c.mma.pgd = {p["delta"].get<double>(),        p["step"].get<double>(),
               p["steps"].get<std::size_t>(),   parse_norm(p["norm"].get<std::string>()),
               p["random_start"].get<bool>(),   p["restarts"].get<std::size_t>()};
  const json& n = m["nes"];
  c.nes = {n["epsilon"].get<double>(), n["num_samples"].get<std::size_t>(), n["num_iterations"].get<std::size_t>(),
           n["sigma"].get<double>(), n["alpha"].get<double>()};
  const json& z = m["zoo"];
  c.zoo = {z["epsilon"].get<double>(), z["num_iterations"].get<std::size_t>(), z["learning_rate"].get<double>(),
           z["fd_step"].get<double>()};
  const json& s = m["square"];
  c.square = {s["epsilon"].get<double>(), s["num_queries"].get<std::size_t>(), s["p_init"].get<double>()};
  c.sweep = {m["sweep"]["total_budget"].get<std::uint64_t>(), m["sweep"]["runs"].get<std::size_t>()};
  const json& o = m["output"];
  c.output = {o["dir"].get<std::string>(), o["record_wall_time"].get<bool>(), o["gnuplot"].get<bool>()};
  c.validate();
  return c;
}

void apply_override(json& doc, const std::string& dotted_key, const std::string& value) {
  if (dotted_key.empty()) throw ConfigError("empty override key");
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed override key '" + dotted_key + "'");
    if (!node->is_object()) throw ConfigError("override '" + dotted_key + "' descends into a non-object");
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides) {
  json doc = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file " + path->string());
    doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config file " + path->string() + " is not valid JSON");
  }
  for (const auto& [key, value] : overrides) apply_override(doc, key, value);
  return config_from_json(doc);
}

DeskTask build_task(const DatasetSpec& spec) {
  LabeledDataset all = [&] {
    if (spec.kind == "blobs") return gen_gaussian_blobs(spec.classes, spec.dim, spec.n_per_class, spec.spread, spec.seed);
    if (spec.kind == "rings") {
      if (spec.dim != 2) throw ConfigError("ring datasets are two-dimensional");
      return gen_ring_classes(spec.classes, spec.n_per_class, spec.seed);
    }
    LabeledDataset loaded = load_csv(spec.csv, spec.classes);
    if (loaded.dim() != spec.dim) {
      throw ConfigError(spec.csv + " has " + std::to_string(loaded.dim()) + " features, dataset.dim is " +
                        std::to_string(spec.dim));
    }
    return loaded;
  }();
  auto [train, holdout] = split(all, {1.0 - spec.holdout_fraction, spec.holdout_fraction}, spec.seed);
  return DeskTask{std::move(train), std::move(holdout)};
}

ArchitectureSpec teacher_architecture(const ExperimentConfig& config) {
  return mlp_architecture(architecture_widths(config.dataset.dim, config.teacher.hidden), config.dataset.classes);
}

NeuralClassifier make_student(const ExperimentConfig& config, std::uint64_t salt) {
  return NeuralClassifier(
      mlp_architecture(architecture_widths(config.dataset.dim, config.student.hidden), config.dataset.classes),
      mix_seed(config.student.seed, salt));
}

NeuralClassifier train_teacher(const ExperimentConfig& config, const DeskTask& task) {
  NeuralClassifier teacher(teacher_architecture(config), config.teacher.seed);
  train_supervised(teacher, task.train, config.teacher.training);
  return teacher;
}

TargetSelection select_targets(const NeuralClassifier& teacher, const LabeledDataset& holdout, std::size_t count,
                               std::uint64_t seed) {
  std::vector<std::size_t> order(holdout.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  TargetSelection sel;
  for (std::size_t i : order) {
    if (teacher.classify(holdout[i].features) != holdout[i].label) {
      ++sel.excluded;
    } else if (sel.indices.size() < count) {
      sel.indices.push_back(i);
    }
  }
  return sel;
}

std::vector<AttackSummary> summarize(const std::vector<MetricsRow>& rows) {
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.attack) == order.end()) order.push_back(r.attack);
  }
  std::vector<AttackSummary> out;
  for (const auto& name : order) {
    std::vector<bool> success;
    std::vector<double> total, attack_only;
    for (const auto& r : rows) {
      if (r.attack != name) continue;
      success.push_back(r.success);
      total.push_back(static_cast<double>(r.queries_setup + r.queries_attack));
      attack_only.push_back(static_cast<double>(r.queries_attack));
    }
    AttackSummary s;
    s.attack = name;
    s.attempted = success.size();
    s.successes = static_cast<std::size_t>(std::count(success.begin(), success.end(), true));
    s.asr = compute_asr(success);
    s.aqn_total = compute_aqn(total, success);
    s.aqn_attack_only = compute_aqn(attack_only, success);
    out.push_back(std::move(s));
  }
  return out;
}

ComparisonReport run_comparison(const ExperimentConfig& config, const NeuralClassifier& teacher,
                                const DeskTask& task) {
  ComparisonReport report;
  report.teacher_holdout_accuracy = accuracy(teacher, task.holdout);
  const TargetSelection sel = select_targets(teacher, task.holdout, config.targets, mix_seed(config.seed, 0x7a));
  report.excluded_targets = sel.excluded;
  const auto pool = holdout_points(task);
  const auto shared_teacher = std::make_shared<const NeuralClassifier>(teacher);
  const std::optional<std::uint64_t> budget =
      config.query_budget == 0 ? std::nullopt : std::optional<std::uint64_t>(config.query_budget);

  for (std::size_t target_id : sel.indices) {
    const auto& sample = task.holdout[target_id];
    for (std::size_t ai = 0; ai < config.attacks.size(); ++ai) {
      const std::string& name = config.attacks[ai];
      MetricsRow row;
      row.attack = name;
      row.target_id = target_id;
      row.seed = mix_seed(config.seed, target_id * 16 + ai);
      BlackBoxOracle oracle(shared_teacher, OracleMode::attack, budget);
      const auto start = std::chrono::steady_clock::now();
      try {
        if (name == "mmattack") {
          NeuralClassifier student = make_student(config, target_id);
          MmaConfig mc = config.mma;
          mc.seed = row.seed;
          const AttackTrace trace = run_mmattack(oracle, sample.features, sample.label, student, mc, pool);
          row.success = trace.success();
          row.queries_setup = trace.ledger.setup_queries;
          row.queries_attack = trace.success() ? trace.ledger_at_first_hit->attack_queries : trace.ledger.attack_queries;
          row.iterations = trace.iterations.size();
          json doc = to_json(trace);
          doc["target_id"] = target_id;
          report.traces.push_back(std::move(doc));
        } else {
          oracle.hard_label(sample.features, QueryPhase::setup);
          AttackResult r;
          if (name == "nes") r = nes_attack(oracle, sample.features, sample.label, config.nes, row.seed);
          if (name == "zoo") r = zoo_attack(oracle, sample.features, sample.label, config.zoo);
          if (name == "square") r = square_attack(oracle, sample.features, sample.label, config.square, row.seed);
          row.success = r.success;
          row.queries_setup = oracle.ledger().setup_queries;
          row.queries_attack = r.queries_spent;
          row.iterations = r.iterations;
        }
      } catch (const BudgetExhausted& e) {
        row.success = false;
        row.queries_setup = e.ledger().setup_queries;
        row.queries_attack = e.ledger().attack_queries;
      }
      if (config.output.record_wall_time) row.wall_ms = elapsed_ms(start);
      report.rows.push_back(std::move(row));
    }
  }
  report.summary = summarize(report.rows);
  return report;
}

std::vector<SweepRow> run_tradeoff_sweep(const ExperimentConfig& config, const NeuralClassifier& teacher,
                                         const DeskTask& task, std::uint64_t total_budget) {
  if (total_budget < 2) throw ConfigError("the sweep needs a total budget of at least 2");
  const std::uint64_t step = config.mma.initial_dataset_size;
  if (step == 0) throw ConfigError("the sweep needs mma.initial_dataset_size >= 1");
  const std::size_t row_count = static_cast<std::size_t>((total_budget - 1) / step);
  if (row_count == 0) throw ConfigError("the total budget leaves no room for an attack phase");

  const TargetSelection sel = select_targets(teacher, task.holdout, config.sweep.runs, mix_seed(config.seed, 0x5e));
  if (sel.indices.empty()) throw ConfigError("no correctly classified hold-out points to attack");
  const auto pool = holdout_points(task);
  const auto shared_teacher = std::make_shared<const NeuralClassifier>(teacher);
  const MmaConfig& mc = config.mma;

  struct Cell {
    double generated = 0.0;
    std::optional<double> aqn;
  };
  std::vector<std::vector<Cell>> cells(row_count);
  std::vector<std::vector<bool>> transfer_flags(row_count);

  for (std::size_t run = 0; run < config.sweep.runs; ++run) {
    const std::size_t target_id = sel.indices[run % sel.indices.size()];
    const auto& sample = task.holdout[target_id];
    const std::uint64_t run_seed = mix_seed(config.seed, 0x5eed0000 + run);
    BlackBoxOracle oracle(shared_teacher);
    oracle.hard_label(sample.features, QueryPhase::setup);
    const std::uint64_t base = oracle.query_count();

    std::mt19937_64 rng(run_seed);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<double>> initial;
    for (std::size_t i = 0; i < std::min<std::size_t>(step, order.size()); ++i) initial.push_back(pool[order[i]]);
    DistillationState state(make_student(config, run), build_student_dataset(oracle, initial));
    state.dataset.upsert(sample.features, oracle.query(sample.features, QueryPhase::setup));

    for (std::size_t r = 0; r < row_count; ++r) {
      const std::uint64_t qn1_target = step * (r + 1);
      // Grow the training set: every candidate of the current student is labelled and kept.
      std::size_t stalls = 0;
      while (oracle.query_count() - base < qn1_target && stalls < 4) {
        DistillationConfig dc = mc.distill;
        dc.seed = mix_seed(run_seed, 2 * state.iteration);
        train_student(state, dc);
        const auto batch = generate_candidate_batch(state.student, sample.features, sample.label, mc.pgd,
                                                    mc.candidates_per_iter, mix_seed(run_seed, 2 * state.iteration + 1));
        const std::uint64_t before = oracle.query_count();
        for (const Candidate& c : batch) {
          if (oracle.query_count() - base >= qn1_target) break;
          state.dataset.upsert(c.point, oracle.query(c.point, QueryPhase::setup));
        }
        stalls = oracle.query_count() == before ? stalls + 1 : 0;
        ++state.iteration;
      }
      DistillationConfig dc = mc.distill;
      dc.seed = mix_seed(run_seed, 2 * state.iteration);
      train_student(state, dc);
      const std::uint64_t qn1_spent = oracle.query_count() - base;
      const std::uint64_t qn2 = total_budget > qn1_spent ? total_budget - qn1_spent : 0;

      // Attack phase on a frozen copy of this iteration's student.
      BlackBoxOracle probe = oracle;
      const std::uint64_t probe_start = probe.query_count();
      std::set<FeatureKey> transfers;
      const std::size_t max_batches = 4 * (qn2 / mc.candidates_per_iter + 1);
      for (std::size_t b = 0; b < max_batches && probe.query_count() - probe_start < qn2; ++b) {
        const auto batch = generate_candidate_batch(state.student, sample.features, sample.label, mc.pgd,
                                                    mc.candidates_per_iter, mix_seed(run_seed, (r + 1) * 100003 + b));
        for (const Candidate& c : batch) {
          if (c.student_class == sample.label) continue;
          if (probe.query_count() - probe_start >= qn2 && !probe.is_cached(c.point)) break;
          const bool strict = probe.hard_label(c.point, QueryPhase::attack) == c.student_class;
          transfer_flags[r].push_back(strict);
          if (strict) transfers.insert(feature_key(c.point));
        }
      }
      Cell cell;
      cell.generated = static_cast<double>(transfers.size());
      if (!transfers.empty()) {
        const double spent = static_cast<double>(qn1_spent + (probe.query_count() - probe_start));
        cell.aqn = spent / static_cast<double>(transfers.size());
      }
      cells[r].push_back(cell);
    }
  }

  // Runs with a transfer at every split; AQN averages over this common set so that
  // runs dropping out at larger QN1 do not bias the trend.
  std::vector<bool> paired(config.sweep.runs, true);
  for (std::size_t r = 0; r < row_count; ++r) {
    for (std::size_t run = 0; run < cells[r].size(); ++run) {
      if (!cells[r][run].aqn) paired[run] = false;
    }
  }

  std::vector<SweepRow> rows;
  for (std::size_t r = 0; r < row_count; ++r) {
    SweepRow row;
    row.iteration = r + 1;
    row.qn1 = step * (r + 1);
    row.qn2 = total_budget - row.qn1;
    row.runs = cells[r].size();
    std::vector<double> aqn_values;
    std::vector<bool> aqn_success;
    for (std::size_t run = 0; run < cells[r].size(); ++run) {
      const Cell& c = cells[r][run];
      row.generated += c.generated / static_cast<double>(row.runs);
      if (c.aqn) ++row.successful_runs;
      aqn_values.push_back(c.aqn.value_or(0.0));
      aqn_success.push_back(paired[run]);
    }
    row.aqn = compute_aqn(aqn_values, aqn_success);
    row.paired_runs = static_cast<std::size_t>(std::count(paired.begin(), paired.end(), true));
    if (!transfer_flags[r].empty()) row.asr = compute_asr(transfer_flags[r]);
    rows.push_back(row);
  }
  return rows;
}

std::vector<DiagnosticRecord> run_diagnostics(const ExperimentConfig& config, const NeuralClassifier& teacher,
                                              const DeskTask& task) {
  const TargetSelection sel = select_targets(teacher, task.holdout, config.targets, mix_seed(config.seed, 0x7a));
  const auto pool = holdout_points(task);
  const auto shared_teacher = std::make_shared<const NeuralClassifier>(teacher);
  std::vector<DiagnosticRecord> out;
  for (std::size_t target_id : sel.indices) {
    const auto& sample = task.holdout[target_id];
    BlackBoxOracle oracle(shared_teacher, OracleMode::diagnostic);
    NeuralClassifier student = make_student(config, target_id);
    MmaConfig mc = config.mma;
    mc.seed = mix_seed(config.seed, target_id * 16);
    DiagnosticRecord rec;
    rec.target_id = target_id;
    rec.trace = run_mmattack(oracle, sample.features, sample.label, student, mc, pool);
    rec.diagnostics = compute_diagnostics(oracle, student, rec.trace, mc);
    out.push_back(std::move(rec));
  }
  return out;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  out << "attack,target_id,seed,success,queries_setup,queries_attack,iterations,wall_ms\n";
  for (const auto& r : rows) {
    out << r.attack << ',' << r.target_id << ',' << r.seed << ',' << (r.success ? 1 : 0) << ',' << r.queries_setup
        << ',' << r.queries_attack << ',' << r.iterations << ',' << r.wall_ms << '\n';
  }
  return out.str();
}

std::string summary_csv(const std::vector<AttackSummary>& summary) {
  std::ostringstream out;
  out << "attack,attempted,successes,asr,aqn_total,aqn_attack_only\n";
  for (const auto& s : summary) {
    out << s.attack << ',' << s.attempted << ',' << s.successes << ',' << number(s.asr) << ','
        << format_metric(s.aqn_total) << ',' << format_metric(s.aqn_attack_only) << '\n';
  }
  return out.str();
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "iteration,qn1,qn2,generated,asr,aqn,runs,successful_runs,paired_runs\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.qn1 << ',' << r.qn2 << ',' << number(r.generated) << ',' << format_metric(r.asr)
        << ',' << format_metric(r.aqn) << ',' << r.runs << ',' << r.successful_runs << ',' << r.paired_runs << '\n';
  }
  return out.str();
}

std::string sweep_dat(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "# iteration qn1 qn2 generated asr aqn\n";
  for (const auto& r : rows) {
    out << r.iteration << ' ' << r.qn1 << ' ' << r.qn2 << ' ' << number(r.generated) << ' '
        << (r.asr ? number(*r.asr) : "NaN") << ' ' << (r.aqn ? number(*r.aqn) : "NaN") << '\n';
  }
  return out.str();
}

std::string diagnostics_csv(const std::vector<DiagnosticRecord>& records, double epsilon) {
  std::ostringstream out;
  out << "target_id,success,perfect_match_held,margin_condition_held,step_condition_held,beta,margin_at_hit,gap_at_hit,step_to_prior,"
         "gap_below_epsilon\n";
  for (const auto& r : records) {
    const auto& d = r.diagnostics;
    const std::string below = d.gap_at_hit ? (*d.gap_at_hit < epsilon ? "1" : "0") : "-";
    out << r.target_id << ',' << (r.trace.success() ? 1 : 0) << ',' << (d.flags.perfect_match_held ? 1 : 0) << ','
        << (d.flags.margin_condition_held ? 1 : 0) << ',' << (d.flags.step_condition_held ? 1 : 0) << ','
        << format_metric(d.beta_estimate, 6) << ',' << format_metric(d.margin_at_hit, 6) << ','
        << format_metric(d.gap_at_hit, 6) << ',' << format_metric(d.step_to_prior, 6) << ',' << below << '\n';
  }
  return out.str();
}

json report_to_json(const ExperimentConfig& config, const ComparisonReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"attack", r.attack},
                    {"target_id", r.target_id},
                    {"seed", r.seed},
                    {"success", r.success},
                    {"queries_setup", r.queries_setup},
                    {"queries_attack", r.queries_attack},
                    {"iterations", r.iterations},
                    {"wall_ms", r.wall_ms}});
  }
  json summary = json::array();
  for (const auto& s : report.summary) {
    json js{{"attack", s.attack}, {"attempted", s.attempted}, {"successes", s.successes}, {"asr", s.asr}};
    js["aqn_total"] = s.aqn_total ? json(*s.aqn_total) : json();
    js["aqn_attack_only"] = s.aqn_attack_only ? json(*s.aqn_attack_only) : json();
    summary.push_back(std::move(js));
  }
  return json{
      {"config", config_to_json(config)},
      {"teacher_holdout_accuracy", report.teacher_holdout_accuracy},
      {"excluded_targets", report.excluded_targets},
      {"rows", std::move(rows)},
      {"summary", std::move(summary)},
      {"notes",
       {{"aqn_total", "setup queries (target check and initial student data) plus attack queries"},
        {"aqn_attack_only", "attack-phase queries up to the first success"},
        {"nes_step", "signed step on the antithetic gradient estimate"},
        {"square_schedule", "window fraction p_init for the first num_queries / 2 iterations, p_init / 2 after"}}},
  };
}

std::vector<MetricsRow> rows_from_report(const json& report) {
  if (!report.contains("rows") || !report["rows"].is_array()) throw ConfigError("report has no 'rows' array");
  std::vector<MetricsRow> rows;
  for (const auto& j : report["rows"]) {
    MetricsRow r;
    r.attack = j.at("attack").get<std::string>();
    r.target_id = j.at("target_id").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.success = j.at("success").get<bool>();
    r.queries_setup = j.at("queries_setup").get<std::uint64_t>();
    r.queries_attack = j.at("queries_attack").get<std::uint64_t>();
    r.iterations = j.at("iterations").get<std::size_t>();
    r.wall_ms = j.at("wall_ms").get<std::int64_t>();
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace mma
