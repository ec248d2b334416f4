#include "mma/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "mma/losses.hpp"
#include "mma/whitebox.hpp"

namespace mma {

void NesConfig::validate() const {
  if (!(epsilon > 0.0) || !(sigma > 0.0) || !(alpha > 0.0)) {
    throw std::invalid_argument("nes: epsilon, sigma and alpha must be positive");
  }
  if (num_samples < 2) throw std::invalid_argument("nes.num_samples must be at least 2");
  if (num_iterations == 0) throw std::invalid_argument("nes.num_iterations must be positive");
}

void ZooConfig::validate() const {
  if (!(epsilon > 0.0) || !(learning_rate > 0.0) || !(fd_step > 0.0)) {
    throw std::invalid_argument("zoo: epsilon, learning_rate and fd_step must be positive");
  }
  if (num_iterations == 0) throw std::invalid_argument("zoo.num_iterations must be positive");
}

void SquareConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("square.epsilon must be positive");
  if (num_queries == 0) throw std::invalid_argument("square.num_queries must be positive");
  if (!(p_init > 0.0 && p_init <= 1.0)) throw std::invalid_argument("square.p_init must lie in (0, 1]");
}

double untargeted_loss(const ProbVector& p, ClassIndex y) { return cross_entropy(p.values(), y); }

namespace {

std::vector<double> clip_box(std::vector<double> v) {
  for (auto& e : v) e = std::clamp(e, 0.0, 1.0);
  return v;
}

void require_correct(BlackBoxOracle& oracle, std::span<const double> x, ClassIndex y) {
  if (oracle.hard_label(x, QueryPhase::attack) != y) {
    throw std::invalid_argument("baseline attack: the oracle does not assign the target its label");
  }
}

bool within(std::span<const double> p, std::span<const double> x, double eps) {
  for (double v : p) {
    if (v < 0.0 || v > 1.0) return false;
  }
  return ball_distance(p, x, BallNorm::linf) <= eps;
}

// Successes are confirmed with a second, cached lookup.
AttackResult finish(BlackBoxOracle& oracle, std::vector<double> point, ClassIndex y, std::uint64_t start,
                    std::size_t iterations) {
  AttackResult r;
  r.success = oracle.hard_label(point, QueryPhase::attack) != y;
  if (r.success) r.adversarial_point = std::move(point);
  r.queries_spent = oracle.query_count() - start;
  r.iterations = iterations;
  return r;
}

double margin_loss(const ProbVector& p, ClassIndex y) {
  const auto v = p.values();
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k != y) other = std::max(other, std::log(std::max(v[k], kProbabilityFloor)));
  }
  return std::log(std::max(v[y], kProbabilityFloor)) - other;
}

}  // namespace

double zoo_partial(BlackBoxOracle& oracle, std::span<const double> x, ClassIndex y, std::size_t j, double h) {
  std::vector<double> up(x.begin(), x.end()), down(x.begin(), x.end());
  up[j] += h;
  down[j] -= h;
  const double lu = untargeted_loss(oracle.query(up, QueryPhase::attack), y);
  const double ld = untargeted_loss(oracle.query(down, QueryPhase::attack), y);
  return (lu - ld) / (2.0 * h);
}

AttackResult nes_attack(BlackBoxOracle& oracle, std::span<const double> x, ClassIndex y, const NesConfig& config,
                        std::uint64_t seed) {
  config.validate();
  const std::uint64_t start = oracle.query_count();
  require_correct(oracle, x, y);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t d = x.size();
  const std::size_t pairs = config.num_samples / 2;
  std::vector<double> current(x.begin(), x.end());
  std::vector<double> grad(d), u(d), plus(d), minus(d);
  for (std::size_t it = 1; it <= config.num_iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t s = 0; s < pairs; ++s) {
      for (std::size_t i = 0; i < d; ++i) {
        u[i] = gauss(rng);
        plus[i] = current[i] + config.sigma * u[i];
        minus[i] = current[i] - config.sigma * u[i];
      }
      const double diff = untargeted_loss(oracle.query(clip_box(plus), QueryPhase::attack), y) -
                          untargeted_loss(oracle.query(clip_box(minus), QueryPhase::attack), y);
      for (std::size_t i = 0; i < d; ++i) grad[i] += diff * u[i];
    }
    for (std::size_t i = 0; i < d; ++i) {
      const double g = grad[i] / (config.sigma * static_cast<double>(2 * pairs));
      current[i] += config.alpha * (g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0));
    }
    current = project_ball(current, x, config.epsilon, BallNorm::linf);
    if (oracle.hard_label(current, QueryPhase::attack) != y) return finish(oracle, current, y, start, it);
  }
  return finish(oracle, current, y, start, config.num_iterations);
}

AttackResult zoo_attack(BlackBoxOracle& oracle, std::span<const double> x, ClassIndex y, const ZooConfig& config) {
  config.validate();
  const std::uint64_t start = oracle.query_count();
  require_correct(oracle, x, y);
  const std::size_t d = x.size();
  std::vector<double> current(x.begin(), x.end());
  for (std::size_t it = 1; it <= config.num_iterations; ++it) {
    const std::size_t j = (it - 1) % d;
    std::vector<double> up = current, down = current;
    up[j] += config.fd_step;
    down[j] -= config.fd_step;
    const ProbVector pu = oracle.query(up, QueryPhase::attack);
    const ProbVector pd = oracle.query(down, QueryPhase::attack);
    // The probes themselves count as hits when they are feasible.
    if (pu.argmax() != y && within(up, x, config.epsilon)) return finish(oracle, up, y, start, it);
    if (pd.argmax() != y && within(down, x, config.epsilon)) return finish(oracle, down, y, start, it);
    const double g = (untargeted_loss(pu, y) - untargeted_loss(pd, y)) / (2.0 * config.fd_step);
    current[j] += config.learning_rate * g;
    current = project_ball(current, x, config.epsilon, BallNorm::linf);
  }
  return finish(oracle, current, y, start, config.num_iterations);
}

AttackResult square_attack(BlackBoxOracle& oracle, std::span<const double> x, ClassIndex y,
                           const SquareConfig& config, std::uint64_t seed) {
  config.validate();
  const std::uint64_t start = oracle.query_count();
  require_correct(oracle, x, y);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  const std::size_t d = x.size();
  const auto spent = [&] { return oracle.query_count() - start; };
  const auto signed_eps = [&] { return coin(rng) ? config.epsilon : -config.epsilon; };

  // Features are treated as a single row; the initial stripes are per-coordinate signs.
  std::vector<double> current(d);
  for (std::size_t i = 0; i < d; ++i) current[i] = x[i] + signed_eps();
  current = project_ball(current, x, config.epsilon, BallNorm::linf);
  ProbVector p = oracle.query(current, QueryPhase::attack);
  double loss = margin_loss(p, y);
  std::size_t iterations = 0;
  std::vector<double> trace{loss};
  // Proposals that reproduce a cached point are free, so the loop is also capped on iterations.
  const std::size_t max_iterations = 10 * config.num_queries;
  while (loss >= 0.0 && spent() < config.num_queries && iterations < max_iterations) {
    ++iterations;
    // The schedule follows the iteration index; spent queries stall once proposals start hitting the cache.
    const double p_frac = iterations <= config.num_queries / 2 ? config.p_init : config.p_init / 2.0;
    const auto width = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(p_frac * static_cast<double>(d))), 1, d);
    std::uniform_int_distribution<std::size_t> pick(0, d - width);
    const std::size_t offset = pick(rng);
    std::vector<double> proposal = current;
    const double delta = signed_eps();
    for (std::size_t i = offset; i < offset + width; ++i) proposal[i] = x[i] + delta;
    proposal = project_ball(proposal, x, config.epsilon, BallNorm::linf);
    const ProbVector q = oracle.query(proposal, QueryPhase::attack);
    const double candidate_loss = margin_loss(q, y);
    if (candidate_loss < loss) {
      loss = candidate_loss;
      current = std::move(proposal);
    }
    trace.push_back(loss);
  }
  AttackResult r = finish(oracle, current, y, start, iterations);
  r.loss_trace = std::move(trace);
  return r;
}

}  // namespace mma
