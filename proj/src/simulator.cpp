#include "pensionlab/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "pensionlab/errors.hpp"
#include "pensionlab/numerics.hpp"
#include "pensionlab/parallel.hpp"

namespace pensionlab {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::size_t kBlock = 1024;  // scenarios per parallel work item

template <class F>
void for_scenarios(std::size_t n, unsigned workers, F&& body) {
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  parallel_for(blocks, workers, [&](std::size_t b) {
    for (std::size_t i = b * kBlock; i < std::min(n, (b + 1) * kBlock); ++i) body(i);
  });
}

}  // namespace

ScenarioBatch::ScenarioBatch(std::size_t n_scenarios, std::uint64_t seed)
    : n_(n_scenarios), seed_(seed) {
  if (n_scenarios == 0) throw std::invalid_argument("scenario batch: need at least one scenario");
}

void ScenarioBatch::draws(Phase phase, std::size_t i, std::span<double> out) const {
  const std::uint64_t key =
      splitmix64(splitmix64(seed_ ^ (static_cast<std::uint64_t>(phase) << 56)) ^ i);
  std::mt19937_64 gen(key);
  std::normal_distribution<double> normal;
  for (double& e : out) e = normal(gen);
}

// ---- accumulation -----------------------------------------------------------

void AccumulationConfig::validate(int retirement_age) const {
  if (start_age >= retirement_age)
    throw ConfigError("/accumulation/start_age", "must be below the retirement age " +
                                                     std::to_string(retirement_age));
  if (!(contribution_rate >= 0.0 && contribution_rate <= 1.0))
    throw ConfigError("/accumulation/contribution_rate", "must lie in [0, 1]");
  if (!std::isfinite(salary_growth) || salary_growth <= -1.0)
    throw ConfigError("/accumulation/salary_growth", "must be finite and above -1");
  if (!std::isfinite(fixed_pi)) throw ConfigError("/accumulation/fixed_pi", "must be finite");
  if (!glidepath.empty() &&
      glidepath.size() != static_cast<std::size_t>(retirement_age - start_age))
    throw ConfigError("/accumulation/glidepath",
                      "needs one weight per working year (" +
                          std::to_string(retirement_age - start_age) + ")");
  for (std::size_t k = 0; k < glidepath.size(); ++k)
    if (!std::isfinite(glidepath[k]))
      throw ConfigError("/accumulation/glidepath/" + std::to_string(k), "must be finite");
  if (!(initial_wealth >= 0.0) || !std::isfinite(initial_wealth))
    throw ConfigError("/accumulation/initial_wealth", "must be finite and >= 0");
}

double AccumulationConfig::pi_at(std::size_t year) const {
  return glidepath.empty() ? fixed_pi : glidepath.at(year);
}

AccumulationResult simulate_accumulation(const AccumulationConfig& cfg, int retirement_age,
                                         const MarketParams& m, const ScenarioBatch& batch,
                                         unsigned workers) {
  cfg.validate(retirement_age);
  m.validate();
  const std::size_t years = static_cast<std::size_t>(retirement_age - cfg.start_age);
  const std::size_t n = batch.size();
  std::vector<double> salary(years);
  for (std::size_t t = 0; t < years; ++t)
    salary[t] = std::pow(1.0 + cfg.salary_growth, static_cast<double>(t) - static_cast<double>(years - 1));
  AccumulationResult out;
  out.wealth.resize(n);
  std::vector<double> path(n * years);
  for_scenarios(n, workers, [&](std::size_t i) {
    std::vector<double> eps(years);
    batch.draws(ScenarioBatch::Phase::accumulation, i, eps);
    double w = cfg.initial_wealth;
    for (std::size_t t = 0; t < years; ++t) {
      w += cfg.contribution_rate * salary[t];
      path[t * n + i] = w;
      if (w > 0.0) w = std::exp(wealth_step_log(std::log(w), cfg.pi_at(t), eps[t], m));
    }
    out.wealth[i] = w;
  });
  out.ages.resize(years);
  out.path_deciles.resize(years);
  for (std::size_t t = 0; t < years; ++t) {
    out.ages[t] = cfg.start_age + static_cast<int>(t);
    std::span<double> col(path.data() + t * n, n);
    std::sort(col.begin(), col.end());
    for (int k = 0; k < 9; ++k) out.path_deciles[t][k] = sorted_quantile(col, 0.1 * (k + 1));
  }
  return out;
}

// ---- decumulation -----------------------------------------------------------

namespace {

std::size_t start_node_for(const PolicyTable& policy, double w0) {
  const auto node = policy.grid.snap_down(w0);
  if (!node)
    throw InfeasibleStartError("initial wealth " + std::to_string(w0) +
                               " is below the smallest grid point " +
                               std::to_string(policy.grid.front()));
  if (policy.periods.front().nodes[*node].infeasible || policy.values.front().ell()[*node] == -numerics::kInf)
    throw InfeasibleStartError("initial wealth " + std::to_string(w0) +
                               " cannot fund consumption in every year");
  return *node;
}

}  // namespace

DecumulationResult simulate_decumulation(const PolicyTable& policy, const ScenarioBatch& batch,
                                         std::span<const double> w0, unsigned workers) {
  const std::size_t n = batch.size();
  const std::size_t h = policy.horizon();
  if (w0.size() != n) throw std::invalid_argument("simulate_decumulation: one start wealth per scenario");
  if (policy.periods.size() != h || h == 0) throw std::invalid_argument("simulate_decumulation: empty policy");
  std::vector<std::size_t> starts(n);
  for (std::size_t i = 0; i < n; ++i) starts[i] = start_node_for(policy, w0[i]);

  DecumulationResult out;
  out.consumption = ConsumptionPaths(n, h);
  out.nodes.assign(n * h, 0);
  for_scenarios(n, workers, [&](std::size_t i) {
    std::vector<double> eps(h);
    batch.draws(ScenarioBatch::Phase::decumulation, i, eps);
    std::size_t node = starts[i];
    for (std::size_t t = 0; t < h; ++t) {
      const NodeDecision& d = policy.periods[t].nodes.at(node);
      if (d.infeasible) throw SolverError("simulation reached an infeasible grid state");
      out.nodes[i * h + t] = static_cast<std::uint32_t>(node);
      out.consumption.at(i, t) = std::exp(d.log_c);
      if (d.terminal || t + 1 == h) continue;
      node = d.next_node(shock_to_L_uniform(eps[t], policy.market));
      if (node >= policy.grid.size()) throw SolverError("simulation left the wealth grid");
    }
  });
  return out;
}

DecumulationResult simulate_decumulation(const PolicyTable& policy, const ScenarioBatch& batch,
                                         double w0, unsigned workers) {
  const std::vector<double> starts(batch.size(), w0);
  DecumulationResult out = simulate_decumulation(policy, batch, starts, workers);
  out.start_node = start_node_for(policy, w0);
  out.snapped_wealth = policy.grid[out.start_node];
  out.requested_wealth = w0;
  return out;
}

ConsumptionPaths simulate_fixed_strategy(const FixedStrategy& s, const MortalityTable& table,
                                         const MarketParams& m, const ScenarioBatch& batch,
                                         double w0, unsigned workers) {
  if (!(s.fraction > 0.0 && s.fraction < 1.0))
    throw std::invalid_argument("fixed strategy: fraction must lie in (0, 1)");
  if (!(w0 > 0.0)) throw InfeasibleStartError("fixed strategy: initial wealth must be positive");
  const std::size_t n = batch.size();
  const std::size_t h = table.horizon();
  ConsumptionPaths out(n, h);
  for_scenarios(n, workers, [&](std::size_t i) {
    std::vector<double> eps(h);
    batch.draws(ScenarioBatch::Phase::benchmark, i, eps);
    double log_w = std::log(w0);
    for (std::size_t t = 0; t < h; ++t) {
      if (t + 1 == h || table.survival(t) == 0.0) {
        out.at(i, t) = std::exp(log_w);
        for (std::size_t k = t + 1; k < h; ++k) out.at(i, k) = out.at(i, t);
        break;
      }
      out.at(i, t) = s.fraction * std::exp(log_w);
      log_w += std::log1p(-s.fraction) - std::log(table.survival(t));
      log_w = wealth_step_log(log_w, s.pi, eps[t], m);
    }
  });
  return out;
}

std::vector<FixedStrategy> benchmark_strategies() {
  std::vector<FixedStrategy> out;
  for (double f : {0.03, 0.05, 0.07, 0.09, 0.12})
    for (double pi : {0.2, 0.6}) out.push_back({f, pi});
  return out;
}

// ---- fans -------------------------------------------------------------------

double sorted_quantile(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

FanDiagram fan_from_paths(const ConsumptionPaths& paths, const MortalityTable& table,
                          const EkmParams& p, double dt) {
  if (paths.n_scenarios < 10) throw std::invalid_argument("fan: need at least 10 scenarios");
  if (paths.horizon != table.horizon()) throw std::invalid_argument("fan: horizon mismatch");
  FanDiagram fan;
  fan.years.resize(paths.horizon);
  fan.deciles.resize(paths.horizon);
  std::vector<double> col(paths.n_scenarios);
  for (std::size_t t = 0; t < paths.horizon; ++t) {
    fan.years[t] = table.age(t);
    for (std::size_t i = 0; i < paths.n_scenarios; ++i) col[i] = paths.at(i, t);
    std::sort(col.begin(), col.end());
    for (int k = 0; k < 9; ++k) fan.deciles[t][k] = sorted_quantile(col, 0.1 * (k + 1));
  }
  fan.gain = estimate_gain(paths, table, p, dt);
  return fan;
}

double fan_width(const FanDiagram& fan, std::size_t t) {
  return fan.deciles.at(t)[8] - fan.deciles.at(t)[0];
}

double payoff_dispersion(const NodeDecision& d, const WealthGrid& grid) {
  if (d.terminal || d.infeasible || d.i_min == d.i_max) return 0.0;
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t j = d.i_min; j <= d.i_max; ++j) {
    const double mass = std::exp(d.log_mass(j));
    m1 += mass * grid[j];
    m2 += mass * grid[j] * grid[j];
  }
  return std::sqrt(std::max(0.0, m2 - m1 * m1));
}

std::vector<std::vector<StrategyPoint>> strategy_at_percentiles(const PolicyTable& policy,
                                                                const DecumulationResult& sim,
                                                                std::span<const int> percentiles) {
  const std::size_t n = sim.consumption.n_scenarios;
  const std::size_t h = sim.consumption.horizon;
  std::vector<std::size_t> ranks;
  for (int p : percentiles) {
    if (p < 1 || p > 99) throw std::invalid_argument("percentile must lie in [1, 99]");
    ranks.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n)))) - 1);
  }
  std::vector<std::vector<StrategyPoint>> out(percentiles.size(), std::vector<StrategyPoint>(h));
  std::vector<std::size_t> order(n);
  for (std::size_t t = 0; t < h; ++t) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return sim.consumption.at(x, t) < sim.consumption.at(y, t);
    });
    for (std::size_t k = 0; k < ranks.size(); ++k) {
      const std::size_t s = order[ranks[k]];
      const NodeDecision& d = policy.periods[t].nodes[sim.nodes[s * h + t]];
      out[k][t].consumption = sim.consumption.at(s, t);
      out[k][t].dispersion = payoff_dispersion(d, policy.grid);
    }
  }
  return out;
}

std::vector<StrategyPoint> strategy_at_percentile(const PolicyTable& policy,
                                                  const DecumulationResult& sim, int percentile) {
  const int p[1] = {percentile};
  return std::move(strategy_at_percentiles(policy, sim, p).front());
}

// ---- pipelines --------------------------------------------------------------

std::shared_ptr<const SolveResult> solve_for(const EkmParams& p, const PipelineInputs& in) {
  SolverOptions options = in.solver;
  options.workers = in.workers;
  auto schedule = in.grid.schedule(p.a, in.initial_wealth);
  auto result = std::make_shared<SolveResult>(
      solve_decumulation(schedule, in.mortality, in.market, p, options, in.stop_rel_change));
  result->policy.initial_wealth = in.initial_wealth;
  return result;
}

RunOutput simulate_for(const EkmParams& p, std::shared_ptr<const SolveResult> solved,
                       const PipelineInputs& in) {
  RunOutput out;
  out.params = p;
  out.solve = std::move(solved);
  const PolicyTable& policy = out.solve->policy;
  const ScenarioBatch batch(in.n_scenarios, in.seed);
  out.sim = simulate_decumulation(policy, batch, in.initial_wealth, in.workers);
  out.fan = fan_from_paths(out.sim.consumption, policy.mortality, p, policy.market.dt);
  out.solver_ell = policy.values.front().ell()[out.sim.start_node];
  return out;
}

RunOutput solve_and_simulate(const EkmParams& p, const PipelineInputs& in) {
  return simulate_for(p, solve_for(p, in), in);
}

std::vector<SweepEntry> sweep(const std::vector<EkmParams>& params, const PipelineInputs& in,
                              const SweepBox& box) {
  std::vector<EkmParams> unique;
  std::vector<std::size_t> slot(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto it = std::find(unique.begin(), unique.end(), params[k]);
    slot[k] = static_cast<std::size_t>(it - unique.begin());
    if (it == unique.end()) unique.push_back(params[k]);
  }
  std::vector<SweepEntry> solved(unique.size());
  PipelineInputs inner = in;
  inner.workers = unique.size() > 1 ? 1 : in.workers;
  parallel_for(unique.size(), in.workers, [&](std::size_t k) {
    SweepEntry& e = solved[k];
    e.params = unique[k];
    const auto bad = box.violations(unique[k]);
    if (!bad.empty()) {
      e.error = bad.front().first + ": " + bad.front().second;
      return;
    }
    try {
      e.output = solve_and_simulate(unique[k], inner);
    } catch (const std::exception& err) {
      e.error = err.what();
    }
  });
  std::vector<SweepEntry> out;
  out.reserve(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) out.push_back(solved[slot[k]]);
  return out;
}

}  // namespace pensionlab
