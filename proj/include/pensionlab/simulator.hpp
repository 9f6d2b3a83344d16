#pragma once

// Monte Carlo engine: accumulation under fixed strategies, on-grid
// decumulation under a solved policy, fixed-fraction benchmark strategies,
// decile fans and parameter sweeps.
//
// Mortality only enters through the gain weights; every scenario carries a
// consumption path over the full retirement horizon.

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pensionlab/actuarial.hpp"
#include "pensionlab/dual_solver.hpp"
#include "pensionlab/market.hpp"
#include "pensionlab/preferences.hpp"

namespace pensionlab {

class InfeasibleStartError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Standard-normal draws keyed by (seed, phase, scenario): scenario i's
/// stream never depends on how many scenarios or workers there are.
class ScenarioBatch {
 public:
  enum class Phase : std::uint64_t { accumulation = 1, decumulation = 2, benchmark = 3 };

  ScenarioBatch(std::size_t n_scenarios, std::uint64_t seed);
  std::size_t size() const { return n_; }
  std::uint64_t seed() const { return seed_; }
  /// Writes out.size() draws for scenario i.
  void draws(Phase phase, std::size_t i, std::span<double> out) const;

 private:
  std::size_t n_;
  std::uint64_t seed_;
};

struct AccumulationConfig {
  int start_age = 25;
  double contribution_rate = 0.1;  // fraction of salary, paid at the start of each year
  double salary_growth = 0.0;      // per year; salary in the last working year is 1
  double fixed_pi = 0.6;
  std::vector<double> glidepath;   // per working year; overrides fixed_pi when non-empty
  double initial_wealth = 0.0;

  /// Throws ConfigError for invalid fields given the retirement age.
  void validate(int retirement_age) const;
  double pi_at(std::size_t year) const;
  bool operator==(const AccumulationConfig&) const = default;
};

/// Wealth at retirement; `path_deciles` holds wealth deciles at the start of
/// each working year (after the contribution).
struct AccumulationResult {
  std::vector<double> wealth;
  std::vector<int> ages;
  std::vector<std::array<double, 9>> path_deciles;
};

AccumulationResult simulate_accumulation(const AccumulationConfig& cfg, int retirement_age,
                                         const MarketParams& m, const ScenarioBatch& batch,
                                         unsigned workers = 0);

struct DecumulationResult {
  ConsumptionPaths consumption;
  /// Grid node occupied by each scenario at the start of each year (row-major).
  std::vector<std::uint32_t> nodes;
  std::size_t start_node = 0;     // scalar start only
  double snapped_wealth = 0.0;    // grid wealth actually used (scalar start)
  double requested_wealth = 0.0;
};

/// Policy-driven simulation; wealth always sits on the policy grid.
DecumulationResult simulate_decumulation(const PolicyTable& policy, const ScenarioBatch& batch,
                                         double w0, unsigned workers = 0);
/// Per-scenario start wealth (e.g. from accumulation), each snapped down.
DecumulationResult simulate_decumulation(const PolicyTable& policy, const ScenarioBatch& batch,
                                         std::span<const double> w0, unsigned workers = 0);

/// Benchmark: consume `fraction` of wealth each year (everything in the last
/// year), invest the rest at constant weight `pi`, survivors receive the
/// tontine credit.
struct FixedStrategy {
  double fraction = 0.05;
  double pi = 0.6;
};
ConsumptionPaths simulate_fixed_strategy(const FixedStrategy& s, const MortalityTable& table,
                                         const MarketParams& m, const ScenarioBatch& batch,
                                         double w0, unsigned workers = 0);
/// The ten benchmark strategies: fractions {3,5,7,9,12}% x weights {0.2, 0.6}.
std::vector<FixedStrategy> benchmark_strategies();

struct FanDiagram {
  std::vector<int> years;                     // ages, one per retirement year
  std::vector<std::array<double, 9>> deciles; // 10%..90% per year
  GainEstimate gain;
};

/// Type-7 (linear interpolation) deciles per year; attaches the gain.
FanDiagram fan_from_paths(const ConsumptionPaths& paths, const MortalityTable& table,
                          const EkmParams& p, double dt = 1.0);
/// Interpolated quantile of already sorted values.
double sorted_quantile(std::span<const double> sorted, double prob);

/// Decile width (90% minus 10%) at retirement year index t.
double fan_width(const FanDiagram& fan, std::size_t t);

struct StrategyPoint {
  double consumption = 0.0;
  double dispersion = 0.0;  // std. dev. of next-year grid wealth under P
};
/// Per year: the scenario at the given consumption percentile (nearest
/// rank, ties by scenario index), its consumption and the payoff dispersion
/// of its decision.
std::vector<StrategyPoint> strategy_at_percentile(const PolicyTable& policy,
                                                  const DecumulationResult& sim, int percentile);
/// Same for several percentiles with one sort per year.
std::vector<std::vector<StrategyPoint>> strategy_at_percentiles(const PolicyTable& policy,
                                                                const DecumulationResult& sim,
                                                                std::span<const int> percentiles);
/// Standard deviation of the continuation wealth of one decision under P.
double payoff_dispersion(const NodeDecision& d, const WealthGrid& grid);

/// Everything a solve+simulate run needs besides the preference triple.
struct PipelineInputs {
  MarketParams market;
  MortalityTable mortality = default_mortality();
  GridSpec grid;
  double stop_rel_change = 1e-4;
  SolverOptions solver;
  double initial_wealth = 8.0;
  std::size_t n_scenarios = 100000;
  std::uint64_t seed = 7;
  unsigned workers = 0;
};

struct RunOutput {
  EkmParams params;
  std::shared_ptr<const SolveResult> solve;
  DecumulationResult sim;
  FanDiagram fan;
  double solver_ell = 0.0;  // retirement-date ell at the snapped start wealth
};

std::shared_ptr<const SolveResult> solve_for(const EkmParams& p, const PipelineInputs& in);
RunOutput simulate_for(const EkmParams& p, std::shared_ptr<const SolveResult> solved,
                       const PipelineInputs& in);
RunOutput solve_and_simulate(const EkmParams& p, const PipelineInputs& in);

struct SweepEntry {
  EkmParams params;
  std::optional<RunOutput> output;
  std::string error;  // non-empty when this triple failed
};

/// Solves and simulates every triple (duplicates computed once), parallel
/// across triples; failures are recorded per entry.
std::vector<SweepEntry> sweep(const std::vector<EkmParams>& params, const PipelineInputs& in,
                              const SweepBox& box = {});

}  // namespace pensionlab
