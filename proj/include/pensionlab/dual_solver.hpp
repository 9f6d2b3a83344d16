#pragma once

// Backward-induction solver for the decumulation problem with EKM
// preferences, built on the dual (Lagrange multiplier) solution of the
// one-period problem in the abstract uniform market.
//
// Value functions are concave, increasing and piecewise linear on a wealth
// grid, -inf below the first node and constant above the last, and are
// stored as ell = -log(-v). Every optimal payoff takes values in the grid,
// so simulated wealth never leaves it.

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pensionlab/actuarial.hpp"
#include "pensionlab/market.hpp"
#include "pensionlab/numerics.hpp"
#include "pensionlab/preferences.hpp"

namespace pensionlab {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class WealthGrid {
 public:
  WealthGrid() = default;
  explicit WealthGrid(std::vector<double> points);

  /// n geometrically spaced points from x_min to x_max inclusive.
  static WealthGrid geometric(double x_min, double x_max, std::size_t n);

  /// Inserts the geometric midpoint of every cell (n -> 2n - 1 points).
  WealthGrid refined() const;

  std::size_t size() const { return points_.size(); }
  double operator[](std::size_t i) const { return points_[i]; }
  double front() const { return points_.front(); }
  double back() const { return points_.back(); }
  const std::vector<double>& points() const { return points_; }

  bool is_subset_of(const WealthGrid& finer) const;
  std::optional<std::size_t> index_of(double x) const;
  /// Largest node <= w, or nullopt below the grid.
  std::optional<std::size_t> snap_down(double w) const;

  bool operator==(const WealthGrid&) const = default;

 private:
  std::vector<double> points_;
};

/// Grid construction rule: geometric on [x_min_factor * a, max(x_max_floor,
/// x_max_wealth_multiple * w0)], refined by inserting geometric midpoints.
struct GridSpec {
  std::size_t base_size = 128;
  int refinements = 4;
  double x_min_factor = 1e-3;
  double x_max_floor = 50.0;
  double x_max_wealth_multiple = 20.0;

  WealthGrid base_grid(double adequacy, double initial_wealth) const;
  std::vector<WealthGrid> schedule(double adequacy, double initial_wealth) const;
};

class PiecewiseConcaveValue {
 public:
  PiecewiseConcaveValue() = default;
  PiecewiseConcaveValue(WealthGrid grid, std::vector<double> ell);

  const WealthGrid& grid() const { return grid_; }
  const std::vector<double>& ell() const { return ell_; }
  std::size_t size() const { return ell_.size(); }

  /// Monotonicity and concavity violations beyond a relative ell tolerance.
  std::vector<std::string> invariant_violations(double ell_tol = 1e-9) const;

  bool operator==(const PiecewiseConcaveValue&) const = default;

 private:
  WealthGrid grid_;
  std::vector<double> ell_;
};

/// Terminal layer: consume everything, ell = alpha u(x) dt.
PiecewiseConcaveValue terminal_layer(const WealthGrid& grid, const EkmParams& p, double dt);

/// log p_i for i = 0..N (0 -> +inf, N -> -inf); interior entries are log
/// chord slopes of v between nodes i and i+1 (1-based nodes).
std::vector<double> dual_breakpoints(const PiecewiseConcaveValue& v);

/// Interpolates linearly in v (not in ell); -inf below the grid, constant above.
double value_at(const PiecewiseConcaveValue& v, double w);

/// Optimal decision at one budget node.
///
/// The payoff pays continuation node j when U lies in (U_{j-1}, U_j] for j in
/// [i_min, i_max], with U_{i_min - 1} = 0 and U_{i_max} = 1. `breakpoints`
/// holds L(U_j) for j in [i_min, i_max).
struct NodeDecision {
  double budget = 0.0;
  double log_eta = 0.0;
  double log_c = 0.0;
  double ell = 0.0;
  double residual = 0.0;  // log w^eta - log budget at the accepted root
  std::size_t i_min = 0;
  std::size_t i_max = 0;
  std::vector<double> breakpoints;
  bool terminal = false;    // consume everything, no continuation
  bool infeasible = false;  // budget at or below the minimum, ell = -inf
  bool mixed = false;       // driftless market: two-point mixture at a slope tie
  bool pure = false;        // riskless payoff at node i_min
  // Exact multiplier coordinates: log eta = eta_shift + eta_delta; mixtures
  // blend eta_delta and mix_delta_hi with weight mix_theta. Enough to replay
  // the decision bitwise from the continuation value.
  double eta_shift = 0.0;
  double eta_delta = 0.0;
  double mix_delta_hi = 0.0;
  double mix_theta = 0.0;

  /// Continuation node for a draw with L(U) = L_u.
  std::size_t next_node(double L_u) const;
  /// log of the physical-measure probability mass on continuation node j.
  double log_mass(std::size_t j) const;
};

struct PeriodPolicy {
  double survival = 1.0;
  std::vector<NodeDecision> nodes;
};

struct SolverOptions {
  double truncation_scale = 1e-10;  // epsilon = scale / max|v(x_i)|
  double residual_tol = 1e-10;      // accepted |log w^eta - log w|
  double target_residual = 1e-13;   // early stop for bisection
  double cold_half_width = 40.0;    // initial log eta bracket [-40, 40]
  double warm_half_width = 1.0;
  int max_expansions = 60;
  std::size_t chunk_size = 64;      // budgets per warm-started chunk
  unsigned workers = 0;             // 0 = hardware concurrency
};

/// Candidate solution at log eta = shift + delta. The split lets the root be
/// resolved far below the spacing of doubles near log eta, which can reach
/// ~1e7 at the bottom of the grid.
struct EtaEvaluation {
  double shift = 0.0;
  double delta = 0.0;
  double log_eta = 0.0;  // shift + delta, rounded
  double log_w = 0.0;
  double log_c = 0.0;
  double A = 0.0;
  double ell = 0.0;
  std::size_t i_min = 0;
  std::size_t i_max = 0;
  std::vector<double> LU;  // L(U_j), j in [i_min, i_max)
  std::vector<double> LQ;  // L(Q_j), same range
};

/// One-period problem against a fixed continuation value.
class OnePeriodProblem {
 public:
  OnePeriodProblem(const PiecewiseConcaveValue& next, double survival,
                   const MarketParams& m, const EkmParams& p,
                   const SolverOptions& options = {});

  /// Candidate solution for a given log eta.
  EtaEvaluation evaluate(double log_eta) const { return evaluate(0.0, log_eta); }
  EtaEvaluation evaluate(double shift, double delta) const;
  /// Driftless market only: blend of the step payoffs at two adjacent eta
  /// values, theta in [0, 1] weighting the larger one.
  EtaEvaluation evaluate_mixture(double shift, double delta_lo, double delta_hi,
                                 double theta) const;

  /// log of the smallest budget with a finite value (s e^{-r dt} x_first).
  double log_min_budget() const { return log_min_budget_; }
  double log_epsilon() const { return log_eps_; }

  /// Solves w^eta = budget; warm-starts from `hint` when given.
  NodeDecision solve(double budget, std::optional<double> hint = std::nullopt) const;
  /// Rebuilds a decision from its budget, kind flags and multiplier
  /// coordinates; reproduces `solve` output bitwise.
  NodeDecision replay(const NodeDecision& key) const;

 private:
  void evaluate_into(double shift, double delta, EtaEvaluation& out) const;
  void finish(EtaEvaluation& out) const;
  void complete(EtaEvaluation& out, double a_rel, double log_pay) const;
  double d_at(std::size_t j, double shift, double delta) const;
  double LU_at(std::size_t j, double shift, double delta) const;
  numerics::Bracket root_bracket(double log_b, double shift, double lo, double hi,
                                 double tol, int expansions) const;
  std::optional<NodeDecision> root_in(double budget, double lo, double hi, int expansions,
                                      std::string* failure) const;
  double pure_value(std::size_t k, double budget) const;
  NodeDecision pure_decision(std::size_t k, double budget) const;
  double centre(std::size_t j) const;
  NodeDecision decision_from(const EtaEvaluation& e, double budget) const;
  NodeDecision terminal_decision(double budget) const;
  NodeDecision infeasible_decision(double budget) const;

  PiecewiseConcaveValue next_;
  double survival_;
  double M_;
  double r_dt_;
  double dt_;
  double log_survival_;
  double log_death_;
  EkmParams prefs_;
  PowerUtilityFamily family_;
  SolverOptions options_;
  std::vector<double> log_x_;
  std::vector<double> ell_;
  // log chord slope between nodes j and j+1 is -ell_[j] + lambda_[j]
  std::vector<double> lambda_;
  std::vector<double> log_cost_;  // log price of holding node j surely
  std::vector<double> log_hold_;  // A for a sure payoff at node j
  double log_eps_;
  double L_eps_;
  double log_min_budget_;
};

struct StepResult {
  PiecewiseConcaveValue value;
  PeriodPolicy policy;
};

StepResult one_period_step(const PiecewiseConcaveValue& next, double survival,
                           const MarketParams& m, const EkmParams& p,
                           const WealthGrid& budget_grid, const SolverOptions& options = {});

/// Solved decumulation problem on one grid: value layers and decisions per
/// retirement year, index 0 being the retirement age.
struct PolicyTable {
  MarketParams market;
  EkmParams prefs;
  MortalityTable mortality = default_mortality();
  WealthGrid grid;
  std::vector<PiecewiseConcaveValue> values;
  std::vector<PeriodPolicy> periods;
  double initial_wealth = 0.0;

  std::size_t horizon() const { return values.size(); }
  /// Invariant violations across every layer and decision.
  std::vector<std::string> validate(double ell_tol = 1e-9) const;
};

struct RefinementRecord {
  std::size_t grid_size = 0;
  /// max over shared finite nodes and layers of |v_new - v_old| / |v_old|;
  /// zero for the first grid.
  double max_rel_change = 0.0;
  /// Same maximum restricted to the retirement-date layer.
  double max_rel_change_initial = 0.0;
  /// min over shared nodes of (ell_new - ell_old); >= 0 up to rounding.
  double min_ell_increase = 0.0;
  /// Retirement-date ell at every node of this grid.
  std::vector<double> initial_ell;
  /// All layers, kept for convergence checks.
  std::vector<PiecewiseConcaveValue> values;
};

struct SolveResult {
  PolicyTable policy;
  std::vector<RefinementRecord> refinements;
  std::size_t invariant_violations = 0;
};

/// Policy table for one grid.
PolicyTable solve_on_grid(const WealthGrid& grid, const MortalityTable& table,
                          const MarketParams& m, const EkmParams& p,
                          const SolverOptions& options = {});

/// Runs the solver on each grid of a nested schedule; returns the finest
/// policy and per-refinement convergence records. When `stop_rel_change` is
/// positive, stops early once the change between consecutive grids falls
/// below it.
SolveResult solve_decumulation(const std::vector<WealthGrid>& schedule,
                               const MortalityTable& table, const MarketParams& m,
                               const EkmParams& p, const SolverOptions& options = {},
                               double stop_rel_change = 0.0);

}  // namespace pensionlab
