#pragma once

// Property checks shared by `pensionlab validate` and the acceptance runner.
// Each check returns a verdict, the measured figure, the tolerance it was
// held to, and a one-line explanation.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "pensionlab/dual_solver.hpp"
#include "pensionlab/simulator.hpp"

namespace pensionlab::validation {

struct Check {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;

  nlohmann::json to_json() const;
};

struct OracleSettings {
  std::size_t grid_size = 512;
  std::size_t horizon = 3;          // horizons 1..horizon are all checked
  std::size_t n_points = 1000000;   // consumption grid per stage
  double tolerance = 1e-6;          // |d ell| / max(1, |ell|)
};

/// Driftless market with certain survival: solver layers against the nested
/// brute-force consumption search. Market sigma and r are taken from `m`.
Check oracle_equivalence(const MarketParams& m, const EkmParams& p, const GridSpec& spec,
                         double initial_wealth, const OracleSettings& s = {},
                         const SolverOptions& options = {});

/// c + s e^{-r dt} sum_j x_j dQ_j = w at every decision, with dQ recomputed
/// from the stored L(U) breakpoints.
Check budget_identity(const PolicyTable& policy, double tolerance = 1e-8);

/// Monotone, concave value layers; sorted breakpoints; consistent ranges.
Check value_invariants(const PolicyTable& policy);

/// Integral of the pricing kernel by quadrature and its mean under P by
/// Monte Carlo.
Check kernel_identities(const MarketParams& m, std::size_t draws = 1000000, std::uint64_t seed = 7,
                        double se_factor = 4.0);

/// Solves on `grid` at truncation scale s and s/100 and compares every layer
/// by |dv|/|v|.
Check truncation_insensitivity(const WealthGrid& grid, const MortalityTable& table,
                               const MarketParams& m, const EkmParams& p,
                               const SolverOptions& options = {}, double tolerance = 1e-6);

/// Refinement never lowers ell at shared nodes (rounding slack 1e-9 relative)
/// and the last step moves v by less than `tolerance` relative for w >= a.
Check refinement_convergence(const SolveResult& solved, double adequacy, double tolerance = 1e-4);

struct McResult {
  Check self_consistency;
  Check hand_strategies;
  GainEstimate policy_gain;
  double solver_ell = 0.0;
  double start_wealth = 0.0;
};

/// Monte Carlo gain of the policy from w0 against the solver value, and the
/// ten fixed-fraction benchmarks started from the same (snapped) wealth.
McResult monte_carlo_checks(const PolicyTable& policy, double w0, std::size_t n_scenarios,
                            std::uint64_t seed, double se_factor = 3.0, unsigned workers = 0);

/// Bitwise comparison of two artifacts.
Check identical(const std::string& name, const std::string& a, const std::string& b);

/// Exit status helper: true when every check passed.
bool all_pass(const std::vector<Check>& checks);

}  // namespace pensionlab::validation
