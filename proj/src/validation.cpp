#include "pensionlab/validation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "pensionlab/numerics.hpp"
#include "pensionlab/oracles.hpp"

namespace pensionlab::validation {

using nlohmann::json;
using numerics::kInf;

namespace {

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

Check make(std::string name, double measured, double tolerance, std::string detail, bool pass) {
  Check c;
  c.name = std::move(name);
  c.measured = measured;
  c.tolerance = tolerance;
  c.detail = std::move(detail);
  c.pass = pass;
  return c;
}

// Q and 1 - Q at a breakpoint given as L(U), each accurate in its own tail.
struct TailPair {
  double q, qbar;
  bool upper;
};

TailPair q_at(double LU, double M) {
  if (LU <= 0.0) {
    const double u = 0.5 * std::exp(LU);
    const double q = numerics::norm_cdf(M + numerics::norm_quantile(u));
    return {q, 1.0 - q, false};
  }
  const double ubar = 0.5 * std::exp(-LU);
  const double qbar = ubar > 0.0 ? numerics::norm_cdf(-M + numerics::norm_quantile(ubar)) : 0.0;
  return {1.0 - qbar, qbar, true};
}

double dq(const TailPair& lo, const TailPair& hi) {
  return lo.upper && hi.upper ? lo.qbar - hi.qbar : hi.q - lo.q;
}

}  // namespace

json Check::to_json() const {
  return {{"check", name},
          {"status", pass ? "PASS" : "FAIL"},
          {"measured", measured},
          {"tolerance", tolerance},
          {"detail", detail}};
}

bool all_pass(const std::vector<Check>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

Check oracle_equivalence(const MarketParams& market, const EkmParams& p, const GridSpec& spec,
                         double initial_wealth, const OracleSettings& s, const SolverOptions& options) {
  MarketParams m = market;
  m.mu = m.r;
  const auto grid = WealthGrid::geometric(spec.x_min_factor * p.a,
                                          std::max(spec.x_max_floor, spec.x_max_wealth_multiple * initial_wealth),
                                          s.grid_size);
  std::vector<double> q(s.horizon, 0.0);
  q.back() = 1.0;
  const MortalityTable certain(65, q);
  const PolicyTable pol = solve_on_grid(grid, certain, m, p, options);
  const auto brute = oracles::brute_force_layers(grid, s.horizon, 1.0, m.r * m.dt, p, m.dt, s.n_points);
  double worst = 0.0, worst_pure = 0.0;
  std::size_t mismatched_inf = 0;
  for (std::size_t t = 0; t < s.horizon; ++t)
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double a = pol.values[t].ell()[i], b = brute[t][i];
      if (a == -kInf || b == -kInf) {
        mismatched_inf += (a == -kInf) != (b == -kInf);
        continue;
      }
      worst = std::max(worst, std::fabs(a - b) / std::max(1.0, std::fabs(b)));
      if (b != 0.0) worst_pure = std::max(worst_pure, std::fabs(a - b) / std::fabs(b));
    }
  const bool pass = worst <= s.tolerance && mismatched_inf == 0;
  return make("oracle_equivalence", worst, s.tolerance,
              "driftless, certain survival, horizons 1-" + std::to_string(s.horizon) + ", N=" +
                  std::to_string(grid.size()) + ", " + std::to_string(s.n_points) +
                  " points/stage: max |d ell|/max(1,|ell|) = " + fmt("%.3e", worst) +
                  " (pure relative " + fmt("%.3e", worst_pure) + ", finiteness mismatches " +
                  std::to_string(mismatched_inf) + ")",
              pass);
}

Check budget_identity(const PolicyTable& policy, double tolerance) {
  const double M = policy.market.price_of_risk_scale();
  const double disc = std::exp(-policy.market.r * policy.market.dt);
  double worst = 0.0;
  std::size_t checked = 0, worst_t = 0, worst_i = 0;
  for (std::size_t t = 0; t < policy.periods.size(); ++t) {
    const auto& period = policy.periods[t];
    for (std::size_t i = 0; i < period.nodes.size(); ++i) {
      const auto& d = period.nodes[i];
      if (d.infeasible) continue;
      long double payoff = 0.0L;
      if (!d.terminal) {
        TailPair lo{0.0, 1.0, false};
        for (std::size_t j = d.i_min; j <= d.i_max; ++j) {
          const TailPair hi = j == d.i_max ? TailPair{1.0, 0.0, true} : q_at(d.breakpoints[j - d.i_min], M);
          payoff += static_cast<long double>(policy.grid[j]) * dq(lo, hi);
          lo = hi;
        }
      }
      const long double spent = std::exp(static_cast<long double>(d.log_c)) +
                                static_cast<long double>(period.survival * disc) * payoff;
      const double rel = static_cast<double>(std::fabs(spent / d.budget - 1.0L));
      ++checked;
      if (!(rel <= worst)) {
        worst = rel;
        worst_t = t;
        worst_i = i;
      }
    }
  }
  return make("budget_identity", worst, tolerance,
              std::to_string(checked) + " decisions: max relative budget error " + fmt("%.3e", worst) +
                  " (year " + std::to_string(worst_t) + ", node " + std::to_string(worst_i) + ")",
              worst <= tolerance);
}

Check value_invariants(const PolicyTable& policy) {
  const auto v = policy.validate();
  std::string detail = std::to_string(policy.values.size()) + " layers x " +
                       std::to_string(policy.grid.size()) + " nodes: " + std::to_string(v.size()) +
                       " violations";
  if (!v.empty()) detail += " (first: " + v.front() + ")";
  return make("concavity_monotonicity", static_cast<double>(v.size()), 0.0, detail, v.empty());
}

Check kernel_identities(const MarketParams& m, std::size_t draws, std::uint64_t seed, double se_factor) {
  // integral over u of q(u) as an integral over z with u = Phi(z); Simpson
  const double lo = -16.0, hi = 16.0;
  const std::size_t n = 32000;
  const double h = (hi - lo) / static_cast<double>(n);
  auto f = [&](double z) {
    const double lk = kernel_log(numerics::norm_cdf(z), m);
    return std::exp(lk - 0.5 * z * z) / std::sqrt(2.0 * M_PI);
  };
  long double acc = f(lo) + f(hi);
  for (std::size_t k = 1; k < n; ++k) acc += (k % 2 ? 4.0L : 2.0L) * f(lo + h * static_cast<double>(k));
  const double integral = static_cast<double>(acc * h / 3.0L);
  const double quad_err = std::fabs(integral - 1.0);
  const double quad_tol = 1e-9;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  long double sum = 0.0L, sum2 = 0.0L;
  for (std::size_t k = 0; k < draws; ++k) {
    const double q = std::exp(kernel_log(shock_to_uniform(normal(rng), m), m));
    sum += q;
    sum2 += static_cast<long double>(q) * q;
  }
  const double mean = static_cast<double>(sum / draws);
  const double var = static_cast<double>((sum2 - sum * sum / draws) / (draws - 1));
  const double se = std::sqrt(std::max(var, 0.0) / static_cast<double>(draws));
  const double z = se > 0.0 ? std::fabs(mean - 1.0) / se : (mean == 1.0 ? 0.0 : kInf);
  const bool pass = quad_err <= quad_tol && std::fabs(mean - 1.0) <= se_factor * se + 1e-12;
  return make("kernel_identities", z, se_factor,
              "quadrature |int q - 1| = " + fmt("%.3e", quad_err) + " (tol " + fmt("%.0e", quad_tol) +
                  "); MC mean " + fmt("%.6f", mean) + " over " + std::to_string(draws) + " draws, " +
                  fmt("%.2f", z) + " SE from 1 (tol " + fmt("%g", se_factor) + ")",
              pass);
}

Check truncation_insensitivity(const WealthGrid& grid, const MortalityTable& table, const MarketParams& m,
                               const EkmParams& p, const SolverOptions& options, double tolerance) {
  SolverOptions fine = options;
  fine.truncation_scale = options.truncation_scale / 100.0;
  const PolicyTable a = solve_on_grid(grid, table, m, p, options);
  const PolicyTable b = solve_on_grid(grid, table, m, p, fine);
  double worst = 0.0;
  for (std::size_t t = 0; t < a.values.size(); ++t)
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double x = a.values[t].ell()[i], y = b.values[t].ell()[i];
      if (x == -kInf && y == -kInf) continue;
      worst = std::max(worst, std::fabs(std::expm1(x - y)));
    }
  double eps_lo = kInf, eps_hi = -kInf;  // log10 epsilon range over periods
  for (std::size_t t = 0; t + 1 < a.values.size(); ++t) {
    const double le = OnePeriodProblem(a.values[t + 1], table.survival(t), m, p, options).log_epsilon() / std::log(10.0);
    eps_lo = std::min(eps_lo, le);
    eps_hi = std::max(eps_hi, le);
  }
  return make("truncation_insensitivity", worst, tolerance,
              "N=" + std::to_string(grid.size()) + ", x_min=" + fmt("%.4g", grid.front()) +
                  ": max |dv|/|v| between eps and eps/100 = " + fmt("%.3e", worst) + "; log10 eps in [" +
                  fmt("%.4g", eps_lo) + ", " + fmt("%.4g", eps_hi) + "]",
              worst < tolerance);
}

Check refinement_convergence(const SolveResult& solved, double adequacy, double tolerance) {
  const auto& recs = solved.refinements;
  if (recs.size() < 2)
    return make("refinement_convergence", kInf, tolerance, "needs at least two grids", false);
  double worst_drop = 0.0;  // largest relative decrease of ell
  for (std::size_t k = 1; k < recs.size(); ++k)
    for (std::size_t t = 0; t < recs[k].values.size(); ++t) {
      const auto& o = recs[k - 1].values[t];
      const auto& n = recs[k].values[t];
      for (std::size_t i = 0; i < o.size(); ++i) {
        const auto j = n.grid().index_of(o.grid()[i]);
        if (!j || o.ell()[i] == -kInf) continue;
        const double drop = (o.ell()[i] - n.ell()[*j]) / std::max(1.0, std::fabs(o.ell()[i]));
        worst_drop = std::max(worst_drop, drop);
      }
    }
  // per step: max |dv|/|v| over shared nodes with w >= a, all layers
  std::vector<double> steps;
  std::size_t where_t = 0;
  double where_w = 0.0;
  for (std::size_t k = 1; k < recs.size(); ++k) {
    double worst = 0.0;
    for (std::size_t t = 0; t < recs[k].values.size(); ++t) {
      const auto& o = recs[k - 1].values[t];
      const auto& n = recs[k].values[t];
      for (std::size_t i = 0; i < o.size(); ++i) {
        const double w = o.grid()[i];
        const auto j = n.grid().index_of(w);
        if (w < adequacy || !j) continue;
        const double d = std::fabs(std::expm1(n.ell()[*j] - o.ell()[i]));
        if (d > worst) {
          worst = d;
          if (k + 1 == recs.size()) {
            where_t = t;
            where_w = w;
          }
        }
      }
    }
    steps.push_back(worst);
  }
  const double last = steps.back();
  const double drop_tol = 1e-9;
  std::string sizes, changes;
  for (const auto& r : recs) sizes += (sizes.empty() ? "" : "->") + std::to_string(r.grid_size);
  for (double c : steps) changes += (changes.empty() ? "" : ", ") + fmt("%.3e", c);
  return make("refinement_convergence", last, tolerance,
              "grids " + sizes + ": largest relative ell decrease " + fmt("%.3e", worst_drop) + " (tol " +
                  fmt("%.0e", drop_tol) + "); max |dv|/|v| for w >= a per step: " + changes +
                  "; last step worst at year " + std::to_string(where_t) + ", w=" + fmt("%.4g", where_w),
              worst_drop <= drop_tol && last < tolerance);
}

McResult monte_carlo_checks(const PolicyTable& policy, double w0, std::size_t n_scenarios, std::uint64_t seed,
                            double se_factor, unsigned workers) {
  McResult out;
  const ScenarioBatch batch(n_scenarios, seed);
  const auto sim = simulate_decumulation(policy, batch, w0, workers);
  out.start_wealth = sim.snapped_wealth;
  out.solver_ell = policy.values.front().ell()[sim.start_node];
  out.policy_gain = estimate_gain(sim.consumption, policy.mortality, policy.prefs, policy.market.dt);
  const GainEstimate& g = out.policy_gain;
  const double v_ratio = std::fabs(std::expm1(-out.solver_ell - g.log_neg_gain));  // |U - v| / |U|
  const double in_se = g.se_rel > 0.0 ? v_ratio / g.se_rel : kInf;
  const std::string ps = "alpha=" + fmt("%g", policy.prefs.alpha) + " rho=" + fmt("%g", policy.prefs.rho) +
                         " a=" + fmt("%g", policy.prefs.a);
  out.self_consistency =
      make("mc_self_consistency", in_se, se_factor,
           ps + ", w0=" + fmt("%.6g", out.start_wealth) + ", " + std::to_string(n_scenarios) +
               " scenarios: |U_mc - v| = " + fmt("%.3f", in_se) + " SE (solver ell " + fmt("%.10g", out.solver_ell) +
               ", MC L " + fmt("%.10g", g.log_neg_gain) + ")",
           !g.degenerate && v_ratio <= se_factor * g.se_rel);

  // hand strategy h passes when U_h <= v + k SE_h, i.e. -ell <= L_h + log1p(k se_rel_h)
  double worst_margin = -kInf;
  std::string worst_name;
  bool pass = true;
  for (const auto& s : benchmark_strategies()) {
    const auto c = simulate_fixed_strategy(s, policy.mortality, policy.market, batch, out.start_wealth, workers);
    const auto gh = estimate_gain(c, policy.mortality, policy.prefs, policy.market.dt);
    const double margin = gh.degenerate ? -kInf : -out.solver_ell - gh.log_neg_gain - std::log1p(se_factor * gh.se_rel);
    if (margin > 0.0) pass = false;
    if (margin > worst_margin) {
      worst_margin = margin;
      worst_name = fmt("%.2f", s.fraction) + "/" + fmt("%.1f", s.pi);
    }
  }
  out.hand_strategies =
      make("hand_strategies", worst_margin, 0.0,
           ps + ": 10 fixed-fraction strategies; best one (fraction/weight " + worst_name +
               ") has log(-U_h(1+" + fmt("%g", se_factor) + "se)) - log(-v) = " + fmt("%.4g", -worst_margin) +
               " (must be >= 0)",
           pass);
  return out;
}

Check identical(const std::string& name, const std::string& a, const std::string& b) {
  std::size_t first = 0;
  while (first < std::min(a.size(), b.size()) && a[first] == b[first]) ++first;
  const bool same = a == b;
  return make(name, same ? 0.0 : 1.0, 0.0,
              same ? std::to_string(a.size()) + " bytes identical"
                   : "differ at byte " + std::to_string(first) + " (sizes " + std::to_string(a.size()) + ", " +
                         std::to_string(b.size()) + ")",
              same);
}

}  // namespace pensionlab::validation
