#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "pensionlab/validation.hpp"
#include "test_support.hpp"

using namespace pensionlab;
using testsupport::short_table;
using testsupport::small_inputs;

TEST_CASE("scenario draws are keyed by scenario") {
  const ScenarioBatch a(10, 5), b(1000, 5), c(10, 6);
  std::vector<double> x(7), y(7), z(7);
  a.draws(ScenarioBatch::Phase::decumulation, 3, x);
  b.draws(ScenarioBatch::Phase::decumulation, 3, y);
  c.draws(ScenarioBatch::Phase::decumulation, 3, z);
  CHECK(x == y);
  CHECK(x != z);
  a.draws(ScenarioBatch::Phase::decumulation, 4, z);
  CHECK(x != z);
  a.draws(ScenarioBatch::Phase::accumulation, 3, z);
  CHECK(x != z);
  // standard normal moments
  const ScenarioBatch big(20000, 1);
  double s = 0, s2 = 0;
  std::vector<double> e(5);
  for (std::size_t i = 0; i < big.size(); ++i) {
    big.draws(ScenarioBatch::Phase::benchmark, i, e);
    for (double v : e) s += v, s2 += v * v;
  }
  const double n = 5.0 * big.size();
  CHECK(std::fabs(s / n) < 4 / std::sqrt(n));
  CHECK(std::fabs(s2 / n - 1.0) < 4 * std::sqrt(2.0 / n));
}

TEST_CASE("accumulation") {
  const MarketParams m;
  SUBCASE("risk-free compounding without contributions") {
    AccumulationConfig cfg;
    cfg.start_age = 35;
    cfg.contribution_rate = 0.0;
    cfg.fixed_pi = 0.0;
    cfg.initial_wealth = 1.0;
    const auto r = simulate_accumulation(cfg, 65, m, ScenarioBatch(50, 1));
    for (double w : r.wealth) CHECK(w == doctest::Approx(std::exp(30 * m.r)).epsilon(1e-13));
  }
  SUBCASE("one year, contribution at the start") {
    AccumulationConfig cfg;
    cfg.start_age = 64;
    cfg.contribution_rate = 0.2;
    cfg.fixed_pi = 0.0;
    cfg.initial_wealth = 1.5;
    const auto r = simulate_accumulation(cfg, 65, m, ScenarioBatch(5, 1));
    for (double w : r.wealth) CHECK(w == doctest::Approx((1.5 + 0.2) * std::exp(m.r)).epsilon(1e-14));
  }
  SUBCASE("mean wealth against the lognormal moment formula") {
    AccumulationConfig cfg;
    cfg.start_age = 45;
    cfg.contribution_rate = 0.1;
    cfg.salary_growth = 0.02;
    cfg.fixed_pi = 0.6;
    const std::size_t n = 100000;
    const auto r = simulate_accumulation(cfg, 65, m, ScenarioBatch(n, 3));
    const double g = 0.6 * m.mu + 0.4 * m.r;  // expected log-growth of the mean per year
    double expected = 0;
    for (int t = 0; t < 20; ++t) expected += 0.1 * std::pow(1.02, t - 19) * std::exp(g * (20 - t));
    double s = 0, s2 = 0;
    for (double w : r.wealth) s += w, s2 += w * w;
    const double mean = s / n, se = std::sqrt((s2 / n - mean * mean) / n);
    CHECK(std::fabs(mean - expected) < 4 * se);
    REQUIRE(r.path_deciles.size() == 20);
    for (const auto& d : r.path_deciles)
      for (int k = 1; k < 9; ++k) CHECK(d[k] >= d[k - 1]);
  }
  SUBCASE("invalid settings") {
    AccumulationConfig cfg;
    cfg.contribution_rate = 1.5;
    CHECK_THROWS(cfg.validate(65));
    cfg.contribution_rate = 0.1;
    cfg.start_age = 70;
    CHECK_THROWS(cfg.validate(65));
  }
}

TEST_CASE("decumulation stays on the grid and ends by consuming everything") {
  const auto in = small_inputs();
  const EkmParams p;
  const auto sol = solve_for(p, in);
  const auto& pol = sol->policy;
  const auto run = simulate_for(p, sol, in);
  const auto& c = run.sim.consumption;
  const std::size_t h = pol.horizon();
  CHECK(run.sim.snapped_wealth <= in.initial_wealth);
  CHECK(run.sim.snapped_wealth == pol.grid[run.sim.start_node]);
  for (std::size_t i = 0; i < c.n_scenarios; ++i) {
    for (std::size_t t = 0; t < h; ++t) CHECK(run.sim.nodes[i * h + t] < pol.grid.size());
    // last year: consumption equals the wealth at the occupied node
    CHECK(c.at(i, h - 1) == doctest::Approx(pol.grid[run.sim.nodes[i * h + h - 1]]).epsilon(1e-14));
  }
  CHECK_THROWS_AS(simulate_decumulation(pol, ScenarioBatch(10, 1), pol.grid.front() * 0.5), InfeasibleStartError);
}

TEST_CASE("driftless policy is close to deterministic") {
  auto in = small_inputs();
  in.market.mu = in.market.r;
  const EkmParams p;
  const auto run = solve_and_simulate(p, in);
  const auto& c = run.sim.consumption;
  // first-year consumption is a single decision
  for (std::size_t i = 1; i < c.n_scenarios; ++i) CHECK(c.at(i, 0) == c.at(0, 0));
  // later years randomize only between adjacent grid nodes
  const auto& g = run.solve->policy.grid;
  const double cell = g[1] / g[0];
  for (std::size_t t = 1; t < c.horizon; ++t) {
    double lo = 1e300, hi = 0;
    for (std::size_t i = 0; i < c.n_scenarios; ++i) lo = std::min(lo, c.at(i, t)), hi = std::max(hi, c.at(i, t));
    CHECK(hi / lo <= std::pow(cell, static_cast<double>(t)) * (1 + 1e-9));
  }
}

TEST_CASE("simulated gain agrees with the solver value") {
  const auto in = small_inputs(8, 3.0);
  for (const EkmParams& p : {EkmParams{}, EkmParams{1e-2, -2.0, 0.4}, EkmParams{5e-5, -0.1, 0.4}}) {
    const auto sol = solve_for(p, in);
    const auto mc = validation::monte_carlo_checks(sol->policy, in.initial_wealth, 20000, 7, 3.0, 0);
    CHECK_MESSAGE(mc.self_consistency.pass, mc.self_consistency.detail);
    CHECK_MESSAGE(mc.hand_strategies.pass, mc.hand_strategies.detail);
  }
}

TEST_CASE("worker count does not change simulated paths") {
  const auto in = small_inputs();
  const auto sol = solve_for(EkmParams{}, in);
  const ScenarioBatch b(3000, 9);
  const auto a = simulate_decumulation(sol->policy, b, 3.0, 1);
  const auto c = simulate_decumulation(sol->policy, b, 3.0, 4);
  CHECK(a.consumption.values == c.consumption.values);
  CHECK(a.nodes == c.nodes);
}

TEST_CASE("fan deciles") {
  const auto t = short_table(3);
  const EkmParams p;
  SUBCASE("identical paths") {
    ConsumptionPaths c(12, 3);
    for (std::size_t i = 0; i < 12; ++i) c.at(i, 0) = 0.3, c.at(i, 1) = 0.5, c.at(i, 2) = 0.7;
    const auto f = fan_from_paths(c, t, p);
    for (int k = 0; k < 9; ++k) {
      CHECK(f.deciles[0][k] == 0.3);
      CHECK(f.deciles[2][k] == 0.7);
    }
    CHECK(f.years == std::vector<int>{118, 119, 120});
  }
  SUBCASE("hand-set paths against a sort-based reference") {
    const std::vector<double> col = {0.9, 0.1, 0.5, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 1.0, 0.05};
    ConsumptionPaths c(col.size(), 3);
    for (std::size_t i = 0; i < col.size(); ++i) c.at(i, 0) = c.at(i, 1) = c.at(i, 2) = col[i];
    const auto f = fan_from_paths(c, t, p);
    std::vector<double> s = col;
    std::sort(s.begin(), s.end());
    for (int k = 0; k < 9; ++k) {
      const double h = (s.size() - 1) * 0.1 * (k + 1);
      const std::size_t lo = static_cast<std::size_t>(h);
      const double ref = s[lo] + (h - lo) * (s[lo + 1] - s[lo]);
      CHECK(f.deciles[1][k] == doctest::Approx(ref).epsilon(1e-14));
    }
    CHECK(fan_width(f, 1) == doctest::Approx(f.deciles[1][8] - f.deciles[1][0]));
  }
  SUBCASE("too few scenarios") {
    ConsumptionPaths c(5, 3);
    for (auto& x : c.values) x = 1.0;
    CHECK_THROWS_AS(fan_from_paths(c, t, p), std::invalid_argument);
  }
}

TEST_CASE("strategy at a percentile") {
  const auto in = small_inputs();
  const auto run = solve_and_simulate(EkmParams{}, in);
  const auto& pol = run.solve->policy;
  const auto& c = run.sim.consumption;
  const auto pts = strategy_at_percentile(pol, run.sim, 30);
  REQUIRE(pts.size() == pol.horizon());
  for (std::size_t t = 0; t < c.horizon; ++t) {
    std::vector<double> col(c.n_scenarios);
    for (std::size_t i = 0; i < col.size(); ++i) col[i] = c.at(i, t);
    std::sort(col.begin(), col.end());
    const std::size_t rank = static_cast<std::size_t>(std::ceil(0.3 * col.size())) - 1;
    CHECK(pts[t].consumption == col[rank]);
    CHECK(pts[t].dispersion >= 0.0);
  }
  CHECK(pts.back().dispersion == 0.0);
  // several at once agree with one at a time
  const int ps[2] = {30, 70};
  const auto both = strategy_at_percentiles(pol, run.sim, ps);
  CHECK(both[0][3].consumption == pts[3].consumption);
  CHECK(both[1][3].consumption == strategy_at_percentile(pol, run.sim, 70)[3].consumption);
}

TEST_CASE("fixed-fraction benchmark") {
  const auto t = short_table(4);
  MarketParams m;
  const FixedStrategy s{0.25, 0.0};
  const auto c = simulate_fixed_strategy(s, t, m, ScenarioBatch(3, 1), 2.0);
  // riskless: deterministic recursion with tontine credit
  double w = 2.0;
  for (std::size_t k = 0; k < 4; ++k) {
    const double expect = k == 3 ? w : 0.25 * w;
    CHECK(c.at(1, k) == doctest::Approx(expect).epsilon(1e-13));
    w = 0.75 * w / t.survival(k) * std::exp(m.r);
  }
  CHECK(benchmark_strategies().size() == 10);
}

TEST_CASE("sweep") {
  auto in = small_inputs(6, 2.0);
  in.n_scenarios = 1000;
  const EkmParams p;
  const auto direct = solve_and_simulate(p, in);
  const auto one = sweep({p}, in);
  REQUIRE(one.size() == 1);
  REQUIRE(one[0].output.has_value());
  CHECK(one[0].output->fan.deciles == direct.fan.deciles);
  CHECK(one[0].output->fan.gain.log_neg_gain == direct.fan.gain.log_neg_gain);

  const EkmParams hi{1e-2, -2.0, 0.4}, bad{1.0, -2.0, 0.4};
  const auto many = sweep({hi, p, hi, bad}, in);
  REQUIRE(many.size() == 4);
  CHECK(many[0].output->fan.deciles == many[2].output->fan.deciles);
  CHECK(many[1].output->fan.deciles == direct.fan.deciles);
  CHECK_FALSE(many[3].output.has_value());
  CHECK(many[3].error.find("alpha") != std::string::npos);
}
