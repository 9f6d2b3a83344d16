#include <cmath>
#include <random>

#include "doctest.h"
#include "pensionlab/numerics.hpp"
#include "pensionlab/preferences.hpp"

using namespace pensionlab;
using numerics::kInf;

TEST_CASE("period utility") {
  const EkmParams p;
  CHECK(period_utility(0.4, p) == 0.0);
  CHECK(period_utility(0.0, p) == -kInf);
  CHECK(period_utility(0.8, p) == doctest::Approx(2.34375).epsilon(1e-15));
  CHECK(period_utility(1e8, p) == doctest::Approx(3.125).epsilon(1e-12));
  CHECK(period_utility(1e8, p) < 3.125);
  CHECK_THROWS_AS(period_utility(-1.0, p), std::domain_error);
}

TEST_CASE("period utility is increasing and concave") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> c(0.01, 5.0), lam(0.0, 1.0), rho(-2.0, -0.1);
  for (int k = 0; k < 2000; ++k) {
    const EkmParams p{5e-5, rho(rng), 0.4};
    const double c1 = c(rng), c2 = c(rng), l = lam(rng);
    CHECK(period_utility(l * c1 + (1 - l) * c2, p) >= l * period_utility(c1, p) + (1 - l) * period_utility(c2, p) - 1e-12);
    CHECK((period_utility(std::max(c1, c2), p) >= period_utility(std::min(c1, c2), p)));
  }
}

TEST_CASE("parameter validation and box") {
  CHECK_THROWS_AS((EkmParams{0.0, -2, 0.4}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((EkmParams{1e-3, 0.5, 0.4}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((EkmParams{1e-3, -2, 0.0}.validate()), std::invalid_argument);
  const SweepBox box;
  CHECK(box.violations(EkmParams{}).empty());
  const auto v = box.violations(EkmParams{1.0, -2, 0.4});
  REQUIRE(v.size() == 1);
  CHECK(v[0].first == "alpha");
  CHECK(v[0].second.find("[1e-07, 0.01]") != std::string::npos);
  CHECK(box.violations(EkmParams{1.0, -3, 2.0}).size() == 3);
}

TEST_CASE("inverse marginal utility in log form") {
  const EkmParams p;
  CHECK(u_dagger_log(0.0, p) == 0.0);
  CHECK(u_dagger_log(3.0, p) == doctest::Approx(-1.0).epsilon(1e-15));
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> y(-20, 20);
  for (int k = 0; k < 500; ++k) {
    const double yy = y(rng);
    // log u'(c) = (rho - 1) log c
    CHECK((p.rho - 1.0) * u_dagger_log(yy, p) == doctest::Approx(yy).epsilon(1e-12));
  }
  // limits: u^dagger(q) -> inf as q -> 0 and -> 0 as q -> inf
  CHECK(u_dagger_log(-1e6, p) > 1e5);
  CHECK(u_dagger_log(1e6, p) < -1e5);
}

TEST_CASE("power family inverse marginal with a shifted origin") {
  for (double x0 : {0.0, 0.3, -0.2}) {
    const PowerUtilityFamily f{-1.5, -2.0, x0, 0.7};
    for (double y : {-3.0, -0.5, 0.0, 1.0, 4.0}) {
      const double lx = f.log_inverse_marginal(y);
      if (lx == -kInf) {
        // marginal utility at the smallest admissible point is below e^y
        continue;
      }
      const double x = std::exp(lx);
      const double h = 1e-6 * std::max(1.0, x - x0);
      const double du = (f.value(x + h) - f.value(x - h)) / (2 * h);
      CHECK(std::log(du) == doctest::Approx(y).epsilon(1e-6));
    }
  }
  const EkmParams p{1e-3, -2.0, 0.4};
  const auto fam = PowerUtilityFamily::ekm(p, 1.0);
  CHECK(fam.coef * fam.n > 0);
}

namespace {

// direct evaluation of L = log(mean_s sum_t pbar_t exp(-alpha sum_{j<=t} u(C_j)))
long double naive_L(const ConsumptionPaths& paths, const MortalityTable& t, const EkmParams& p) {
  long double total = 0;
  for (std::size_t s = 0; s < paths.n_scenarios; ++s) {
    long double acc = 0, sum = 0;
    for (std::size_t j = 0; j < paths.horizon; ++j) {
      const long double c = paths.at(s, j);
      acc += std::pow(c, static_cast<long double>(p.rho)) / p.rho - std::pow(static_cast<long double>(p.a), static_cast<long double>(p.rho)) / p.rho;
      sum += t.death_weights()[j] * std::exp(-static_cast<long double>(p.alpha) * acc);
    }
    total += sum;
  }
  return std::log(total / paths.n_scenarios);
}

}  // namespace

TEST_CASE("gain estimator") {
  const EkmParams p;
  SUBCASE("consumption at adequacy with a single year") {
    ConsumptionPaths c(1, 1);
    c.at(0, 0) = 0.4;
    const auto g = estimate_gain(c, MortalityTable(65, {1.0}), p);
    CHECK(g.log_neg_gain == 0.0);
    CHECK(g.gain() == -1.0);
  }
  SUBCASE("small instance against direct long double evaluation") {
    const MortalityTable t(65, {0.3, 1.0});
    ConsumptionPaths c(4, 2);
    const double v[8] = {0.1, 0.2, 0.4, 0.4, 0.9, 1.3, 0.05, 2.0};
    for (int i = 0; i < 8; ++i) c.values[i] = v[i];
    const auto g = estimate_gain(c, t, p);
    CHECK(g.log_neg_gain == doctest::Approx(static_cast<double>(naive_L(c, t, p))).epsilon(1e-10));
    // se_rel = sample std / (sqrt(N) mean) of the per-scenario losses
    std::vector<double> e(4);
    for (int s = 0; s < 4; ++s) e[s] = std::exp(scenario_log_loss(c.row(s), t, p, 1.0));
    double mean = 0;
    for (double x : e) mean += x / 4;
    double var = 0;
    for (double x : e) var += (x - mean) * (x - mean) / 3;
    CHECK(g.se_rel == doctest::Approx(std::sqrt(var / 4) / mean).epsilon(1e-10));
  }
  SUBCASE("duplicated scenarios leave L unchanged") {
    const auto& t = default_mortality();
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> d(0.05, 2.0);
    ConsumptionPaths c(10, t.horizon()), c2(20, t.horizon());
    for (auto& x : c.values) x = d(rng);
    for (std::size_t s = 0; s < 20; ++s)
      for (std::size_t j = 0; j < t.horizon(); ++j) c2.at(s, j) = c.at(s % 10, j);
    const EkmParams hi{1e-2, -2, 0.4};
    CHECK(estimate_gain(c2, t, hi).log_neg_gain == doctest::Approx(estimate_gain(c, t, hi).log_neg_gain).epsilon(1e-13));
    CHECK(estimate_gain(c, t, hi).log_neg_gain == doctest::Approx(static_cast<double>(naive_L(c, t, hi))).epsilon(1e-8));
    // more consumption never lowers the gain
    ConsumptionPaths more = c;
    for (auto& x : more.values) x *= 1.1;
    CHECK(estimate_gain(more, t, hi).log_neg_gain <= estimate_gain(c, t, hi).log_neg_gain);
  }
  SUBCASE("zero consumption is flagged") {
    ConsumptionPaths c(2, 2);
    c.values = {0.4, 0.0, 0.4, 0.4};
    const auto g = estimate_gain(c, MortalityTable(65, {0.5, 1.0}), p);
    CHECK(g.degenerate);
    CHECK(g.log_neg_gain == kInf);
  }
  SUBCASE("log domain survives where the naive sum overflows") {
    ConsumptionPaths c(3, 2);
    c.values = {1e-4, 1e-4, 2e-4, 1e-4, 1e-3, 1e-3};
    const EkmParams hi{1e-2, -2, 0.4};
    const auto g = estimate_gain(c, MortalityTable(65, {0.5, 1.0}), hi);
    CHECK(std::isfinite(g.log_neg_gain));
    CHECK(g.log_neg_gain > 1000);
  }
}

TEST_CASE("gain comparison") {
  const GainEstimate a{2.0, 0.01, false};
  CHECK(compare_gains(a, a).pass);
  const double se = a.standard_error();
  const GainEstimate far{std::log(std::exp(2.0) + 10 * se), 0.01, false};
  const auto c = compare_gains(far, a);
  CHECK_FALSE(c.pass);
  CHECK(c.diff_in_se == doctest::Approx(10.0).epsilon(1e-8));
  const GainEstimate close{std::log(std::exp(2.0) + 0.005 * se), 0.01, false};
  CHECK(compare_gains(close, a).pass);
  CHECK_FALSE(compare_gains(close, a, 0.001).pass);
}
