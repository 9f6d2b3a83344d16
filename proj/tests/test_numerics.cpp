#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "pensionlab/numerics.hpp"

using namespace pensionlab::numerics;

TEST_CASE("logsumexp of equal terms") {
  CHECK(logsumexp({0.0, 0.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(logsumexp({1000.0, 1000.0}) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
  CHECK(logsumexp({-kInf, -kInf}) == -kInf);
  CHECK(logsumexp({-kInf, 3.0}) == 3.0);
  CHECK_THROWS_AS(logsumexp(std::span<const double>{}), std::domain_error);
}

TEST_CASE("logsumexp is shift invariant and matches long double") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-30, 30);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> v(1 + k % 9);
    for (auto& x : v) x = d(rng);
    long double ref = 0;
    for (double x : v) ref += std::exp(static_cast<long double>(x));
    const double got = logsumexp(v);
    CHECK(got == doctest::Approx(static_cast<double>(std::log(ref))).epsilon(1e-13));
    const double c = d(rng) * 10;
    std::vector<double> w = v;
    for (auto& x : w) x += c;
    CHECK(logsumexp(w) - c == doctest::Approx(got).epsilon(1e-12));
  }
}

TEST_CASE("log_diff_exp") {
  CHECK(std::fabs(log_diff_exp(std::log(2.0), 0.0)) < 1e-15);
  CHECK(log_diff_exp(4.0, -kInf) == 4.0);
  CHECK(log_diff_exp(1.5, 1.5) == -kInf);
  const long double ref = std::log(std::exp(5.0L) - std::exp(4.999L));
  CHECK(log_diff_exp(5.0, 4.999) == doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));
  // far-apart and nearly equal arguments
  CHECK(log_diff_exp(0.0, -50.0) == doctest::Approx(std::log1p(-std::exp(-50.0))));
  CHECK(log_diff_exp(0.0, -1e-12) == doctest::Approx(std::log(1e-12)).epsilon(1e-9));
}

TEST_CASE("log_squared_diff_exp") {
  const double ref = 2.0 * std::log(std::exp(3.0) - std::exp(1.0));
  CHECK(log_squared_diff_exp(3.0, 1.0) == doctest::Approx(ref).epsilon(1e-14));
  CHECK(ref == doctest::Approx(5.70917).epsilon(1e-5));
  CHECK(log_squared_diff_exp(1.0, 3.0) == log_squared_diff_exp(3.0, 1.0));
  CHECK(log_squared_diff_exp(2.0, 2.0) == -kInf);
}

TEST_CASE("L bijection") {
  CHECK(L_map(0.5) == 0.0);
  CHECK(L_map(0.25) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
  CHECK(L_map(1.0) == kInf);
  CHECK(L_map(0.0) == -kInf);
  CHECK(L_inv(kInf) == 1.0);
  CHECK(L_inv(-kInf) == 0.0);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(1e-9, 1 - 1e-9);
  for (int k = 0; k < 1000; ++k) {
    const double u = d(rng);
    CHECK(L_inv(L_map(u)) == doctest::Approx(u).epsilon(1e-14));
    CHECK(L_map(1.0 - u) == doctest::Approx(-L_map(u)).epsilon(1e-7));
  }
  // tail precision: L keeps u = 1e-300 and 1 - 1e-300 distinct from 0 and 1
  CHECK(std::isfinite(L_map(1e-300)));
  CHECK(L_inv(L_map(1e-300)) == doctest::Approx(1e-300).epsilon(1e-12));
}

TEST_CASE("log_prob_gap and log_prob_from_L") {
  const double lo = L_map(0.2), hi = L_map(0.7);
  CHECK(log_prob_gap(lo, hi) == doctest::Approx(std::log(0.5)).epsilon(1e-13));
  // upper tail gap resolved below double spacing near 1
  const double a = 50.0, b = 51.0;  // u = 1 - e^-a/2 and 1 - e^-b/2
  const double ref = std::log(0.5 * (std::exp(-a) - std::exp(-b)));
  CHECK(log_prob_gap(a, b) == doctest::Approx(ref).epsilon(1e-12));
  CHECK(log_prob_from_L(L_map(0.3)) == doctest::Approx(std::log(0.3)).epsilon(1e-14));
  CHECK(log_prob_from_L(-700.0) == doctest::Approx(-700.0 - std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("normal cdf and quantile") {
  CHECK(norm_cdf(0.0) == 0.5);
  // log Phi(-10) from the asymptotic series
  const double x = 10.0;
  const double series = -x * x / 2 - std::log(x) - 0.5 * std::log(2 * M_PI) +
                        std::log(1 - 1 / (x * x) + 3 / std::pow(x, 4) - 15 / std::pow(x, 6) + 105 / std::pow(x, 8));
  CHECK(log_norm_cdf(-10.0) == doctest::Approx(series).epsilon(1e-6));
  CHECK(log_norm_cdf(-10.0) == doctest::Approx(-53.2312).epsilon(1e-5));
  for (double u : {1e-12, 1e-5, 0.01, 0.3, 0.5, 0.8, 0.999, 1 - 1e-10}) {
    CHECK(norm_cdf(norm_quantile(u)) == doctest::Approx(u).epsilon(1e-12));
  }
  for (double z : {-30.0, -8.0, -1.0, 0.0, 2.0, 7.5, 30.0}) {
    CHECK(norm_quantile_from_L(L_norm_cdf(z)) == doctest::Approx(z).epsilon(1e-10));
  }
  CHECK(L_norm_cdf(30.0) == doctest::Approx(-L_norm_cdf(-30.0)).epsilon(1e-12));
}

TEST_CASE("pairwise_sum") {
  std::vector<double> v(1000, 0.1);
  CHECK(pairwise_sum(v) == doctest::Approx(100.0).epsilon(1e-14));
  CHECK(pairwise_sum(std::span<const double>{}) == 0.0);
}

TEST_CASE("root finding") {
  CHECK(find_root([](double x) { return x - 1.0; }, 0.0, 3.0, 1e-12) == doctest::Approx(1.0).epsilon(1e-11));
  CHECK(find_root([](double x) { return std::exp(x) - 1.0; }, -5.0, 2.0, 1e-12) ==
        doctest::Approx(0.0).epsilon(1e-11));
  // bracket not containing the root is expanded
  const auto b = bisect([](double x) { return x - 100.0; }, 0.0, 1.0);
  CHECK(b.lo <= 100.0);
  CHECK(b.hi >= 100.0);
  const auto il = illinois([](double x) { return std::atan(x - 2.5); }, -10.0, 10.0);
  CHECK(0.5 * (il.lo + il.hi) == doctest::Approx(2.5).epsilon(1e-11));
  BisectionOptions tight;
  tight.max_expansions = 3;
  CHECK_THROWS_AS(bisect([](double x) { return x * x + 1.0; }, -1.0, 1.0, tight), BracketError);
}
