#pragma once

// Exponential Kihlstrom-Mirman preferences: the gain of a consumption stream
// C is E[-exp(-alpha * sum_t u(C_t) dt)] with period utility
// u(c) = c^rho/rho - a^rho/rho.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pensionlab/actuarial.hpp"

namespace pensionlab {

struct EkmParams {
  double alpha = 5e-5;  // risk aversion
  double rho = -2.0;    // satiation
  double a = 0.4;       // adequacy level, final-salary units

  /// alpha > 0, rho < 0, a > 0; throws std::invalid_argument otherwise.
  void validate() const;
  bool operator==(const EkmParams&) const = default;
};

/// Bounds of the parameter box explored by sweeps and the service.
struct SweepBox {
  double alpha_min = 1e-7, alpha_max = 1e-2;
  double rho_min = -2.0, rho_max = -0.1;
  double a_min = 0.1, a_max = 1.0;

  /// Empty when inside; otherwise one message per offending field.
  std::vector<std::pair<std::string, std::string>> violations(const EkmParams& p) const;
};

/// u(c) = c^rho/rho - a^rho/rho; -inf at c = 0. Throws std::domain_error for c < 0.
double period_utility(double c, const EkmParams& p);

/// log u^dagger(e^y) for the unscaled period utility: y / (rho - 1).
double u_dagger_log(double y, const EkmParams& p);

/// u(x) = coef (x - x0)^n + b on x >= x0 (and -inf below), with coef * n > 0.
/// The solver works with the alpha-scaled EKM member coef = alpha/rho, n = rho.
struct PowerUtilityFamily {
  double coef = 1.0;
  double n = -2.0;
  double x0 = 0.0;
  double b = 0.0;

  static PowerUtilityFamily ekm(const EkmParams& p, double scale);

  double value(double x) const;
  /// log of the inverse marginal utility at e^y.
  double log_inverse_marginal(double y) const;
};

/// Row-major N x horizon consumption amounts (salary units).
struct ConsumptionPaths {
  std::size_t n_scenarios = 0;
  std::size_t horizon = 0;
  std::vector<double> values;

  ConsumptionPaths() = default;
  ConsumptionPaths(std::size_t n, std::size_t h) : n_scenarios(n), horizon(h), values(n * h) {}
  double& at(std::size_t s, std::size_t t) { return values[s * horizon + t]; }
  double at(std::size_t s, std::size_t t) const { return values[s * horizon + t]; }
  std::span<const double> row(std::size_t s) const {
    return std::span<const double>(values).subspan(s * horizon, horizon);
  }
};

/// Gain estimate as L = log(-U_hat), plus the relative standard error of the
/// sample mean behind it.
struct GainEstimate {
  double log_neg_gain = 0.0;
  double se_rel = 0.0;
  bool degenerate = false;  // some consumption was <= 0, so L = +inf

  double gain() const;            // U_hat = -exp(L)
  double standard_error() const;  // SE of U_hat in raw units
};

/// Per-scenario log of sum_t pbar_t exp(-alpha sum_{j<=t} u(C_j) dt).
double scenario_log_loss(std::span<const double> consumption, const MortalityTable& table,
                         const EkmParams& p, double dt);

GainEstimate estimate_gain(const ConsumptionPaths& paths, const MortalityTable& table,
                           const EkmParams& p, double dt = 1.0);

/// Gain estimate from per-scenario log losses.
GainEstimate gain_from_log_losses(std::span<const double> log_losses);

struct GainComparison {
  bool pass = false;
  double abs_diff = 0.0;       // |U_A - U_B|
  double threshold = 0.0;      // factor * SE(U_B)
  double diff_in_se = 0.0;     // |U_A - U_B| / SE(U_B)
};

/// Pass when |U_A - U_B| <= factor * SE(U_B), evaluated in log space.
GainComparison compare_gains(const GainEstimate& a, const GainEstimate& b,
                             double factor = 0.01);

}  // namespace pensionlab
