#include "pensionlab/preferences.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "pensionlab/numerics.hpp"

namespace pensionlab {

using numerics::kInf;

void EkmParams::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw std::invalid_argument("preferences: alpha must be positive");
  if (!(rho < 0.0) || !std::isfinite(rho))
    throw std::invalid_argument("preferences: rho must be negative");
  if (!(a > 0.0) || !std::isfinite(a))
    throw std::invalid_argument("preferences: adequacy level a must be positive");
}

std::vector<std::pair<std::string, std::string>> SweepBox::violations(
    const EkmParams& p) const {
  std::vector<std::pair<std::string, std::string>> out;
  auto check = [&](const char* name, double v, double lo, double hi) {
    if (!(v >= lo && v <= hi)) {
      std::ostringstream msg;
      msg << name << " = " << v << " outside allowed range [" << lo << ", " << hi << "]";
      out.emplace_back(name, msg.str());
    }
  };
  check("alpha", p.alpha, alpha_min, alpha_max);
  check("rho", p.rho, rho_min, rho_max);
  check("a", p.a, a_min, a_max);
  return out;
}

double period_utility(double c, const EkmParams& p) {
  if (c < 0.0 || std::isnan(c)) throw std::domain_error("period_utility: negative consumption");
  if (c == 0.0) return -kInf;
  return (std::pow(c, p.rho) - std::pow(p.a, p.rho)) / p.rho;
}

double u_dagger_log(double y, const EkmParams& p) { return y / (p.rho - 1.0); }

PowerUtilityFamily PowerUtilityFamily::ekm(const EkmParams& p, double scale) {
  return {scale / p.rho, p.rho, 0.0, -scale * std::pow(p.a, p.rho) / p.rho};
}

double PowerUtilityFamily::value(double x) const {
  if (x < x0) return -kInf;
  if (x == x0 && n < 0.0) return -kInf;
  return coef * std::pow(x - x0, n) + b;
}

double PowerUtilityFamily::log_inverse_marginal(double y) const {
  const double base = (y - std::log(coef * n)) / (n - 1.0);
  if (x0 == 0.0) return base;
  if (x0 > 0.0) return numerics::logsumexp({base, std::log(x0)});
  const double lx = std::log(-x0);
  if (base > lx) return numerics::log_diff_exp(base, lx);
  return -kInf;
}

double GainEstimate::gain() const { return -std::exp(log_neg_gain); }

double GainEstimate::standard_error() const { return se_rel * std::exp(log_neg_gain); }

double scenario_log_loss(std::span<const double> consumption, const MortalityTable& table,
                         const EkmParams& p, double dt) {
  const auto& pbar = table.death_weights();
  const std::size_t h = std::min(consumption.size(), pbar.size());
  std::vector<double> terms;
  terms.reserve(h);
  double cumulative = 0.0;
  for (std::size_t t = 0; t < h; ++t) {
    const double c = consumption[t];
    cumulative += c > 0.0 ? period_utility(c, p) : -kInf;
    if (pbar[t] <= 0.0) continue;
    terms.push_back(std::log(pbar[t]) - p.alpha * cumulative * dt);
  }
  if (terms.empty()) return -kInf;
  return numerics::logsumexp(terms);
}

GainEstimate gain_from_log_losses(std::span<const double> v) {
  if (v.empty()) throw std::domain_error("estimate_gain: no scenarios");
  GainEstimate g;
  const double n = static_cast<double>(v.size());
  const double m = *std::max_element(v.begin(), v.end());
  if (m == kInf) {
    g.log_neg_gain = kInf;
    g.se_rel = kInf;
    g.degenerate = true;
    return g;
  }
  std::vector<double> scaled(v.size());
  for (std::size_t s = 0; s < v.size(); ++s) scaled[s] = std::exp(v[s] - m);
  g.log_neg_gain = m + std::log(numerics::pairwise_sum(scaled)) - std::log(n);
  if (v.size() < 2) {
    g.se_rel = 0.0;
    return g;
  }
  for (std::size_t s = 0; s < v.size(); ++s) {
    const double d = std::expm1(v[s] - g.log_neg_gain);
    scaled[s] = d * d;
  }
  const double var_rel = numerics::pairwise_sum(scaled) / (n - 1.0);
  g.se_rel = std::sqrt(var_rel / n);
  return g;
}

GainEstimate estimate_gain(const ConsumptionPaths& paths, const MortalityTable& table,
                           const EkmParams& p, double dt) {
  if (paths.n_scenarios == 0) throw std::domain_error("estimate_gain: no scenarios");
  std::vector<double> v(paths.n_scenarios);
  for (std::size_t s = 0; s < paths.n_scenarios; ++s)
    v[s] = scenario_log_loss(paths.row(s), table, p, dt);
  return gain_from_log_losses(v);
}

GainComparison compare_gains(const GainEstimate& a, const GainEstimate& b, double factor) {
  GainComparison out;
  const double hi = std::max(a.log_neg_gain, b.log_neg_gain);
  const double lo = std::min(a.log_neg_gain, b.log_neg_gain);
  const double log_diff = numerics::log_diff_exp(hi, lo);
  const double log_se = b.log_neg_gain + std::log(b.se_rel);
  const double log_thr = std::log(factor) + log_se;
  out.abs_diff = std::exp(log_diff);
  out.threshold = std::exp(log_thr);
  out.diff_in_se = std::exp(log_diff - log_se);
  out.pass = log_diff <= log_thr;
  return out;
}

}  // namespace pensionlab
