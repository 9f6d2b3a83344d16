#include "pensionlab/market.hpp"

#include <cmath>
#include <stdexcept>

#include "pensionlab/numerics.hpp"

namespace pensionlab {

using numerics::kInf;

double MarketParams::price_of_risk_scale() const {
  return std::fabs(mu - r) * std::sqrt(dt) / sigma;
}

void MarketParams::validate() const {
  if (!(sigma > 0.0)) throw std::invalid_argument("market: sigma must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("market: dt must be positive");
  if (!std::isfinite(mu) || !std::isfinite(r))
    throw std::invalid_argument("market: mu and r must be finite");
}

double big_Q(double z, const MarketParams& m) {
  if (!(z >= 0.0 && z <= 1.0)) throw std::domain_error("big_Q: z outside [0,1]");
  const double M = m.price_of_risk_scale();
  if (M == 0.0 || z == 0.0 || z == 1.0) return z;
  return numerics::norm_cdf(M + numerics::norm_quantile(z));
}

double big_Q_L(double L_z, const MarketParams& m) {
  const double M = m.price_of_risk_scale();
  if (M == 0.0 || std::isinf(L_z)) return L_z;
  return numerics::L_norm_cdf(M + numerics::norm_quantile_from_L(L_z));
}

double kernel_log(double u, const MarketParams& m) {
  if (!(u >= 0.0 && u <= 1.0)) throw std::domain_error("kernel_log: u outside [0,1]");
  const double M = m.price_of_risk_scale();
  if (M == 0.0) return 0.0;
  if (u == 0.0) return kInf;
  if (u == 1.0) return -kInf;
  return -0.5 * M * M - M * numerics::norm_quantile(u);
}

double wealth_step_log(double log_w, double pi, double eps, const MarketParams& m) {
  const double drift = pi * m.mu + (1.0 - pi) * m.r - 0.5 * (pi * m.sigma) * (pi * m.sigma);
  return log_w + drift * m.dt + pi * m.sigma * std::sqrt(m.dt) * eps;
}

double shock_to_uniform(double eps) { return numerics::norm_cdf(eps); }

double shock_to_uniform(double eps, const MarketParams& m) {
  return numerics::norm_cdf(m.mu >= m.r ? eps : -eps);
}

double shock_to_L_uniform(double eps, const MarketParams& m) {
  return numerics::L_norm_cdf(m.mu >= m.r ? eps : -eps);
}

}  // namespace pensionlab
