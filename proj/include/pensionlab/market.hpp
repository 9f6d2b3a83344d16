#pragma once

// Black-Scholes market over one rebalancing period, and its representation
// as an abstract one-period market on a uniform coordinate U in [0,1].
//
// Under the physical measure U is uniform; under the risk-neutral measure it
// has CDF Q(z) = Phi(M + Phi^{-1}(z)) and density q(u) = dQ/du, the pricing
// kernel. High U corresponds to good risky-asset outcomes.

namespace pensionlab {

struct MarketParams {
  double mu = 0.05;
  double sigma = 0.2;
  double r = 0.01;
  double dt = 1.0;

  /// |mu - r| sqrt(dt) / sigma.
  double price_of_risk_scale() const;
  /// Throws std::invalid_argument unless sigma > 0 and dt > 0.
  void validate() const;

  bool operator==(const MarketParams&) const = default;
};

/// Q(z) = Phi(M + Phi^{-1}(z)).
double big_Q(double z, const MarketParams& m);
/// Q applied to a probability in L-form; returns L(Q(z)).
double big_Q_L(double L_z, const MarketParams& m);

/// log q(u) = -M^2/2 - M Phi^{-1}(u).
double kernel_log(double u, const MarketParams& m);

/// One period of fixed-weight investment in log-wealth.
double wealth_step_log(double log_w, double pi, double eps, const MarketParams& m);

/// U = Phi(eps).
double shock_to_uniform(double eps);
/// Market-aware orientation: Phi(eps) when mu >= r, Phi(-eps) otherwise, so
/// that the risk-neutral CDF of U is Q in both cases.
double shock_to_uniform(double eps, const MarketParams& m);
/// Same as above, returned in L-form.
double shock_to_L_uniform(double eps, const MarketParams& m);

}  // namespace pensionlab
