#include "pensionlab/oracles.hpp"

#include <cmath>
#include <limits>

namespace pensionlab::oracles {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// log(-v) for the piecewise-linear-in-v extension of next_ell, with a
// forward-only segment cursor (callers query decreasing y).
struct Interp {
  const WealthGrid& x;
  const std::vector<double>& ell;
  const std::vector<double>& ratio;  // e^{ell_i - ell_{i+1}} per segment
  std::size_t seg;                   // y in [x[seg], x[seg + 1])

  double log_neg_v(double y) {
    const std::size_t n = x.size();
    if (y < x[0]) return kInf;
    if (y >= x[n - 1]) return -ell[n - 1];
    while (seg > 0 && y < x[seg]) --seg;
    while (seg + 1 < n - 1 && y >= x[seg + 1]) ++seg;
    const double lam = (y - x[seg]) / (x[seg + 1] - x[seg]);
    if (ell[seg] == -kInf) return lam == 1.0 ? -ell[seg + 1] : kInf;
    // -v(y) = e^{-ell_i} ((1 - lam) + lam e^{ell_i - ell_{i+1}})
    return -ell[seg] + std::log((1.0 - lam) + lam * ratio[seg]);
  }
};

double u_scaled(double c, const EkmParams& p, double dt, double a_pow) {
  const double cr = p.rho == -2.0 ? 1.0 / (c * c) : std::pow(c, p.rho);
  return p.alpha * dt * (cr - a_pow) / p.rho;
}

}  // namespace

std::vector<double> brute_force_step(const WealthGrid& grid, const std::vector<double>& next_ell,
                                     double survival, double r_dt, const EkmParams& p, double dt,
                                     std::size_t n_points) {
  const std::size_t n = grid.size();
  std::vector<double> out(n, -kInf);
  const double growth = std::exp(r_dt) / survival;  // continuation wealth per unit saved
  const double log_death = std::log1p(-survival);
  const double log_s = std::log(survival);
  const double a_pow = std::pow(p.a, p.rho);
  std::vector<double> ratio(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i)
    ratio[i] = next_ell[i] == -kInf ? 0.0 : std::exp(next_ell[i] - next_ell[i + 1]);
  auto objective = [&](Interp& f, double w, double c) {
    const double lnv = f.log_neg_v((w - c) * growth);
    if (lnv == kInf) return -kInf;
    const double cont = log_death == -kInf ? log_s + lnv
                                           : std::max(log_death, log_s + lnv) +
                                                 std::log1p(std::exp(-std::fabs(log_death - log_s - lnv)));
    return u_scaled(c, p, dt, a_pow) - cont;
  };
  for (std::size_t b = 0; b < n; ++b) {
    const double w = grid[b];
    const double c_max = w - grid[0] / growth;
    if (!(c_max > 0.0)) continue;
    Interp f{grid, next_ell, ratio, n - 2};
    double best = -kInf;
    for (std::size_t k = 1; k <= n_points; ++k) {
      const double c = c_max * static_cast<double>(k) / static_cast<double>(n_points);
      best = std::max(best, objective(f, w, c));
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double c = w - grid[j] / growth;
      if (c > 0.0) best = std::max(best, objective(f, w, c));
    }
    out[b] = best;
  }
  return out;
}

std::vector<std::vector<double>> brute_force_layers(const WealthGrid& grid, std::size_t horizon,
                                                    double survival, double r_dt,
                                                    const EkmParams& p, double dt,
                                                    std::size_t n_points) {
  std::vector<std::vector<double>> layers(horizon);
  layers[horizon - 1].resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) layers[horizon - 1][i] = u_scaled(grid[i], p, dt, std::pow(p.a, p.rho));
  for (std::size_t t = horizon - 1; t-- > 0;)
    layers[t] = brute_force_step(grid, layers[t + 1], survival, r_dt, p, dt, n_points);
  return layers;
}

}  // namespace pensionlab::oracles
