#include "pensionlab/dual_solver.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pensionlab/errors.hpp"
#include "pensionlab/numerics.hpp"
#include "pensionlab/parallel.hpp"

namespace pensionlab {

using numerics::kInf;
using numerics::log_diff_exp;
using numerics::kLog2;
using numerics::logsumexp;

namespace {
// Nodes above the 1 - 1e-20 quantile of U are merged into i_max.
constexpr double kUpperCut = 45.35855467932097;  // L(1 - 1e-20)
// Relative size (log) below which the summed lower-tail contribution is dropped.
constexpr double kLowerTail = -41.4465316739;  // log(1e-18)
}  // namespace

// ---- grid -------------------------------------------------------------------

WealthGrid::WealthGrid(std::vector<double> points) : points_(std::move(points)) {
  if (points_.empty()) throw std::invalid_argument("grid: no points");
  if (!(points_.front() > 0.0) || !std::isfinite(points_.back()))
    throw std::invalid_argument("grid: points must be positive and finite");
  for (std::size_t i = 1; i < points_.size(); ++i)
    if (!(points_[i] > points_[i - 1]))
      throw std::invalid_argument("grid: points must be strictly increasing");
}

WealthGrid WealthGrid::geometric(double x_min, double x_max, std::size_t n) {
  if (n < 2) throw std::invalid_argument("grid: need at least two points");
  if (!(x_min > 0.0 && x_max > x_min)) throw std::invalid_argument("grid: need 0 < x_min < x_max");
  std::vector<double> pts(n);
  const double lo = std::log(x_min), hi = std::log(x_max);
  for (std::size_t i = 0; i < n; ++i)
    pts[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
  pts.front() = x_min;
  pts.back() = x_max;
  return WealthGrid(std::move(pts));
}

WealthGrid WealthGrid::refined() const {
  std::vector<double> pts;
  pts.reserve(2 * points_.size() - 1);
  for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
    pts.push_back(points_[i]);
    pts.push_back(std::sqrt(points_[i]) * std::sqrt(points_[i + 1]));
  }
  pts.push_back(points_.back());
  return WealthGrid(std::move(pts));
}

bool WealthGrid::is_subset_of(const WealthGrid& finer) const {
  return std::includes(finer.points_.begin(), finer.points_.end(), points_.begin(), points_.end());
}

std::optional<std::size_t> WealthGrid::index_of(double x) const {
  auto it = std::lower_bound(points_.begin(), points_.end(), x);
  if (it == points_.end() || *it != x) return std::nullopt;
  return static_cast<std::size_t>(it - points_.begin());
}

std::optional<std::size_t> WealthGrid::snap_down(double w) const {
  auto it = std::upper_bound(points_.begin(), points_.end(), w);
  if (it == points_.begin()) return std::nullopt;
  return static_cast<std::size_t>(it - points_.begin()) - 1;
}

WealthGrid GridSpec::base_grid(double adequacy, double initial_wealth) const {
  const double x_max = std::max(x_max_floor, x_max_wealth_multiple * initial_wealth);
  return WealthGrid::geometric(x_min_factor * adequacy, x_max, base_size);
}

std::vector<WealthGrid> GridSpec::schedule(double adequacy, double initial_wealth) const {
  std::vector<WealthGrid> out{base_grid(adequacy, initial_wealth)};
  for (int k = 0; k < refinements; ++k) out.push_back(out.back().refined());
  return out;
}

// ---- value functions --------------------------------------------------------

PiecewiseConcaveValue::PiecewiseConcaveValue(WealthGrid grid, std::vector<double> ell)
    : grid_(std::move(grid)), ell_(std::move(ell)) {
  if (grid_.size() != ell_.size()) throw std::invalid_argument("value: grid/ell size mismatch");
  for (double l : ell_)
    if (std::isnan(l) || l == kInf) throw std::invalid_argument("value: ell must be < +inf");
}

namespace {

// d log p_i / d ell for a chord with ell increment `d` >= 0.
double slope_sensitivity(double d) {
  if (d <= 0.0) return kInf;
  return 1.0 + 2.0 / std::expm1(d);
}

double log_slope(double ell_lo, double ell_hi, double dx) {
  if (ell_lo == -kInf) return kInf;
  if (!(ell_hi > ell_lo)) return -kInf;
  return log_diff_exp(-ell_lo, -ell_hi) - std::log(dx);
}

}  // namespace

std::vector<std::string> PiecewiseConcaveValue::invariant_violations(double ell_tol) const {
  std::vector<std::string> out;
  const std::size_t n = ell_.size();
  auto tol_at = [&](std::size_t i) { return ell_tol * (1.0 + std::fabs(ell_[i])); };
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (ell_[i] == -kInf) continue;
    if (ell_[i + 1] == -kInf || ell_[i + 1] < ell_[i] - tol_at(i)) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "monotonicity: ell[" << i + 1 << "] = " << ell_[i + 1] << " < ell[" << i
          << "] = " << ell_[i];
      out.push_back(msg.str());
    }
  }
  for (std::size_t i = 0; i + 2 < n; ++i) {
    if (ell_[i] == -kInf) continue;
    const double d1 = ell_[i + 1] - ell_[i];
    const double d2 = ell_[i + 2] - ell_[i + 1];
    const double tol = ell_tol * (1.0 + std::max({std::fabs(ell_[i]), std::fabs(ell_[i + 1]),
                                                  std::fabs(ell_[i + 2])}));
    bool bad = false;
    if (d1 <= tol) {
      // flat (or within noise of flat): anything after must stay flat as well
      bad = d2 > 2.0 * tol;
    } else if (d2 > tol) {
      const double lp1 = log_slope(ell_[i], ell_[i + 1], grid_[i + 1] - grid_[i]);
      const double lp2 = log_slope(ell_[i + 1], ell_[i + 2], grid_[i + 2] - grid_[i + 1]);
      const double allowance = tol * (slope_sensitivity(d1) + slope_sensitivity(d2));
      bad = lp2 > lp1 + allowance;
    }
    if (bad) {
      std::ostringstream msg;
      msg << "concavity: chord slope increases at node " << i + 1;
      out.push_back(msg.str());
    }
  }
  return out;
}

PiecewiseConcaveValue terminal_layer(const WealthGrid& grid, const EkmParams& p, double dt) {
  std::vector<double> ell(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) ell[i] = p.alpha * period_utility(grid[i], p) * dt;
  return PiecewiseConcaveValue(grid, std::move(ell));
}

std::vector<double> dual_breakpoints(const PiecewiseConcaveValue& v) {
  const std::size_t n = v.size();
  std::vector<double> out(n + 1);
  out.front() = kInf;
  out.back() = -kInf;
  const auto& ell = v.ell();
  for (std::size_t i = 0; i + 1 < n; ++i)
    out[i + 1] = log_slope(ell[i], ell[i + 1], v.grid()[i + 1] - v.grid()[i]);
  return out;
}

double value_at(const PiecewiseConcaveValue& v, double w) {
  const auto& g = v.grid();
  if (std::isnan(w)) return w;
  if (w < g.front()) return -kInf;
  if (w >= g.back()) return v.ell().back();
  const auto& pts = g.points();
  const std::size_t i = static_cast<std::size_t>(std::upper_bound(pts.begin(), pts.end(), w) - pts.begin()) - 1;
  if (pts[i] == w) return v.ell()[i];
  const double lam = (w - pts[i]) / (pts[i + 1] - pts[i]);
  const double lo = v.ell()[i], hi = v.ell()[i + 1];
  if (lo == -kInf) return -kInf;
  return -logsumexp({std::log1p(-lam) - lo, std::log(lam) - hi});
}

// ---- decisions --------------------------------------------------------------

std::size_t NodeDecision::next_node(double L_u) const {
  auto it = std::lower_bound(breakpoints.begin(), breakpoints.end(), L_u);
  return i_min + static_cast<std::size_t>(it - breakpoints.begin());
}

double NodeDecision::log_mass(std::size_t j) const {
  if (terminal || infeasible || j < i_min || j > i_max) return -kInf;
  const double lo = j == i_min ? -kInf : breakpoints[j - 1 - i_min];
  const double hi = j == i_max ? kInf : breakpoints[j - i_min];
  return numerics::log_prob_gap(lo, hi);
}

// ---- one-period problem -----------------------------------------------------

OnePeriodProblem::OnePeriodProblem(const PiecewiseConcaveValue& next, double survival,
                                   const MarketParams& m, const EkmParams& p,
                                   const SolverOptions& options)
    : next_(next),
      survival_(survival),
      M_(m.price_of_risk_scale()),
      r_dt_(m.r * m.dt),
      dt_(m.dt),
      log_survival_(std::log(survival)),
      log_death_(std::log1p(-survival)),
      prefs_(p),
      family_(PowerUtilityFamily::ekm(p, p.alpha)),
      options_(options) {
  if (!(survival >= 0.0 && survival <= 1.0))
    throw std::invalid_argument("one-period problem: survival outside [0,1]");
  const auto& g = next.grid();
  ell_ = next.ell();
  const std::size_t n = g.size();
  log_x_.resize(n);
  for (std::size_t j = 0; j < n; ++j) log_x_[j] = std::log(g[j]);
  lambda_.assign(n - 1, 0.0);
  double prev_log_p = kInf;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    if (ell_[j] == -kInf) continue;
    if (!(ell_[j + 1] > ell_[j])) {
      lambda_[j] = -kInf;
      prev_log_p = -kInf;
      continue;
    }
    const double d = ell_[j] - ell_[j + 1];
    const double lm = d > -numerics::kLog2 ? std::log(-std::expm1(d)) : std::log1p(-std::exp(d));
    lambda_[j] = lm - std::log(g[j + 1] - g[j]);
    // keep the slope sequence non-increasing against rounding
    const double log_p = lambda_[j] - ell_[j];
    if (log_p > prev_log_p) lambda_[j] = prev_log_p + ell_[j];
    prev_log_p = std::min(prev_log_p, log_p);
  }
  double min_ell = kInf;
  std::size_t first_finite = n;
  for (std::size_t j = 0; j < n; ++j) {
    if (ell_[j] > -kInf) {
      min_ell = std::min(min_ell, ell_[j]);
      if (first_finite == n) first_finite = j;
    }
  }
  if (first_finite == n) throw SolverError("continuation value is -inf everywhere");
  log_cost_.resize(n);
  log_hold_.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    log_cost_[j] = log_survival_ - r_dt_ + log_x_[j];
    log_hold_[j] = ell_[j] == -kInf ? kInf : logsumexp({log_death_, log_survival_ - ell_[j]});
  }
  // epsilon = scale / max|v|, capped at `scale` so it stays a tail probability
  log_eps_ = std::log(options.truncation_scale) + std::min(0.0, min_ell);
  L_eps_ = numerics::kLog2 + log_eps_;
  log_min_budget_ = log_survival_ - r_dt_ + log_x_[first_finite];
}

double OnePeriodProblem::d_at(std::size_t j, double shift, double delta) const {
  if (ell_[j] == -kInf) return -kInf;
  if (lambda_[j] == -kInf) return kInf;
  // ell_j + shift is exact when shift is close to -ell_j
  return ((ell_[j] + shift) - lambda_[j]) + (delta - r_dt_);
}

double OnePeriodProblem::LU_at(std::size_t j, double shift, double delta) const {
  const double d = d_at(j, shift, delta);
  if (M_ == 0.0) return d > 0.0 ? kInf : -kInf;
  return numerics::L_norm_cdf(-0.5 * M_ + d / M_);
}

void OnePeriodProblem::evaluate_into(double shift, double delta, EtaEvaluation& out) const {
  const std::size_t nb = lambda_.size();  // interior breakpoints
  const double K = shift;
  out.shift = shift;
  out.delta = delta;
  out.log_eta = shift + delta;
  // i_max: first j with U_j above 1 - max(eps, kUpperTail)
  const double L_top = std::min(-L_eps_, kUpperCut);
  std::size_t lo = 0, hi = nb;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (LU_at(mid, shift, delta) >= L_top) hi = mid; else lo = mid + 1;
  }
  out.i_max = lo;

  // Walk down from i_max accumulating A (relative to K) and the payoff part
  // of log w^eta as running log-sum-exps. Node k's lower neighbours are
  // dropped (U_{k-1} := 0) once U_{k-1} <= eps, or once their total
  // contribution is provably below kLowerTail of the partial sums: for i < k,
  // |v_i| <= |v_k| + p_i x_k and p_i dU_i <= eta e^{-r dt} dQ_i.
  thread_local std::vector<double> rev_u, rev_q;
  rev_u.clear();
  rev_q.clear();
  double a_max = log_death_ - K, a_sum = a_max == -kInf ? 0.0 : 1.0;
  double w_max = -kInf, w_sum = 0.0;
  auto add = [](double& mx, double& sum, double t) {
    if (t == -kInf) return;
    if (t <= mx) {
      sum += std::exp(t - mx);
    } else {
      sum = sum * std::exp(mx - t) + 1.0;
      mx = t;
    }
  };
  double hi_u = kInf, hi_q = kInf;
  std::size_t k = out.i_max;
  for (;;) {
    double lo_u = -kInf, lo_q = -kInf;
    if (k > 0) {
      const double d = d_at(k - 1, shift, delta);
      if (M_ == 0.0) {
        lo_u = lo_q = d > 0.0 ? kInf : -kInf;
      } else {
        const double z = -0.5 * M_ + d / M_;
        lo_u = numerics::L_norm_cdf(z);
        lo_q = numerics::L_norm_cdf(z + M_);
      }
      lo_u = std::min(lo_u, hi_u);
      lo_q = std::min(lo_q, hi_q);
      if (!(lo_u > L_eps_)) {
        lo_u = lo_q = -kInf;
      } else if (a_max > -kInf && w_max > -kInf) {
        const double log_u = numerics::log_prob_from_L(lo_u);
        const double log_q = numerics::log_prob_from_L(lo_q);
        const double bound_a = log_survival_ + std::max(-(ell_[k] + K) + log_u,
                                                       log_x_[k] + delta - r_dt_ + log_q) + kLog2;
        const double bound_w = log_survival_ - r_dt_ + log_x_[k] + log_q;
        if (bound_a < a_max + kLowerTail && bound_w < w_max + kLowerTail) lo_u = lo_q = -kInf;
      }
    }
    const double lu = numerics::log_prob_gap(lo_u, hi_u);
    const double lq = numerics::log_prob_gap(lo_q, hi_q);
    if (lu > -kInf) add(a_max, a_sum, log_survival_ - (ell_[k] + K) + lu);
    if (lq > -kInf) add(w_max, w_sum, log_survival_ - r_dt_ + log_x_[k] + lq);
    if (lo_u == -kInf) break;
    rev_u.push_back(lo_u);
    rev_q.push_back(lo_q);
    hi_u = lo_u;
    hi_q = lo_q;
    --k;
  }
  out.i_min = k;
  out.LU.assign(rev_u.rbegin(), rev_u.rend());
  out.LQ.assign(rev_q.rbegin(), rev_q.rend());
  const double log_pay = w_max == -kInf ? -kInf : w_max + std::log(w_sum);
  complete(out, a_max + std::log(a_sum), log_pay);
}

void OnePeriodProblem::complete(EtaEvaluation& out, double a_rel, double log_pay) const {
  const double K = out.shift;
  out.A = K + a_rel;
  out.log_c = family_.log_inverse_marginal(out.delta - std::log(dt_) - a_rel);
  out.log_w = log_pay == -kInf ? out.log_c : logsumexp({out.log_c, log_pay});
  const double c_pow = std::exp(prefs_.rho * out.log_c);
  out.ell = ((family_.coef * c_pow + family_.b) * dt_ - a_rel) - K;
}

void OnePeriodProblem::finish(EtaEvaluation& out) const {
  const double K = out.shift;
  const std::size_t count = out.i_max - out.i_min + 1;
  // A and log w^eta as two-pass (max, then sum) log-sum-exps; A is held
  // relative to the shift so that log eta - A keeps full precision
  thread_local std::vector<double> a_terms, w_terms;
  a_terms.resize(count);
  w_terms.resize(count);
  const double death = log_death_ - K;
  double a_max = death;
  double w_max = -kInf;
  for (std::size_t k = 0; k < count; ++k) {
    const double lo = k == 0 ? -kInf : out.LU[k - 1];
    const double hi = k + 1 == count ? kInf : out.LU[k];
    const double qlo = k == 0 ? -kInf : out.LQ[k - 1];
    const double qhi = k + 1 == count ? kInf : out.LQ[k];
    const std::size_t j = out.i_min + k;
    const double lu = numerics::log_prob_gap(lo, hi);
    const double lq = numerics::log_prob_gap(qlo, qhi);
    a_terms[k] = lu == -kInf ? -kInf : log_survival_ - (ell_[j] + K) + lu;
    w_terms[k] = lq == -kInf ? -kInf : log_survival_ - r_dt_ + log_x_[j] + lq;
    a_max = std::max(a_max, a_terms[k]);
    w_max = std::max(w_max, w_terms[k]);
  }
  double a_sum = death == -kInf ? 0.0 : std::exp(death - a_max);
  for (double t : a_terms) a_sum += std::exp(t - a_max);
  double log_pay = -kInf;
  if (w_max > -kInf) {
    double w_sum = 0.0;
    for (double t : w_terms) w_sum += std::exp(t - w_max);
    log_pay = w_max + std::log(w_sum);
  }
  complete(out, a_max + std::log(a_sum), log_pay);
}

EtaEvaluation OnePeriodProblem::evaluate(double shift, double delta) const {
  EtaEvaluation e;
  evaluate_into(shift, delta, e);
  return e;
}

EtaEvaluation OnePeriodProblem::evaluate_mixture(double shift, double delta_lo, double delta_hi,
                                                 double theta) const {
  const EtaEvaluation a = evaluate(shift, delta_lo);
  const EtaEvaluation b = evaluate(shift, delta_hi);
  auto u_at = [](const EtaEvaluation& e, std::size_t j) {
    if (j < e.i_min) return 0.0;
    if (j >= e.i_max) return 1.0;
    return numerics::L_inv(e.LU[j - e.i_min]);
  };
  EtaEvaluation out;
  out.shift = shift;
  out.delta = delta_lo + 0.5 * (delta_hi - delta_lo);
  out.log_eta = shift + out.delta;
  out.i_min = std::min(a.i_min, b.i_min);
  out.i_max = std::max(a.i_max, b.i_max);
  for (std::size_t j = out.i_min; j < out.i_max; ++j) {
    const double u = std::clamp((1.0 - theta) * u_at(a, j) + theta * u_at(b, j), 0.0, 1.0);
    const double lu = numerics::L_map(u);
    out.LU.push_back(out.LU.empty() ? lu : std::max(lu, out.LU.back()));
  }
  out.LQ = out.LU;  // Q is the identity in a driftless market
  finish(out);
  return out;
}

NodeDecision OnePeriodProblem::decision_from(const EtaEvaluation& e, double budget) const {
  NodeDecision d;
  d.budget = budget;
  d.log_eta = e.log_eta;
  d.log_c = e.log_c;
  d.ell = e.ell;
  d.residual = e.log_w - std::log(budget);
  d.i_min = e.i_min;
  d.i_max = e.i_max;
  d.breakpoints = e.LU;
  d.eta_shift = e.shift;
  d.eta_delta = e.delta;
  return d;
}

numerics::Bracket OnePeriodProblem::root_bracket(double log_b, double shift, double lo,
                                                 double hi, double tol, int expansions) const {
  EtaEvaluation scratch;
  auto g = [&](double delta) {
    evaluate_into(shift, delta, scratch);
    return scratch.log_w - log_b;
  };
  numerics::BisectionOptions bo;
  bo.tol = tol;
  bo.f_tol = options_.target_residual;
  bo.max_expansions = expansions;
  return numerics::illinois(g, lo, hi, bo);
}

std::optional<NodeDecision> OnePeriodProblem::root_in(double budget, double lo, double hi,
                                                      int expansions, std::string* failure) const {
  const double log_b = std::log(budget);
  numerics::Bracket coarse;
  try {
    coarse = root_bracket(log_b, 0.0, lo, hi, 1e-6, expansions);
  } catch (const numerics::BracketError& err) {
    if (failure) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "no log-eta root for budget " << budget << ": bracket [" << err.lo << ", "
          << err.hi << "], log w^eta = [" << err.f_lo + log_b << ", " << err.f_hi + log_b << "]";
      *failure = msg.str();
    }
    return std::nullopt;
  }
  if (coarse.lo == coarse.hi && std::fabs(coarse.f_lo) <= options_.residual_tol)
    return decision_from(evaluate(0.0, coarse.lo), budget);

  // fine solve relative to the coarse midpoint
  const double shift = coarse.lo + 0.5 * (coarse.hi - coarse.lo);
  const double span = std::max(coarse.hi - coarse.lo, 1e-9);
  numerics::Bracket br;
  try {
    br = root_bracket(log_b, shift, -span, span, 1e-15, options_.max_expansions);
  } catch (const numerics::BracketError&) {
    br = {-span, span, evaluate(shift, -span).log_w - log_b, evaluate(shift, span).log_w - log_b, 2};
  }
  const double best = std::fabs(br.f_lo) <= std::fabs(br.f_hi) ? br.lo : br.hi;
  const double best_res = std::min(std::fabs(br.f_lo), std::fabs(br.f_hi));
  if (best_res <= options_.residual_tol) return decision_from(evaluate(shift, best), budget);

  if (M_ == 0.0 && br.lo < br.hi && br.f_lo > 0.0 && br.f_hi < 0.0) {
    // w^eta jumps where eta e^{-r dt} hits a chord slope; any mixture of the
    // two adjacent payoffs is optimal there
    auto gm = [&](double theta) {
      return evaluate_mixture(shift, br.lo, br.hi, theta).log_w - log_b;
    };
    numerics::BisectionOptions mo;
    mo.tol = 1e-17;
    mo.f_tol = options_.target_residual;
    mo.max_expansions = 0;
    numerics::Bracket mb;
    try {
      mb = numerics::bisect(gm, 0.0, 1.0, mo);
    } catch (const numerics::BracketError&) {
      mb = {0.0, 1.0, gm(0.0), gm(1.0), 2};
    }
    const double theta = std::fabs(mb.f_lo) <= std::fabs(mb.f_hi) ? mb.lo : mb.hi;
    const EtaEvaluation e = evaluate_mixture(shift, br.lo, br.hi, theta);
    if (std::fabs(e.log_w - log_b) <= options_.residual_tol) {
      NodeDecision d = decision_from(e, budget);
      d.mixed = true;
      d.eta_delta = br.lo;
      d.mix_delta_hi = br.hi;
      d.mix_theta = theta;
      return d;
    }
  }
  if (failure) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "log-eta root residual " << best_res << " above tolerance for budget " << budget
        << ": bracket [" << shift + br.lo << ", " << shift + br.hi << "], log w^eta = ["
        << br.f_lo + log_b << ", " << br.f_hi + log_b << "]";
    *failure = msg.str();
  }
  return std::nullopt;
}

double OnePeriodProblem::pure_value(std::size_t k, double budget) const {
  const double c = budget - std::exp(log_cost_[k]);
  if (!(c > 0.0) || ell_[k] == -kInf) return -kInf;
  return prefs_.alpha * period_utility(c, prefs_) * dt_ - log_hold_[k];
}

NodeDecision OnePeriodProblem::pure_decision(std::size_t k, double budget) const {
  const double c = budget - std::exp(log_cost_[k]);
  NodeDecision d;
  d.budget = budget;
  d.log_c = std::log(c);
  d.ell = pure_value(k, budget);
  // multiplier consistent with the consumption first-order condition
  d.log_eta = (prefs_.rho - 1.0) * d.log_c + std::log(prefs_.alpha) + std::log(dt_) + log_hold_[k];
  d.residual = std::log(c + std::exp(log_cost_[k])) - std::log(budget);
  d.i_min = d.i_max = k;
  d.pure = true;
  return d;
}

double OnePeriodProblem::centre(std::size_t j) const {
  // log eta at which the boundary between nodes j and j+1 sits at the median kernel
  if (j >= lambda_.size()) return -kInf;
  if (ell_[j] == -kInf) return kInf;
  if (lambda_[j] == -kInf) return -kInf;
  return r_dt_ + (lambda_[j] - ell_[j]);
}

NodeDecision OnePeriodProblem::terminal_decision(double budget) const {
  NodeDecision d;
  d.budget = budget;
  d.log_eta = -kInf;
  d.log_c = std::log(budget);
  d.ell = prefs_.alpha * period_utility(budget, prefs_) * dt_;
  d.terminal = true;
  return d;
}

NodeDecision OnePeriodProblem::infeasible_decision(double budget) const {
  NodeDecision d;
  d.budget = budget;
  d.log_eta = kInf;
  d.log_c = -kInf;
  d.ell = -kInf;
  d.infeasible = true;
  return d;
}

NodeDecision OnePeriodProblem::replay(const NodeDecision& key) const {
  const double budget = key.budget;
  if (key.terminal) return terminal_decision(budget);
  if (key.infeasible) return infeasible_decision(budget);
  if (key.pure) {
    if (key.i_min >= ell_.size()) throw SolverError("replay: pure payoff node outside the grid");
    return pure_decision(key.i_min, budget);
  }
  if (key.mixed) {
    if (M_ != 0.0) throw SolverError("replay: mixture decision in a market with drift");
    NodeDecision d = decision_from(
        evaluate_mixture(key.eta_shift, key.eta_delta, key.mix_delta_hi, key.mix_theta), budget);
    d.mixed = true;
    d.eta_delta = key.eta_delta;
    d.mix_delta_hi = key.mix_delta_hi;
    d.mix_theta = key.mix_theta;
    return d;
  }
  return decision_from(evaluate(key.eta_shift, key.eta_delta), budget);
}

NodeDecision OnePeriodProblem::solve(double budget, std::optional<double> hint) const {
  const double log_b = std::log(budget);
  if (survival_ == 0.0) return terminal_decision(budget);
  if (!(log_b > log_min_budget_)) return infeasible_decision(budget);

  // w^eta need not be monotone, so the budget equation can have several
  // roots, each a local optimum of the consumption/continuation split. The
  // bisection root competes with the best riskless single-node payoff and
  // with a root searched next to that node.
  const bool warm = hint && std::isfinite(*hint);
  const double c0 = warm ? *hint : 0.0;
  const double half = warm ? options_.warm_half_width : options_.cold_half_width;
  std::string failure;
  std::optional<NodeDecision> best = root_in(budget, c0 - half, c0 + half, options_.max_expansions, &failure);

  std::size_t k_best = ell_.size();
  double pure_best = -kInf;
  for (std::size_t k = 0; k < ell_.size() && log_cost_[k] < log_b; ++k) {
    const double v = pure_value(k, budget);
    if (v > pure_best) {
      pure_best = v;
      k_best = k;
    }
  }
  const double margin = 1e-12 * (1.0 + std::fabs(pure_best));
  if (k_best < ell_.size() && (!best || pure_best > best->ell + margin)) {
    // widen around node k_best until the budget equation changes sign
    const std::size_t n = ell_.size();
    std::size_t up = k_best, down = k_best;
    for (int attempt = 0; attempt < 64; ++attempt) {
      double lo = centre(up);
      double hi = down == 0 ? kInf : centre(down - 1);
      if (!std::isfinite(lo)) lo = std::isfinite(hi) ? hi - 2.0 * options_.cold_half_width : -options_.cold_half_width;
      if (!std::isfinite(hi)) hi = lo + 2.0 * options_.cold_half_width;
      if (hi <= lo) hi = lo + 1e-6 * (1.0 + std::fabs(lo));
      const double f_lo = evaluate(0.0, lo).log_w - log_b;
      const double f_hi = evaluate(0.0, hi).log_w - log_b;
      if (f_lo >= 0.0 && f_hi <= 0.0) {
        auto local = root_in(budget, lo, hi, 0, nullptr);
        if (local && (!best || local->ell > best->ell)) best = std::move(local);
        break;
      }
      bool moved = false;
      if (f_lo < 0.0 && up + 1 < n) { ++up; moved = true; }
      if (f_hi > 0.0 && down > 0) { --down; moved = true; }
      if (!moved) break;
    }
    if (!best || pure_best > best->ell + margin) best = pure_decision(k_best, budget);
  }
  if (!best) throw SolverError(failure);
  return *best;
}

// ---- backward induction -----------------------------------------------------

StepResult one_period_step(const PiecewiseConcaveValue& next, double survival,
                           const MarketParams& m, const EkmParams& p,
                           const WealthGrid& budget_grid, const SolverOptions& options) {
  const OnePeriodProblem problem(next, survival, m, p, options);
  const std::size_t n = budget_grid.size();
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk_size);
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  StepResult out;
  out.policy.survival = survival;
  out.policy.nodes.resize(n);
  parallel_for(n_chunks, options.workers, [&](std::size_t c) {
    std::optional<double> hint;
    for (std::size_t i = c * chunk; i < std::min(n, (c + 1) * chunk); ++i) {
      NodeDecision d = problem.solve(budget_grid[i], hint);
      if (!d.infeasible && !d.terminal) hint = d.log_eta;
      out.policy.nodes[i] = std::move(d);
    }
  });
  std::vector<double> ell(n);
  for (std::size_t i = 0; i < n; ++i) ell[i] = out.policy.nodes[i].ell;
  out.value = PiecewiseConcaveValue(budget_grid, std::move(ell));
  return out;
}

std::vector<std::string> PolicyTable::validate(double ell_tol) const {
  std::vector<std::string> out;
  for (std::size_t t = 0; t < values.size(); ++t)
    for (auto& msg : values[t].invariant_violations(ell_tol))
      out.push_back("year " + std::to_string(t) + ": " + msg);
  for (std::size_t t = 0; t < periods.size(); ++t) {
    const auto& nodes = periods[t].nodes;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& d = nodes[i];
      if (!std::is_sorted(d.breakpoints.begin(), d.breakpoints.end()))
        out.push_back("year " + std::to_string(t) + ": breakpoints decrease at node " +
                      std::to_string(i));
      if (!d.terminal && !d.infeasible &&
          (d.i_max < d.i_min || d.breakpoints.size() != d.i_max - d.i_min || d.i_max >= grid.size()))
        out.push_back("year " + std::to_string(t) + ": inconsistent active range at node " +
                      std::to_string(i));
    }
  }
  return out;
}

PolicyTable solve_on_grid(const WealthGrid& grid, const MortalityTable& table,
                          const MarketParams& m, const EkmParams& p,
                          const SolverOptions& options) {
  m.validate();
  p.validate();
  PolicyTable out;
  out.market = m;
  out.prefs = p;
  out.mortality = table;
  out.grid = grid;
  const std::size_t h = table.horizon();
  out.values.resize(h);
  out.periods.resize(h);
  out.values[h - 1] = terminal_layer(grid, p, m.dt);
  {
    PeriodPolicy& last = out.periods[h - 1];
    last.survival = 0.0;
    last.nodes.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
      NodeDecision& d = last.nodes[i];
      d.budget = grid[i];
      d.log_eta = -kInf;
      d.log_c = std::log(grid[i]);
      d.ell = out.values[h - 1].ell()[i];
      d.terminal = true;
    }
  }
  for (std::size_t t = h - 1; t-- > 0;) {
    StepResult step = one_period_step(out.values[t + 1], table.survival(t), m, p, grid, options);
    out.values[t] = std::move(step.value);
    out.periods[t] = std::move(step.policy);
  }
  return out;
}

SolveResult solve_decumulation(const std::vector<WealthGrid>& schedule,
                               const MortalityTable& table, const MarketParams& m,
                               const EkmParams& p, const SolverOptions& options,
                               double stop_rel_change) {
  if (schedule.empty()) throw ConfigError("/grid", "empty grid schedule");
  for (std::size_t k = 1; k < schedule.size(); ++k)
    if (!schedule[k - 1].is_subset_of(schedule[k]))
      throw ConfigError("/grid", "grid schedule is not nested at refinement " + std::to_string(k));

  SolveResult out;
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    PolicyTable policy = solve_on_grid(schedule[k], table, m, p, options);
    RefinementRecord rec;
    rec.grid_size = schedule[k].size();
    rec.initial_ell = policy.values.front().ell();
    rec.values = policy.values;
    if (k > 0) {
      const auto& prev = out.refinements.back();
      rec.min_ell_increase = kInf;
      for (std::size_t t = 0; t < policy.values.size(); ++t) {
        const auto& old_v = prev.values[t];
        const auto& new_v = policy.values[t];
        for (std::size_t i = 0; i < old_v.size(); ++i) {
          const auto j = new_v.grid().index_of(old_v.grid()[i]);
          if (!j) continue;
          const double lo = old_v.ell()[i], ln = new_v.ell()[*j];
          if (lo == -kInf || ln == -kInf) continue;
          const double rel = std::fabs(std::expm1(lo - ln));
          rec.max_rel_change = std::max(rec.max_rel_change, rel);
          if (t == 0) rec.max_rel_change_initial = std::max(rec.max_rel_change_initial, rel);
          rec.min_ell_increase = std::min(rec.min_ell_increase, ln - lo);
        }
      }
    }
    out.invariant_violations = policy.validate().size();
    out.policy = std::move(policy);
    out.refinements.push_back(std::move(rec));
    if (k > 0 && stop_rel_change > 0.0 && out.refinements.back().max_rel_change < stop_rel_change)
      break;
  }
  return out;
}

}  // namespace pensionlab
