#include "pensionlab/numerics.hpp"

#include <algorithm>
#include <array>

namespace pensionlab::numerics {

namespace {

constexpr double kSqrtHalf = 0.70710678118654752440;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double polynomial(const std::array<double, 8>& c, double x) {
  double acc = c[7];
  for (int i = 6; i >= 0; --i) acc = acc * x + c[i];
  return acc;
}

// AS241 (PPND16). `q` is p - 1/2 and `log_tail` is log(min(p, 1 - p)).
double ppnd16(double q, double log_tail) {
  static constexpr std::array<double, 8> a{
      3.387132872796366608,   133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125,  45921.953931549871457, 67265.770927008700853,
      33430.575583588128105,  2509.0809287301226727};
  static constexpr std::array<double, 8> b{
      1.0,                   42.313330701600911252, 687.1870074920579083,
      5394.1960214247511077, 21213.794301586595867, 39307.89580009271061,
      28729.085735721942674, 5226.495278852545925};
  static constexpr std::array<double, 8> c{
      1.42343711074968357734,  4.6303378461565452959,
      5.7694972214606914055,   3.64784832476320460504,
      1.27045825245236838258,  0.24178072517745061177,
      0.0227238449892691845833, 7.7454501427834140764e-4};
  static constexpr std::array<double, 8> d{
      1.0,
      2.05319162663775882187,
      1.6763848301838038494,
      0.68976733498510000455,
      0.14810397642748007459,
      0.0151986665636164571966,
      5.475938084995344946e-4,
      1.05075007164441684324e-9};
  static constexpr std::array<double, 8> e{
      6.6579046435011037772,    5.4637849111641143699,
      1.7848265399172913358,    0.29656057182850489123,
      0.026532189526576123093,  0.0012426609473880784386,
      2.71155556874348757815e-5, 2.01033439929228813265e-7};
  static constexpr std::array<double, 8> f{
      1.0,
      0.59983220655588793769,
      0.13692988092273580531,
      0.0148753612908506148525,
      7.868691311456132591e-4,
      1.8463183175100546818e-5,
      1.4215117583164458887e-7,
      2.04426310338993978564e-15};

  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * polynomial(a, r) / polynomial(b, r);
  }
  double r = std::sqrt(-log_tail);
  double z;
  if (r <= 5.0) {
    r -= 1.6;
    z = polynomial(c, r) / polynomial(d, r);
  } else {
    r -= 5.0;
    z = polynomial(e, r) / polynomial(f, r);
  }
  return q < 0 ? -z : z;
}

double log_norm_pdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

}  // namespace

double logsumexp(std::span<const double> terms) {
  if (terms.empty()) throw std::domain_error("logsumexp of an empty sequence");
  const double m = *std::max_element(terms.begin(), terms.end());
  if (std::isinf(m) || std::isnan(m)) return m;
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - m);
  return m + std::log(sum);
}

double logsumexp(std::initializer_list<double> terms) {
  return logsumexp(std::span<const double>(terms.begin(), terms.size()));
}

double log_diff_exp(double a, double b) {
  if (a < b) throw std::domain_error("log_diff_exp: negative difference");
  if (b == -kInf) return a;
  if (a == b) return -kInf;
  if (a == kInf) return kInf;
  const double d = b - a;
  // log(-expm1(d)) is accurate for d near 0, log1p(-exp(d)) for d << 0.
  return a + (d > -kLog2 ? std::log(-std::expm1(d)) : std::log1p(-std::exp(d)));
}

double log_squared_diff_exp(double a, double b) {
  const double hi = std::max(a, b);
  const double lo = std::min(a, b);
  return 2.0 * log_diff_exp(hi, lo);
}

double L_map(double u) {
  if (!(u >= 0.0 && u <= 1.0)) throw std::domain_error("L_map: u outside [0,1]");
  if (u <= 0.5) return std::log(2.0 * u);
  return -std::log(2.0 * (1.0 - u));
}

double L_inv(double y) {
  if (y <= 0.0) return 0.5 * std::exp(y);
  return 1.0 - 0.5 * std::exp(-y);
}

double log_prob_from_L(double y) {
  if (y <= 0.0) return y - kLog2;
  return std::log1p(-0.5 * std::exp(-y));
}

double log_prob_gap(double L_lo, double L_hi) {
  if (L_lo > L_hi) throw std::domain_error("log_prob_gap: lo > hi");
  if (L_lo == L_hi) return -kInf;
  if (L_hi <= 0.0) return log_diff_exp(L_hi, L_lo) - kLog2;
  if (L_lo > 0.0) return log_diff_exp(-L_lo, -L_hi) - kLog2;
  return std::log(-std::expm1(L_lo) - std::expm1(-L_hi)) - kLog2;
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x * kSqrtHalf); }

double log_norm_cdf(double x) {
  if (x < 0.0) return std::log(std::erfc(-x * kSqrtHalf)) - kLog2;
  return std::log1p(-0.5 * std::erfc(x * kSqrtHalf));
}

double L_norm_cdf(double x) {
  if (x <= 0.0) return std::log(std::erfc(-x * kSqrtHalf));
  return -std::log(std::erfc(x * kSqrtHalf));
}

double norm_quantile_from_L(double y) {
  if (std::isnan(y)) return y;
  if (y == -kInf) return -kInf;
  if (y == kInf) return kInf;
  // q = u - 1/2 and log(min(u, 1-u)) straight from the L-form.
  const double q = y <= 0.0 ? 0.5 * std::expm1(y) : -0.5 * std::expm1(-y);
  const double log_tail = -std::fabs(y) - kLog2;
  double z = ppnd16(q, log_tail);
  // Newton polish on the lower-tail log CDF (mirrored for the upper tail).
  const double side = y <= 0.0 ? 1.0 : -1.0;
  const double zs = side * z;
  const double g = log_norm_cdf(zs) - log_tail;
  if (std::isfinite(g)) {
    const double ratio = std::exp(log_norm_cdf(zs) - log_norm_pdf(zs));
    z = side * (zs - g * ratio);
  }
  return z;
}

double norm_quantile(double u) {
  if (!(u >= 0.0 && u <= 1.0)) throw std::domain_error("norm_quantile: u outside [0,1]");
  return norm_quantile_from_L(L_map(u));
}

double pairwise_sum(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  if (n <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

namespace {

int sign_of(double v) { return (v > 0) - (v < 0); }

// Expands [lo, hi] symmetrically until f changes sign.
Bracket expand(const std::function<double(double)>& f, double lo, double hi,
               const BisectionOptions& options) {
  if (!(lo < hi)) throw std::invalid_argument("bisect: empty interval");
  Bracket br{lo, hi, f(lo), f(hi), 2};
  int expansions = 0;
  while (sign_of(br.f_lo) * sign_of(br.f_hi) > 0) {
    if (std::isnan(br.f_lo) || std::isnan(br.f_hi)) break;
    if (expansions++ >= options.max_expansions) break;
    const double width = br.hi - br.lo;
    br.lo -= width;
    br.hi += width;
    br.f_lo = f(br.lo);
    br.f_hi = f(br.hi);
    br.evaluations += 2;
  }
  if (std::isnan(br.f_lo) || std::isnan(br.f_hi) ||
      sign_of(br.f_lo) * sign_of(br.f_hi) > 0) {
    throw BracketError("bisect: no sign change on [" + std::to_string(br.lo) +
                           ", " + std::to_string(br.hi) + "]",
                       br.lo, br.hi, br.f_lo, br.f_hi);
  }
  return br;
}

}  // namespace

Bracket bisect(const std::function<double(double)>& f, double lo, double hi,
               const BisectionOptions& options) {
  Bracket br = expand(f, lo, hi, options);
  if (std::fabs(br.f_lo) <= options.f_tol) return {br.lo, br.lo, br.f_lo, br.f_lo, br.evaluations};
  if (std::fabs(br.f_hi) <= options.f_tol) return {br.hi, br.hi, br.f_hi, br.f_hi, br.evaluations};

  for (int it = 0; it < options.max_iterations; ++it) {
    if (br.hi - br.lo <= options.tol) break;
    const double mid = br.lo + 0.5 * (br.hi - br.lo);
    if (mid <= br.lo || mid >= br.hi) break;
    const double fm = f(mid);
    ++br.evaluations;
    if (std::isnan(fm)) {
      throw BracketError("bisect: function returned NaN", br.lo, br.hi,
                         br.f_lo, br.f_hi);
    }
    if (std::fabs(fm) <= options.f_tol) return {mid, mid, fm, fm, br.evaluations};
    if (sign_of(fm) == sign_of(br.f_lo)) {
      br.lo = mid;
      br.f_lo = fm;
    } else {
      br.hi = mid;
      br.f_hi = fm;
    }
  }
  return br;
}

Bracket illinois(const std::function<double(double)>& f, double lo, double hi,
                 const BisectionOptions& options) {
  Bracket br = expand(f, lo, hi, options);
  if (std::fabs(br.f_lo) <= options.f_tol) return {br.lo, br.lo, br.f_lo, br.f_lo, br.evaluations};
  if (std::fabs(br.f_hi) <= options.f_tol) return {br.hi, br.hi, br.f_hi, br.f_hi, br.evaluations};

  double g_lo = br.f_lo, g_hi = br.f_hi;  // Illinois-scaled copies
  int last = 0;                           // -1: lo moved last, +1: hi moved last
  double width_ref = br.hi - br.lo;
  int since_ref = 0;
  for (int it = 0; it < options.max_iterations; ++it) {
    const double width = br.hi - br.lo;
    if (width <= options.tol) break;
    const double mid = br.lo + 0.5 * width;
    if (mid <= br.lo || mid >= br.hi) break;
    bool force_mid = false;
    if (since_ref == 2) {
      force_mid = width > 0.5 * width_ref;
      width_ref = width;
      since_ref = 0;
    }
    double x = mid;
    if (!force_mid && std::isfinite(g_lo) && std::isfinite(g_hi)) {
      const double t = br.hi - g_hi * (br.hi - br.lo) / (g_hi - g_lo);
      if (t > br.lo && t < br.hi) x = t;
    }
    const double fx = f(x);
    ++br.evaluations;
    ++since_ref;
    if (std::isnan(fx)) {
      throw BracketError("bisect: function returned NaN", br.lo, br.hi,
                         br.f_lo, br.f_hi);
    }
    if (std::fabs(fx) <= options.f_tol) return {x, x, fx, fx, br.evaluations};
    if (sign_of(fx) == sign_of(br.f_lo)) {
      br.lo = x;
      br.f_lo = g_lo = fx;
      if (last == -1) g_hi *= 0.5;
      last = -1;
    } else {
      br.hi = x;
      br.f_hi = g_hi = fx;
      if (last == 1) g_lo *= 0.5;
      last = 1;
    }
  }
  return br;
}

double find_root(const std::function<double(double)>& f, double lo, double hi,
                 double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("find_root: tol must be positive");
  BisectionOptions options;
  options.tol = tol;
  const Bracket br = bisect(f, lo, hi, options);
  return br.lo + 0.5 * (br.hi - br.lo);
}

}  // namespace pensionlab::numerics
