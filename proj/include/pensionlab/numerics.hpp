#pragma once

// Log-domain scalar primitives.
//
// Conventions: -inf is log(0) and the ell-transform of a value of -inf.
// Probabilities are stored through the bijection L (see L_map), which keeps
// full relative precision in both tails.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pensionlab::numerics {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kLog2 = 0.69314718055994530942;

/// log(sum(exp(terms))). Throws std::domain_error on an empty sequence.
double logsumexp(std::span<const double> terms);
double logsumexp(std::initializer_list<double> terms);

/// log(exp(a) - exp(b)) for a >= b; -inf when a == b.
double log_diff_exp(double a, double b);

/// log((exp(a) - exp(b))^2), symmetric in its arguments.
double log_squared_diff_exp(double a, double b);

/// L(u) = log(2u) for u <= 1/2 and -log(2 - 2u) above.
double L_map(double u);
double L_inv(double y);

/// log(L_inv(hi) - L_inv(lo)) for lo <= hi, evaluated in whichever tail
/// keeps the difference accurate.
double log_prob_gap(double L_lo, double L_hi);

/// log(u) for a probability given in L-form.
double log_prob_from_L(double y);

/// Standard normal CDF and its log-domain variants. Tail values come from
/// log(erfc), saturating to -inf once erfc underflows (|x| beyond ~38).
double norm_cdf(double x);
double log_norm_cdf(double x);
double L_norm_cdf(double x);

/// Inverse standard normal CDF (Wichura's AS241 plus one Newton step).
double norm_quantile(double u);
/// Inverse of L_norm_cdf: the z with L(Phi(z)) = y.
double norm_quantile_from_L(double y);

/// Deterministic pairwise (tree) summation.
double pairwise_sum(std::span<const double> values);

class BracketError : public std::runtime_error {
 public:
  BracketError(const std::string& what, double lo, double hi, double f_lo,
               double f_hi)
      : std::runtime_error(what), lo(lo), hi(hi), f_lo(f_lo), f_hi(f_hi) {}
  double lo, hi, f_lo, f_hi;
};

/// A sign-change bracket [lo, hi] of a scalar function.
struct Bracket {
  double lo = 0.0;
  double hi = 0.0;
  double f_lo = 0.0;
  double f_hi = 0.0;
  int evaluations = 0;
};

struct BisectionOptions {
  double tol = 1e-12;          // absolute bracket width at which to stop
  double f_tol = 0.0;          // stop early once |f| <= f_tol
  int max_expansions = 60;     // bracket doublings before giving up
  int max_iterations = 400;
};

/// Expands [lo, hi] geometrically until f changes sign, then bisects until
/// the bracket width is <= tol (or the bracket collapses to adjacent doubles).
/// An exact zero (or |f| <= f_tol) is returned as a degenerate bracket.
Bracket bisect(const std::function<double(double)>& f, double lo, double hi,
               const BisectionOptions& options = {});

/// Same contract as `bisect`, but shrinks the bracket with Illinois
/// (modified regula falsi) steps, falling back to a bisection step whenever
/// two consecutive steps fail to halve it.
Bracket illinois(const std::function<double(double)>& f, double lo, double hi,
                 const BisectionOptions& options = {});

/// Midpoint of the final bisection bracket.
double find_root(const std::function<double(double)>& f, double lo, double hi,
                 double tol);

}  // namespace pensionlab::numerics
