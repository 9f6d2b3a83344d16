#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pensionlab/market.hpp"

namespace pensionlab {

class IngestionError : public std::runtime_error {
 public:
  IngestionError(const std::string& what, std::size_t row)
      : std::runtime_error(what), row(row) {}
  std::size_t row;  // 1-based data row (header excluded); 0 for file-level errors
};

/// Annual conditional death probabilities from retirement to the table's end.
///
/// Index j = 0 is the retirement age. q(j) is the probability of dying in the
/// year of age retirement_age + j having survived to its start; the last
/// entry is 1 so the horizon is finite.
class MortalityTable {
 public:
  MortalityTable(int retirement_age, std::vector<double> q);

  int retirement_age() const { return retirement_age_; }
  int max_age() const { return retirement_age_ + static_cast<int>(q_.size()) - 1; }
  std::size_t horizon() const { return q_.size(); }
  int age(std::size_t j) const { return retirement_age_ + static_cast<int>(j); }

  double q(std::size_t j) const { return q_.at(j); }
  double survival(std::size_t j) const { return 1.0 - q_.at(j); }
  const std::vector<double>& qx() const { return q_; }

  /// Unconditional death-in-year weights q_j prod_{i<j}(1 - q_i); sum to 1.
  const std::vector<double>& death_weights() const { return death_weights_; }

  bool operator==(const MortalityTable& o) const {
    return retirement_age_ == o.retirement_age_ && q_ == o.q_;
  }

 private:
  int retirement_age_;
  std::vector<double> q_;
  std::vector<double> death_weights_;
};

/// Reads a CSV with header `age,qx`, one row per consecutive integer age.
MortalityTable load_mortality(const std::string& path);
MortalityTable parse_mortality_csv(const std::string& text);
std::string mortality_to_csv(const MortalityTable& table);

struct GompertzMakeham {
  double A = 0.0002;
  double B = 2.7e-6;
  double c = 1.124;
};

/// q_x = 1 - exp(-(A + B c^x)) for x in [retirement_age, max_age), 1 at max_age.
MortalityTable gompertz_makeham_table(int retirement_age = 65, int max_age = 120,
                                      const GompertzMakeham& law = {});

/// The built-in table (Gompertz-Makeham, ages 65 to 120).
const MortalityTable& default_mortality();

/// q/(1-q): the survivor credit as a fraction of wealth. nullopt on the
/// terminal year (q = 1), where no credit is defined.
std::optional<double> tontine_credit(std::size_t j, const MortalityTable& table);

/// Risk-free, survivor-credited cost of consuming `a` in every retirement year.
double adequate_funding(double a, const MarketParams& m, const MortalityTable& table);

}  // namespace pensionlab
