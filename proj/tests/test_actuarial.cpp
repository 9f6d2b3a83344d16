#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "pensionlab/actuarial.hpp"

using namespace pensionlab;

TEST_CASE("two-row table") {
  const auto t = parse_mortality_csv("age,qx\n65,0.5\n66,1.0\n");
  REQUIRE(t.horizon() == 2);
  CHECK(t.retirement_age() == 65);
  CHECK(t.max_age() == 66);
  CHECK(t.death_weights()[0] == 0.5);
  CHECK(t.death_weights()[1] == 0.5);
}

TEST_CASE("death weights sum to one") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> q(2 + k);
    for (auto& x : q) x = d(rng);
    q.back() = 1.0;
    const MortalityTable t(60, q);
    double s = 0;
    for (double w : t.death_weights()) s += w;
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
  double s = 0;
  for (double w : default_mortality().death_weights()) s += w;
  CHECK(std::fabs(s - 1.0) < 1e-12);
}

TEST_CASE("default Gompertz-Makeham table") {
  const auto& t = default_mortality();
  CHECK(t.retirement_age() == 65);
  CHECK(t.max_age() == 120);
  CHECK(t.horizon() == 56);
  CHECK(t.q(55) == 1.0);
  for (int age = 65; age < 120; ++age) {
    const double ref = 1.0 - std::exp(-(0.0002 + 2.7e-6 * std::pow(1.124, age)));
    CHECK(t.q(static_cast<std::size_t>(age - 65)) == doctest::Approx(ref).epsilon(1e-14));
  }
  for (std::size_t j = 6; j < t.horizon(); ++j) CHECK(t.q(j) > t.q(j - 1));
}

TEST_CASE("shipped default CSV equals the built-in table") {
  const auto t = load_mortality(std::string(PENSIONLAB_SOURCE_DIR) + "/data/mortality_default.csv");
  CHECK(t == default_mortality());
  CHECK(parse_mortality_csv(mortality_to_csv(t)) == t);
}

TEST_CASE("ingestion errors carry the row") {
  auto row_of = [](const std::string& csv) -> std::size_t {
    try {
      parse_mortality_csv(csv);
    } catch (const IngestionError& e) {
      return e.row;
    }
    return 999;
  };
  CHECK(row_of("age,qx\n65,0.1\n67,1\n") == 2);    // gap
  CHECK(row_of("age,qx\n65,0.1\n66,1.5\n") == 2);  // q > 1
  CHECK(row_of("age,qx\n65,-0.1\n66,1\n") == 1);   // q < 0
  CHECK(row_of("age,qx\n65,0.1\n66,0.9\n") == 2);  // terminal q != 1
  CHECK(row_of("year,q\n65,1\n") == 0);            // header
  CHECK_THROWS_AS(load_mortality("/nonexistent/table.csv"), IngestionError);
}

TEST_CASE("tontine credit") {
  const MortalityTable t(65, {0.0, 0.5, 0.25, 1.0});
  CHECK(*tontine_credit(0, t) == 0.0);
  CHECK(*tontine_credit(1, t) == 1.0);
  CHECK(!tontine_credit(3, t).has_value());
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> d(0.0, 0.999);
  for (int k = 0; k < 200; ++k) {
    const MortalityTable r(65, {d(rng), 1.0});
    CHECK((1.0 - r.q(0)) * (1.0 + *tontine_credit(0, r)) == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("adequate funding") {
  MarketParams zero{0.05, 0.2, 0.0, 1.0};
  const MortalityTable certain(65, {0, 0, 0, 0, 1});
  CHECK(adequate_funding(0.4, zero, certain) == doctest::Approx(5 * 0.4).epsilon(1e-15));
  const MortalityTable one(65, {1.0});
  CHECK(adequate_funding(0.7, MarketParams{}, one) == doctest::Approx(0.7).epsilon(1e-15));

  // direct summation from the shipped CSV, read independently of the loader
  std::ifstream in(std::string(PENSIONLAB_SOURCE_DIR) + "/data/mortality_default.csv");
  std::string line;
  std::getline(in, line);
  std::vector<double> q;
  while (std::getline(in, line)) q.push_back(std::stod(line.substr(line.find(',') + 1)));
  long double sum = 0, alive = 1;
  for (std::size_t t = 0; t < q.size(); ++t) {
    sum += std::exp(-0.01L * t) * alive;
    alive *= 1.0L - q[t];
  }
  const MarketParams m;
  CHECK(adequate_funding(0.4, m, default_mortality()) == doctest::Approx(static_cast<double>(0.4L * sum)).epsilon(1e-13));

  // linear in a, decreasing in r and in mortality
  CHECK(adequate_funding(0.8, m, default_mortality()) == doctest::Approx(2 * adequate_funding(0.4, m, default_mortality())));
  MarketParams high_r = m;
  high_r.r = 0.03;
  CHECK(adequate_funding(0.4, high_r, default_mortality()) < adequate_funding(0.4, m, default_mortality()));
  std::vector<double> worse = default_mortality().qx();
  for (auto& x : worse) x = std::min(1.0, x * 1.2 + 0.001);
  CHECK(adequate_funding(0.4, m, MortalityTable(65, worse)) < adequate_funding(0.4, m, default_mortality()));
}
