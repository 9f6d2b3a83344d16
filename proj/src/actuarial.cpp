#include "pensionlab/actuarial.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pensionlab {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

MortalityTable::MortalityTable(int retirement_age, std::vector<double> q)
    : retirement_age_(retirement_age), q_(std::move(q)) {
  if (q_.empty()) throw IngestionError("mortality table is empty", 0);
  for (std::size_t j = 0; j < q_.size(); ++j) {
    if (!(q_[j] >= 0.0 && q_[j] <= 1.0))
      throw IngestionError("qx outside [0,1] at age " + std::to_string(age(j)), j + 1);
  }
  if (q_.back() != 1.0)
    throw IngestionError("terminal qx must equal 1 (age " + std::to_string(max_age()) + ")",
                         q_.size());
  death_weights_.resize(q_.size());
  double alive = 1.0;
  for (std::size_t j = 0; j < q_.size(); ++j) {
    death_weights_[j] = alive * q_[j];
    alive *= 1.0 - q_[j];
  }
}

MortalityTable parse_mortality_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("mortality CSV is empty", 0);
  if (!line.empty() && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  if (trim(line) != "age,qx")
    throw IngestionError("mortality CSV header must be `age,qx`", 0);

  std::vector<double> q;
  int first_age = 0;
  int expected_age = 0;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw IngestionError("row " + std::to_string(row) + ": expected `age,qx`", row);
    int age = 0;
    double qx = 0.0;
    if (!parse_number(trim(line.substr(0, comma)), age))
      throw IngestionError("row " + std::to_string(row) + ": bad age", row);
    if (!parse_number(trim(line.substr(comma + 1)), qx))
      throw IngestionError("row " + std::to_string(row) + ": bad qx", row);
    if (row == 1) {
      first_age = age;
    } else if (age != expected_age) {
      throw IngestionError("row " + std::to_string(row) + ": age " + std::to_string(age) +
                               " breaks the contiguous sequence (expected " +
                               std::to_string(expected_age) + ")",
                           row);
    }
    if (!(qx >= 0.0 && qx <= 1.0))
      throw IngestionError("row " + std::to_string(row) + ": qx outside [0,1]", row);
    expected_age = age + 1;
    q.push_back(qx);
  }
  if (q.empty()) throw IngestionError("mortality CSV has no rows", 0);
  if (q.back() != 1.0)
    throw IngestionError("row " + std::to_string(row) + ": terminal qx must equal 1", row);
  return MortalityTable(first_age, std::move(q));
}

MortalityTable load_mortality(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open mortality file " + path, 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_mortality_csv(ss.str());
}

std::string mortality_to_csv(const MortalityTable& table) {
  std::string out = "age,qx\n";
  char buf[64];
  for (std::size_t j = 0; j < table.horizon(); ++j) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, table.q(j));
    out += std::to_string(table.age(j)) + "," + std::string(buf, ptr) + "\n";
  }
  return out;
}

MortalityTable gompertz_makeham_table(int retirement_age, int max_age,
                                      const GompertzMakeham& law) {
  if (max_age < retirement_age) throw std::invalid_argument("max_age < retirement_age");
  std::vector<double> q;
  for (int x = retirement_age; x < max_age; ++x) {
    const double hazard = law.A + law.B * std::pow(law.c, x);
    q.push_back(std::min(1.0, -std::expm1(-hazard)));
  }
  q.push_back(1.0);
  return MortalityTable(retirement_age, std::move(q));
}

const MortalityTable& default_mortality() {
  static const MortalityTable table = gompertz_makeham_table();
  return table;
}

std::optional<double> tontine_credit(std::size_t j, const MortalityTable& table) {
  const double q = table.q(j);
  if (q >= 1.0) return std::nullopt;
  return q / (1.0 - q);
}

double adequate_funding(double a, const MarketParams& m, const MortalityTable& table) {
  double cost = 0.0;
  double alive = 1.0;
  for (std::size_t j = 0; j < table.horizon(); ++j) {
    cost += std::exp(-m.r * static_cast<double>(j) * m.dt) * alive;
    alive *= table.survival(j);
  }
  return a * cost;
}

}  // namespace pensionlab
