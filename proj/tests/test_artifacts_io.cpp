#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "pensionlab/artifacts_io.hpp"
#include "pensionlab/errors.hpp"
#include "test_support.hpp"

using namespace pensionlab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pensionlab_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

std::string pointer_of(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.pointer + " | " + e.message;
  }
  return "";
}

}  // namespace

TEST_CASE("minimal config takes every default") {
  const auto cfg = parse_config(json::object());
  CHECK(cfg.preferences == EkmParams{5e-5, -2.0, 0.4});
  CHECK(cfg.market == MarketParams{});
  CHECK(cfg.mortality == "default");
  CHECK(cfg.table == default_mortality());
  CHECK(cfg.grid.base_size == 128);
  CHECK(cfg.grid.refinements == 4);
  CHECK(cfg.simulation.n_scenarios == 100000);
  CHECK(cfg.simulation.seed == 7);
  CHECK(cfg.initial_wealth == 8.0);
  CHECK_FALSE(cfg.accumulation.has_value());
}

TEST_CASE("config normalization round trip") {
  const json x = json::parse(R"({"preferences": {"alpha": 1e-3}, "grid": {"base_size": 64},
                                 "sweep": {"alpha": [1e-7, 1e-2]},
                                 "accumulation": {"start_age": 40, "contribution_rate": 0.12}})");
  const json n = normalize_config(x);
  CHECK(config_to_json(parse_config(n)) == n);
  CHECK(n["preferences"]["alpha"] == 1e-3);
  CHECK(n["preferences"]["rho"] == -2.0);
  CHECK(n["grid"]["base_size"] == 64);
  CHECK(n["accumulation"]["start_age"] == 40);
  const auto cfg = parse_config(n);
  REQUIRE(cfg.sweep.has_value());
  CHECK(cfg.sweep->triples().size() == 2);
}

TEST_CASE("config errors name the field") {
  CHECK(pointer_of(json{{"bogus", 1}}).rfind("/bogus", 0) == 0);
  CHECK(pointer_of(json{{"market", {{"sigma", -1}}}}).rfind("/market/sigma", 0) == 0);
  const std::string alpha = pointer_of(json{{"preferences", {{"alpha", 1.0}}}});
  CHECK(alpha.rfind("/preferences/alpha", 0) == 0);
  CHECK(alpha.find("[1e-07, 0.01]") != std::string::npos);
  CHECK(pointer_of(json{{"preferences", {{"rho", 0.5}}}}).rfind("/preferences/rho", 0) == 0);
  CHECK(pointer_of(json{{"grid", {{"base_size", "x"}}}}).rfind("/grid/base_size", 0) == 0);
  CHECK(pointer_of(json{{"market", {{"dt", 0.5}}}}).rfind("/market/dt", 0) == 0);
  CHECK(pointer_of(json{{"sweep", {{"alpha", json::array({1e-7, 2.0})}}}}).rfind("/sweep", 0) == 0);
  CHECK(pointer_of(json{{"mortality", "/no/such/file.csv"}}).rfind("/mortality", 0) == 0);
  CHECK(pointer_of(json{{"initial_wealth", 1e-6}}).rfind("/initial_wealth", 0) == 0);
  // outside the box only when explicitly allowed
  CHECK(pointer_of(json{{"preferences", {{"alpha", 0.2}}}, {"enforce_sweep_box", false}}).empty());
  const auto p = scratch("broken.json");
  std::ofstream(p) << "{\"market\": ";
  CHECK_THROWS_AS(load_config(p.string()), ConfigError);
}

TEST_CASE("mortality path resolves against the config directory") {
  const auto dir = scratch("cfgdir");
  fs::create_directories(dir);
  std::ofstream(dir / "t.csv") << "age,qx\n65,0.25\n66,1\n";
  std::ofstream(dir / "c.json") << R"({"mortality": "t.csv"})";
  const auto cfg = load_config((dir / "c.json").string());
  CHECK(cfg.table.horizon() == 2);
  CHECK(cfg.table.q(0) == 0.25);
  CHECK(config_to_json(cfg)["mortality"] == "t.csv");
}

TEST_CASE("policy save and load") {
  for (bool flat : {false, true}) {
    auto in = testsupport::small_inputs(6, 2.0);
    if (flat) in.market.mu = in.market.r;
    const EkmParams p;
    const auto sol = solve_for(p, in);
    const auto& pol = sol->policy;
    const auto path = scratch(flat ? "flat.json" : "policy.json");
    save_policy(pol, path.string(), 1e-10, json{{"note", "test"}});
    const auto back = load_policy(path.string());
    CHECK(back.warnings.empty());
    CHECK(back.meta["note"] == "test");
    CHECK(back.truncation_scale == 1e-10);
    CHECK(back.policy.grid == pol.grid);
    CHECK(back.policy.mortality == pol.mortality);
    CHECK(back.policy.market == pol.market);
    CHECK(back.policy.prefs == pol.prefs);
    REQUIRE(back.policy.horizon() == pol.horizon());
    for (std::size_t t = 0; t < pol.horizon(); ++t) {
      CHECK(back.policy.values[t] == pol.values[t]);
      for (std::size_t i = 0; i < pol.grid.size(); ++i) {
        const auto& a = pol.periods[t].nodes[i];
        const auto& b = back.policy.periods[t].nodes[i];
        CHECK(a.log_c == b.log_c);
        CHECK(a.log_eta == b.log_eta);
        CHECK(a.breakpoints == b.breakpoints);
        CHECK(a.i_min == b.i_min);
        CHECK(a.i_max == b.i_max);
      }
    }
    // simulate(load(save(p))) == simulate(p)
    const ScenarioBatch batch(2000, 5);
    const auto s1 = simulate_decumulation(pol, batch, 2.0);
    const auto s2 = simulate_decumulation(back.policy, batch, 2.0);
    CHECK(s1.consumption.values == s2.consumption.values);
    // the encoding is deterministic
    CHECK(policy_to_json(pol, 1e-10).dump() == policy_to_json(back.policy, 1e-10).dump());
  }
}

TEST_CASE("damaged policy files are rejected") {
  const auto in = testsupport::small_inputs(5, 2.0);
  const auto sol = solve_for(EkmParams{}, in);
  const auto path = scratch("damaged.json");
  save_policy(sol->policy, path.string());
  const std::string text = read_file(path.string());

  SUBCASE("truncated") {
    write_file_atomic(path.string(), text.substr(0, text.size() / 2));
    try {
      load_policy(path.string());
      FAIL("expected an error");
    } catch (const ArtifactError& e) {
      CHECK(std::string(e.what()).find("checksum") != std::string::npos);
    }
  }
  SUBCASE("version mismatch") {
    json doc = json::parse(text);
    doc["format_version"] = 99;
    CHECK_THROWS_AS(policy_from_json(doc), ArtifactError);
  }
  SUBCASE("edited value") {
    json doc = json::parse(text);
    const std::size_t node = sol->policy.grid.size() / 2;
    doc["payload"]["values"][0][node] = doc["payload"]["values"][0][node].get<double>() + 5.0;
    CHECK_THROWS_AS(policy_from_json(doc), ArtifactError);
    const auto lenient = policy_from_json(doc, false);
    CHECK_FALSE(lenient.warnings.empty());
    bool checksum = false, concavity = false;
    for (const auto& w : lenient.warnings) {
      checksum = checksum || w.find("checksum") != std::string::npos;
      concavity = concavity || w.find("concav") != std::string::npos;
    }
    CHECK(checksum);
    CHECK(concavity);
    // a re-signed edit still fails on the replayed decisions
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(doc["payload"].dump())));
    doc["checksum"] = buf;
    CHECK_THROWS_AS(policy_from_json(doc), ArtifactError);
  }
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("fan exports") {
  const auto in = testsupport::small_inputs(5, 2.0);
  const auto run = solve_and_simulate(EkmParams{}, in);
  const std::string csv = fan_to_csv(run.fan);
  std::istringstream s(csv);
  std::string line;
  std::getline(s, line);
  CHECK(line == "year,decile,replacement_ratio");
  std::size_t rows = 0;
  double prev = -1;
  int prev_year = -1;
  while (std::getline(s, line)) {
    ++rows;
    int year = 0, dec = 0;
    double v = 0;
    REQUIRE(std::sscanf(line.c_str(), "%d,%d,%lf", &year, &dec, &v) == 3);
    if (year != prev_year) prev = -1, prev_year = year;
    CHECK(v >= prev);
    prev = v;
    CHECK(dec % 10 == 0);
  }
  CHECK(rows == 9 * run.fan.years.size());
  const json j = fan_to_json(run.fan, run_meta(run.solve->policy, run.sim, in.n_scenarios, in.seed));
  CHECK(j["deciles"].size() == 9);
  CHECK(j["deciles"][4].size() == run.fan.years.size());
  CHECK(j["gain"]["L"] == run.fan.gain.log_neg_gain);
  CHECK(j["meta"]["seed"] == in.seed);
  CHECK(j["meta"]["grid"]["size"] == run.solve->policy.grid.size());
}

TEST_CASE("reals with infinities") {
  CHECK(real_to_json(INFINITY) == "inf");
  CHECK(real_to_json(-INFINITY) == "-inf");
  CHECK(real_from_json(json("-inf"), "/x") == -INFINITY);
  CHECK(real_from_json(json(0.1), "/x") == 0.1);
  CHECK_THROWS(real_from_json(json("abc"), "/x"));
  const double tricky = 0.1 + 0.2;
  CHECK(json::parse(json(tricky).dump()).get<double>() == tricky);
}
