#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "pensionlab/service.hpp"
#include "test_support.hpp"

using namespace pensionlab;
using namespace pensionlab::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pensionlab_svc_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// small config shared by the tests: 8 retirement years, coarse grid
RunConfig small_config(const fs::path& dir) {
  std::ofstream(dir / "table.csv") << mortality_to_csv(testsupport::short_table(8));
  std::ofstream(dir / "config.json")
      << R"({"mortality": "table.csv", "grid": {"base_size": 48, "refinements": 0},
            "simulation": {"n_scenarios": 3000, "seed": 5}, "initial_wealth": 3})";
  return load_config((dir / "config.json").string());
}

const json kBody = {{"alpha", 5e-5}, {"rho", -2.0}, {"a", 0.4}};

}  // namespace

TEST_CASE("request validation") {
  const auto dir = scratch_dir("validation");
  Service svc({small_config(dir), "", 4, 1, {}});
  auto r = svc.submit({{"alpha", 1.0}, {"rho", -2.0}, {"a", 0.4}});
  CHECK(r.status == 400);
  CHECK(r.body["fields"]["alpha"].get<std::string>().find("[1e-07, 0.01]") != std::string::npos);
  r = svc.submit({{"alpha", 1e-3}, {"a", 0.4}});
  CHECK(r.status == 400);
  CHECK(r.body["fields"]["rho"] == "required");
  r = svc.submit({{"alpha", 1e-3}, {"rho", "x"}, {"a", 0.4}, {"extra", 1}});
  CHECK(r.status == 400);
  CHECK(r.body["fields"].contains("rho"));
  CHECK(r.body["fields"].contains("extra"));
  r = svc.submit({{"alpha", 1e-3}, {"rho", -2.0}, {"a", 0.4}, {"overrides", {{"preferences", {{"alpha", 0.2}}}}}});
  CHECK(r.status == 400);
  r = svc.submit({{"alpha", 1e-3}, {"rho", -2.0}, {"a", 0.4}, {"overrides", {{"grid", {{"base_size", 1}}}}}});
  CHECK(r.status == 400);
  CHECK(r.body["fields"].contains("/grid/base_size"));
  CHECK(svc.job("nope").status == 404);
  CHECK(svc.fan("nope").status == 404);
  CHECK(svc.strategy("nope", "50").status == 404);
  CHECK(svc.strategy("nope", "55").status == 400);
  CHECK(svc.strategy("nope", "abc").status == 400);
}

TEST_CASE("jobs, dedup, fan and strategy against a fresh run") {
  const auto dir = scratch_dir("jobs");
  const RunConfig cfg = small_config(dir);
  const fs::path cache = dir / "cache";
  std::string id;
  {
    Service svc({cfg, cache.string(), 4, 1, {}});
    const auto first = svc.submit(kBody);
    CHECK((first.status == 202 || first.status == 200));
    id = first.body["job_id"];
    CHECK(svc.submit(kBody).body["job_id"] == id);
    CHECK(id == Service::job_id(EkmParams{}, Service::config_hash(cfg)));
    CHECK(svc.wait(id) == JobState::done);
    const auto again = svc.submit(kBody);
    CHECK(again.status == 200);
    CHECK(again.body["state"] == "done");
    CHECK(again.body["result"] == "/api/fan?job_id=" + id);

    const auto f = svc.fan(id);
    REQUIRE(f.status == 200);
    const json fan = json::parse(f.raw);
    RunConfig c = cfg;
    c.preferences = EkmParams{};
    const auto in = c.pipeline();
    const auto fresh = solve_and_simulate(c.preferences, in);
    const json expect = fan_to_json(fresh.fan, run_meta(fresh.solve->policy, fresh.sim, in.n_scenarios, in.seed));
    CHECK(fan["deciles"] == expect["deciles"]);
    CHECK(fan["years"] == expect["years"]);
    CHECK(fan["gain"] == expect["gain"]);
    CHECK(fan["meta"]["seed"] == 5);
    CHECK(fan["meta"]["config_hash"] == Service::config_hash(cfg));
    for (std::size_t t = 0; t < fan["years"].size(); ++t)
      for (int k = 1; k < 9; ++k) CHECK(fan["deciles"][k][t].get<double>() >= fan["deciles"][k - 1][t].get<double>());

    const auto s = svc.strategy(id, "50");
    REQUIRE(s.status == 200);
    const auto pts = strategy_at_percentile(fresh.solve->policy, fresh.sim, 50);
    REQUIRE(s.body["consumption"].size() == pts.size());
    for (std::size_t t = 0; t < pts.size(); ++t) {
      CHECK(s.body["consumption"][t].get<double>() == pts[t].consumption);
      CHECK(s.body["dispersion"][t].get<double>() == pts[t].dispersion);
    }
    CHECK(s.body["dispersion"].back() == 0.0);
    CHECK(fs::exists(cache / (id + ".fan.json")));
    CHECK(fs::exists(cache / (id + ".strategy.json")));
    CHECK(fs::exists(cache / (id + ".policy.json")));
    CHECK(load_policy((cache / (id + ".policy.json")).string()).warnings.empty());
  }
  SUBCASE("warm cache answers at once") {
    Service warm({cfg, cache.string(), 0, 1, {}});  // queue bound 0: only cache hits are accepted
    const auto r = warm.submit(kBody);
    CHECK(r.status == 200);
    CHECK(r.body["state"] == "done");
    CHECK(r.body["job_id"] == id);
    CHECK(warm.fan_body(id) == read_file((cache / (id + ".fan.json")).string()));
    const auto cold = warm.submit({{"alpha", 1e-3}, {"rho", -2.0}, {"a", 0.4}});
    CHECK(cold.status == 429);
    CHECK(cold.body["max_queue"] == 0);
  }
  SUBCASE("different config, different job") {
    Service svc({cfg, cache.string(), 4, 1, {}});
    const auto r = svc.submit({{"alpha", 5e-5}, {"rho", -2.0}, {"a", 0.4}, {"overrides", {{"simulation", {{"seed", 6}}}}}});
    CHECK(r.body["job_id"] != id);
    CHECK(r.body["config_hash"] != Service::config_hash(cfg));
    CHECK(svc.wait(r.body["job_id"]) == JobState::done);
  }
}

TEST_CASE("not-done jobs answer 409 with a labelled preview") {
  const auto dir = scratch_dir("preview");
  RunConfig cfg = small_config(dir);
  cfg.grid.base_size = 400;  // slow enough to observe the job before it finishes
  cfg.simulation.n_scenarios = 20000;
  Service svc({cfg, "", 4, 1, {EkmParams{1e-3, -2.0, 0.4}}});
  const std::string warm_id = Service::job_id(EkmParams{1e-3, -2.0, 0.4}, Service::config_hash(cfg));
  CHECK(svc.wait(warm_id) == JobState::done);
  const auto r = svc.submit(kBody);
  const std::string id = r.body["job_id"];
  const auto f = svc.fan(id);
  const auto s = svc.strategy(id, "50");
  if (f.status == 409) {
    CHECK(f.body["state"] != "done");
    REQUIRE(f.body.contains("preview"));
    CHECK(f.body["preview"]["approx"] == true);
    CHECK(f.body["preview"]["source_job"] == warm_id);
    CHECK(f.body["preview"]["fan"]["deciles"].size() == 9);
  } else {
    MESSAGE("job finished before the first poll; 409 path not observed");
  }
  if (s.status != 200) CHECK(s.status == 409);
  CHECK(svc.wait(id) == JobState::done);
  CHECK(svc.fan(id).status == 200);
}

TEST_CASE("HTTP endpoints") {
  const auto dir = scratch_dir("http");
  RunConfig cfg = small_config(dir);
  cfg.grid.base_size = 300;
  Service svc({cfg, "", 4, 1, {}});
  httplib::Server server;
  svc.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  auto h = cli.Get("/api/health");
  REQUIRE(h);
  CHECK(h->status == 200);
  CHECK(h->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(json::parse(h->body)["status"] == "ok");

  auto bad = cli.Post("/api/solve", R"({"alpha": 1, "rho": -2, "a": 0.4})", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  auto garbage = cli.Post("/api/solve", "{not json", "application/json");
  REQUIRE(garbage);
  CHECK(garbage->status == 400);

  auto post = cli.Post("/api/solve", kBody.dump(), "application/json");
  REQUIRE(post);
  CHECK((post->status == 202 || post->status == 200));
  const std::string id = json::parse(post->body)["job_id"];

  // status polls stay fast while the solve runs
  double worst_ms = 0;
  for (;;) {
    const auto t0 = std::chrono::steady_clock::now();
    auto j = cli.Get(("/api/job?job_id=" + id).c_str());
    worst_ms = std::max(worst_ms, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    REQUIRE(j);
    CHECK(j->status == 200);
    const std::string st = json::parse(j->body)["state"];
    if (st == "done" || st == "failed") {
      CHECK(st == "done");
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  CHECK(worst_ms < 50.0);

  auto f = cli.Get(("/api/fan?job_id=" + id).c_str());
  REQUIRE(f);
  CHECK(f->status == 200);
  CHECK(f->body == *svc.fan_body(id));
  auto s = cli.Get(("/api/strategy?job_id=" + id + "&percentile=90").c_str());
  REQUIRE(s);
  CHECK(s->status == 200);
  CHECK(json::parse(s->body)["percentile"] == 90);
  auto missing = cli.Get("/api/strategy?job_id=x");
  REQUIRE(missing);
  CHECK(missing->status == 400);
  auto unknown = cli.Get("/api/fan?job_id=zzz");
  REQUIRE(unknown);
  CHECK(unknown->status == 404);

  server.stop();
  th.join();
}
