// pensionlab: batch entry points (solve, simulate, fan, sweep, validate, serve).
//
// Exit codes: 0 ok, 1 validation FAIL, 2 config or input error, 3 solver
// error, 4 infeasible start wealth. Results go to stdout as one JSON line
// each; diagnostics go to stderr.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pensionlab/artifacts_io.hpp"
#include "pensionlab/errors.hpp"
#include "pensionlab/numerics.hpp"
#include "pensionlab/parallel.hpp"
#include "pensionlab/service.hpp"
#include "pensionlab/validation.hpp"

using namespace pensionlab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitFail = 1, kExitConfig = 2, kExitSolver = 3, kExitInfeasible = 4;

struct ExitError {
  int code;
  std::string message;
  std::string pointer;
};

void emit(const json& j) {
  std::cout << j.dump() << '\n' << std::flush;
}

// Full-precision numbers in every JSON line.
json num(double x) { return real_to_json(x); }

struct ParamOverrides {
  std::optional<double> alpha, rho, a;
};

RunConfig load_cfg(const std::string& path, const ParamOverrides& ov = {}) {
  try {
    json doc;
    try {
      doc = json::parse(read_file(path));
    } catch (const ArtifactError& e) {
      throw ConfigError("", e.what());
    } catch (const json::parse_error& e) {
      throw ConfigError("", std::string("invalid JSON: ") + e.what());
    }
    if (ov.alpha || ov.rho || ov.a) {
      if (!doc.is_object()) throw ConfigError("", "expected an object");
      if (!doc.contains("preferences") || doc["preferences"].is_null()) doc["preferences"] = json::object();
      if (ov.alpha) doc["preferences"]["alpha"] = *ov.alpha;
      if (ov.rho) doc["preferences"]["rho"] = *ov.rho;
      if (ov.a) doc["preferences"]["a"] = *ov.a;
    }
    return parse_config(doc, fs::absolute(path).parent_path().string());
  } catch (const ConfigError& e) {
    throw ExitError{kExitConfig, e.what(), e.pointer};
  }
}

LoadedPolicy load_pol(const std::string& path, bool strict) {
  try {
    return load_policy(path, strict);
  } catch (const ArtifactError& e) {
    throw ExitError{kExitConfig, e.what(), ""};
  }
}

template <class F>
auto solver_step(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ExitError&) {
    throw;
  } catch (const InfeasibleStartError& e) {
    throw ExitError{kExitInfeasible, e.what(), ""};
  } catch (const ConfigError& e) {
    throw ExitError{kExitConfig, e.what(), e.pointer};
  } catch (const std::exception& e) {
    throw ExitError{kExitSolver, e.what(), ""};
  }
}

json params_json(const EkmParams& p) { return {{"alpha", num(p.alpha)}, {"rho", num(p.rho)}, {"a", num(p.a)}}; }

json gain_line(const GainEstimate& g, double solver_ell) {
  const double ratio = std::fabs(std::expm1(-solver_ell - g.log_neg_gain));
  const double in_se = g.se_rel > 0.0 ? ratio / g.se_rel : numerics::kInf;
  return {{"gain", gain_to_json(g)},
          {"solver_ell", num(solver_ell)},
          {"solver_value", num(-std::exp(-solver_ell))},
          {"diff_in_se", num(in_se)},
          {"self_consistency", !g.degenerate && ratio <= 3.0 * g.se_rel ? "PASS" : "FAIL"}};
}

// ---- solve ------------------------------------------------------------------

struct SolveArgs {
  std::string config, out;
  ParamOverrides ov;
};

int cmd_solve(const SolveArgs& a) {
  const RunConfig cfg = load_cfg(a.config, a.ov);
  const PipelineInputs in = cfg.pipeline();
  auto solved = solver_step([&] { return solve_for(cfg.preferences, in); });
  for (std::size_t k = 0; k < solved->refinements.size(); ++k) {
    const auto& r = solved->refinements[k];
    emit({{"refinement", k},
          {"grid_size", r.grid_size},
          {"max_rel_change", num(r.max_rel_change)},
          {"max_rel_change_initial", num(r.max_rel_change_initial)},
          {"min_ell_increase", num(r.min_ell_increase)}});
  }
  const auto violations = solved->policy.validate();
  if (!violations.empty())
    throw ExitError{kExitSolver, std::to_string(violations.size()) + " invariant violations, first: " + violations.front(), ""};
  const auto& grid = solved->policy.grid;
  const auto node = grid.snap_down(cfg.initial_wealth);
  json meta = {{"params", params_json(cfg.preferences)}, {"config", config_to_json(cfg)}};
  try {
    save_policy(solved->policy, a.out, cfg.truncation_scale, meta);
  } catch (const std::exception& e) {
    throw ExitError{kExitConfig, e.what(), ""};
  }
  emit({{"policy", a.out},
        {"params", params_json(cfg.preferences)},
        {"grid_size", grid.size()},
        {"refinements", solved->refinements.size()},
        {"invariant_violations", 0},
        {"initial_wealth", num(cfg.initial_wealth)},
        {"start_wealth", node ? num(grid[*node]) : json(nullptr)},
        {"solver_ell", node ? num(solved->policy.values.front().ell()[*node]) : json(nullptr)}});
  return 0;
}

// ---- simulate / fan -----------------------------------------------------------

struct SimArgs {
  std::string policy, config, out, paths_out;
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;
  std::optional<double> w0;
  unsigned workers = 0;
};

struct SimSettings {
  std::size_t n;
  std::uint64_t seed;
  double w0;
  std::optional<AccumulationConfig> accumulation;
};

SimSettings sim_settings(const SimArgs& a, const PolicyTable& policy) {
  SimSettings s{100000, 7, policy.initial_wealth > 0 ? policy.initial_wealth : 8.0, std::nullopt};
  if (!a.config.empty()) {
    const RunConfig cfg = load_cfg(a.config);
    s.n = cfg.simulation.n_scenarios;
    s.seed = cfg.simulation.seed;
    s.w0 = cfg.initial_wealth;
    s.accumulation = cfg.accumulation;
  }
  if (a.n) s.n = *a.n;
  if (a.seed) s.seed = *a.seed;
  if (a.w0) s.w0 = *a.w0;
  if (s.n < 10) throw ExitError{kExitConfig, "--n must be at least 10", ""};
  return s;
}

int cmd_simulate(const SimArgs& a) {
  const LoadedPolicy lp = load_pol(a.policy, true);
  const PolicyTable& policy = lp.policy;
  const SimSettings s = sim_settings(a, policy);
  const ScenarioBatch batch(s.n, s.seed);
  json line = {{"policy", a.policy}, {"n_scenarios", s.n}, {"seed", s.seed}};
  DecumulationResult sim;
  if (s.accumulation) {
    const auto acc = solver_step(
        [&] { return simulate_accumulation(*s.accumulation, policy.mortality.retirement_age(), policy.market, batch, a.workers); });
    std::vector<double> sorted = acc.wealth;
    std::sort(sorted.begin(), sorted.end());
    json dec = json::array();
    for (int k = 1; k <= 9; ++k) dec.push_back(num(sorted_quantile(sorted, 0.1 * k)));
    line["retirement_wealth_deciles"] = dec;
    sim = solver_step([&] { return simulate_decumulation(policy, batch, acc.wealth, a.workers); });
    line["gain"] = gain_to_json(estimate_gain(sim.consumption, policy.mortality, policy.prefs, policy.market.dt));
  } else {
    sim = solver_step([&] { return simulate_decumulation(policy, batch, s.w0, a.workers); });
    line["initial_wealth"] = num(s.w0);
    line["start_wealth"] = num(sim.snapped_wealth);
    line.update(gain_line(estimate_gain(sim.consumption, policy.mortality, policy.prefs, policy.market.dt),
                          policy.values.front().ell()[sim.start_node]));
  }
  if (!a.paths_out.empty()) {
    std::string csv = "scenario,year,consumption\n";
    char buf[96];
    for (std::size_t i = 0; i < sim.consumption.n_scenarios; ++i)
      for (std::size_t t = 0; t < sim.consumption.horizon; ++t) {
        std::snprintf(buf, sizeof buf, "%zu,%d,%.17g\n", i, policy.mortality.age(t), sim.consumption.at(i, t));
        csv += buf;
      }
    write_file_atomic(a.paths_out, csv);
    line["paths"] = a.paths_out;
  }
  emit(line);
  return 0;
}

std::string sidecar_path(const std::string& csv) {
  fs::path p(csv);
  if (p.extension() == ".csv") p.replace_extension(".json");
  else p += ".json";
  return p.string();
}

int cmd_fan(const SimArgs& a) {
  const LoadedPolicy lp = load_pol(a.policy, true);
  const PolicyTable& policy = lp.policy;
  const SimSettings s = sim_settings(a, policy);
  const ScenarioBatch batch(s.n, s.seed);
  const auto sim = solver_step([&] { return simulate_decumulation(policy, batch, s.w0, a.workers); });
  const FanDiagram fan = fan_from_paths(sim.consumption, policy.mortality, policy.prefs, policy.market.dt);
  const json meta = run_meta(policy, sim, s.n, s.seed);
  const std::string sidecar = sidecar_path(a.out);
  write_file_atomic(a.out, fan_to_csv(fan));
  write_file_atomic(sidecar, fan_to_json(fan, meta).dump() + "\n");
  json line = {{"fan", a.out}, {"sidecar", sidecar}, {"rows", 9 * fan.years.size()}, {"start_wealth", num(sim.snapped_wealth)}};
  line.update(gain_line(fan.gain, policy.values.front().ell()[sim.start_node]));
  emit(line);
  return 0;
}

// ---- sweep ------------------------------------------------------------------

struct SweepArgs {
  std::string config, out_dir, cache_dir;
  std::vector<double> alpha, rho, a;
};

std::vector<EkmParams> lattice_from(const RunConfig& cfg, const std::vector<double>& alpha,
                                    const std::vector<double>& rho, const std::vector<double>& a) {
  SweepLattice lat = cfg.sweep.value_or(
      SweepLattice{{cfg.preferences.alpha}, {cfg.preferences.rho}, {cfg.preferences.a}});
  if (!alpha.empty()) lat.alpha = alpha;
  if (!rho.empty()) lat.rho = rho;
  if (!a.empty()) lat.a = a;
  return lat.triples();
}

std::string fan_file(const std::string& dir, const EkmParams& p) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "fan_alpha%.6g_rho%.6g_a%.6g.csv", p.alpha, p.rho, p.a);
  return (fs::path(dir) / buf).string();
}

int cmd_sweep(const SweepArgs& a) {
  const RunConfig cfg = load_cfg(a.config);
  const auto triples = lattice_from(cfg, a.alpha, a.rho, a.a);
  SweepBox box;
  if (!cfg.enforce_sweep_box) box = SweepBox{0.0, numerics::kInf, -numerics::kInf, 0.0, 0.0, numerics::kInf};
  for (const auto& p : triples) {
    try {
      p.validate();
    } catch (const std::invalid_argument& e) {
      throw ExitError{kExitConfig, e.what(), "/sweep"};
    }
  }
  bool failed = false;
  if (!a.cache_dir.empty()) {
    // warm the service cache: the same code path the server uses
    for (const auto& p : triples)
      for (const auto& [name, message] : box.violations(p)) throw ExitError{kExitConfig, message, "/sweep/" + name};
    service::ServiceOptions so;
    so.base = cfg;
    so.cache_dir = a.cache_dir;
    so.precompute = triples;
    so.solve_workers = resolve_workers(cfg.workers);
    service::Service svc(so);
    for (const auto& p : triples) {
      const std::string id = service::Service::job_id(p, service::Service::config_hash(cfg));
      const auto state = svc.wait(id);
      json line = {{"params", params_json(p)}, {"job_id", id}, {"state", service::state_name(state)}};
      if (state == service::JobState::done) {
        const json fan = json::parse(*svc.fan_body(id));
        line["gain"] = fan["gain"];
        line["solver_ell"] = fan["meta"]["solver_ell"];
        if (fan["years"].size() > 10)
          line["fan_width_10y"] = num(fan["deciles"][8][10].get<double>() - fan["deciles"][0][10].get<double>());
      } else {
        failed = true;
        line["error"] = svc.job(id).body.value("detail", "");
      }
      emit(line);
    }
    return failed ? kExitSolver : 0;
  }
  const auto entries = sweep(triples, cfg.pipeline(), box);
  for (const auto& e : entries) {
    json line = {{"params", params_json(e.params)}};
    if (!e.output) {
      failed = true;
      line["state"] = "failed";
      line["error"] = e.error;
    } else {
      const RunOutput& o = *e.output;
      line["state"] = "done";
      line.update(gain_line(o.fan.gain, o.solver_ell));
      line["start_wealth"] = num(o.sim.snapped_wealth);
      line["grid_size"] = o.solve->policy.grid.size();
      if (o.fan.years.size() > 10) line["fan_width_10y"] = num(fan_width(o.fan, 10));
      if (!a.out_dir.empty()) {
        const std::string path = fan_file(a.out_dir, e.params);
        write_file_atomic(path, fan_to_csv(o.fan));
        line["fan"] = path;
      }
    }
    emit(line);
  }
  return failed ? kExitSolver : 0;
}

// ---- validate ---------------------------------------------------------------

struct ValidateArgs {
  std::string config, policy;
  std::size_t oracle_n = 512, oracle_points = 1000000, kernel_draws = 1000000;
  bool skip_oracle = false;
};

int cmd_validate(const ValidateArgs& a) {
  if (a.config.empty() && a.policy.empty()) throw ExitError{kExitConfig, "validate needs --config and/or --policy", ""};
  std::vector<validation::Check> checks;
  auto record = [&](validation::Check c) {
    emit(c.to_json());
    checks.push_back(std::move(c));
  };
  std::optional<RunConfig> cfg;
  if (!a.config.empty()) cfg = load_cfg(a.config);

  std::shared_ptr<const SolveResult> solved;
  PolicyTable policy;
  if (!a.policy.empty()) {
    LoadedPolicy lp = load_pol(a.policy, false);
    std::string detail = lp.warnings.empty() ? "checksum, replay digest and invariants verified"
                                             : std::to_string(lp.warnings.size()) + " problems, first: " + lp.warnings.front();
    validation::Check c;
    c.name = "policy_integrity";
    c.pass = lp.warnings.empty();
    c.measured = static_cast<double>(lp.warnings.size());
    c.detail = detail;
    record(c);
    policy = std::move(lp.policy);
  } else {
    solved = solver_step([&] { return solve_for(cfg->preferences, cfg->pipeline()); });
    policy = solved->policy;
  }
  const std::size_t n = cfg ? cfg->simulation.n_scenarios : 100000;
  const std::uint64_t seed = cfg ? cfg->simulation.seed : 7;
  const double w0 = cfg ? cfg->initial_wealth : (policy.initial_wealth > 0 ? policy.initial_wealth : 8.0);
  const unsigned workers = cfg ? cfg->workers : 0;

  if (cfg && !a.skip_oracle) {
    validation::OracleSettings os;
    os.grid_size = a.oracle_n;
    os.n_points = a.oracle_points;
    record(solver_step([&] { return validation::oracle_equivalence(cfg->market, cfg->preferences, cfg->grid, cfg->initial_wealth, os); }));
  }
  record(validation::value_invariants(policy));
  record(validation::budget_identity(policy));
  if (cfg) record(validation::kernel_identities(cfg->market, a.kernel_draws, seed));
  try {
    auto mc = validation::monte_carlo_checks(policy, w0, n, seed, 3.0, workers);
    record(mc.self_consistency);
    record(mc.hand_strategies);
  } catch (const InfeasibleStartError& e) {
    throw ExitError{kExitInfeasible, e.what(), ""};
  }
  if (cfg) {
    const auto schedule = cfg->grid.schedule(cfg->preferences.a, cfg->initial_wealth);
    SolverOptions opts;
    opts.truncation_scale = cfg->truncation_scale;
    opts.workers = cfg->workers;
    const auto& tgrid = schedule[std::min<std::size_t>(2, schedule.size() - 1)];
    record(solver_step([&] {
      return validation::truncation_insensitivity(tgrid, cfg->table, cfg->market, cfg->preferences, opts);
    }));
    // same size, floor at half the adequacy level so epsilon is not vanishingly small
    const auto floor_grid = WealthGrid::geometric(0.5 * cfg->preferences.a, tgrid.back(), tgrid.size());
    auto c = solver_step([&] {
      return validation::truncation_insensitivity(floor_grid, cfg->table, cfg->market, cfg->preferences, opts);
    });
    c.name = "truncation_insensitivity_high_floor";
    record(c);
  }
  json failed = json::array();
  for (const auto& c : checks)
    if (!c.pass) failed.push_back(c.name);
  emit({{"validate", failed.empty() ? "PASS" : "FAIL"}, {"checks", checks.size()}, {"failed", failed}});
  return failed.empty() ? 0 : kExitFail;
}

// ---- serve ------------------------------------------------------------------

struct ServeArgs {
  std::string config, cache_dir, host = "0.0.0.0";
  int port = 0;
  std::size_t max_queue = 32;
  unsigned solve_workers = 1;
  bool precompute = false;
  std::vector<double> alpha, rho, a;
};

int cmd_serve(const ServeArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) {
    cfg = load_cfg(a.config);
    if (cfg.mortality != "default") {
      fs::path p(cfg.mortality);
      if (p.is_relative()) cfg.mortality = (fs::absolute(a.config).parent_path() / p).string();
    }
  }
  int port = a.port;
  if (port == 0) port = std::getenv("PORT") ? std::atoi(std::getenv("PORT")) : 8080;
  std::string cache = a.cache_dir;
  if (cache.empty() && std::getenv("CACHE_DIR")) cache = std::getenv("CACHE_DIR");
  service::ServiceOptions so;
  so.base = cfg;
  so.cache_dir = cache;
  so.max_queue = a.max_queue;
  so.solve_workers = a.solve_workers;
  if (a.precompute || !a.alpha.empty() || !a.rho.empty() || !a.a.empty()) {
    so.precompute = lattice_from(cfg, a.alpha, a.rho, a.a);
    for (const auto& p : so.precompute)
      for (const auto& [name, message] : SweepBox{}.violations(p)) throw ExitError{kExitConfig, message, "/sweep/" + name};
  }
  service::Service svc(so);
  emit({{"serving", a.host + ":" + std::to_string(port)}, {"cache_dir", cache}, {"precompute", so.precompute.size()}});
  return service::serve(svc, a.host, port);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pensionlab: optimal retirement decumulation under EKM preferences"};
  app.require_subcommand(1);

  SolveArgs solve;
  auto* s = app.add_subcommand("solve", "solve the decumulation problem and save the policy");
  s->add_option("--config", solve.config, "run config JSON")->required()->check(CLI::ExistingFile);
  s->add_option("--out", solve.out, "policy JSON to write")->required();
  s->add_option("--alpha", solve.ov.alpha, "override preferences.alpha");
  s->add_option("--rho", solve.ov.rho, "override preferences.rho");
  s->add_option("--a", solve.ov.a, "override preferences.a");

  SimArgs sim;
  auto* si = app.add_subcommand("simulate", "simulate a saved policy");
  si->add_option("--policy", sim.policy)->required()->check(CLI::ExistingFile);
  si->add_option("--config", sim.config, "scenario count, seed, wealth and accumulation phase")->check(CLI::ExistingFile);
  si->add_option("--n", sim.n, "scenarios");
  si->add_option("--seed", sim.seed);
  si->add_option("--w0", sim.w0, "initial wealth (snapped down to the grid)");
  si->add_option("--paths-out", sim.paths_out, "CSV of every consumption path");
  si->add_option("--workers", sim.workers);

  SimArgs fan;
  auto* f = app.add_subcommand("fan", "decile fan of replacement ratios for a saved policy");
  f->add_option("--policy", fan.policy)->required()->check(CLI::ExistingFile);
  f->add_option("--config", fan.config)->check(CLI::ExistingFile);
  f->add_option("--n", fan.n, "scenarios (default 100000)");
  f->add_option("--seed", fan.seed, "seed (default 7)");
  f->add_option("--w0", fan.w0);
  f->add_option("--out", fan.out, "fan CSV; a JSON sidecar is written next to it")->required();
  f->add_option("--workers", fan.workers);

  SweepArgs sw;
  auto* swc = app.add_subcommand("sweep", "solve and simulate a lattice of preference triples");
  swc->add_option("--config", sw.config)->required()->check(CLI::ExistingFile);
  swc->add_option("--grid-alpha", sw.alpha)->delimiter(',');
  swc->add_option("--grid-rho", sw.rho)->delimiter(',');
  swc->add_option("--grid-a", sw.a)->delimiter(',');
  swc->add_option("--out-dir", sw.out_dir, "write one fan CSV per triple");
  swc->add_option("--cache-dir", sw.cache_dir, "fill a service cache directory instead");

  ValidateArgs va;
  auto* v = app.add_subcommand("validate", "run the property suite and print PASS/FAIL per property");
  v->add_option("--config", va.config)->check(CLI::ExistingFile);
  v->add_option("--policy", va.policy, "validate this policy instead of solving")->check(CLI::ExistingFile);
  v->add_option("--oracle-n", va.oracle_n, "grid size for the brute-force oracle");
  v->add_option("--oracle-points", va.oracle_points, "consumption points per oracle stage");
  v->add_option("--kernel-draws", va.kernel_draws);
  v->add_flag("--skip-oracle", va.skip_oracle);

  ServeArgs se;
  auto* sv = app.add_subcommand("serve", "HTTP service (PORT and CACHE_DIR from the environment)");
  sv->add_option("--config", se.config)->check(CLI::ExistingFile);
  sv->add_option("--port", se.port);
  sv->add_option("--host", se.host);
  sv->add_option("--cache-dir", se.cache_dir);
  sv->add_option("--max-queue", se.max_queue);
  sv->add_option("--solve-workers", se.solve_workers);
  sv->add_flag("--precompute", se.precompute, "precompute the config's sweep lattice at startup");
  sv->add_option("--grid-alpha", se.alpha)->delimiter(',');
  sv->add_option("--grid-rho", se.rho)->delimiter(',');
  sv->add_option("--grid-a", se.a)->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*s) return cmd_solve(solve);
    if (*si) return cmd_simulate(sim);
    if (*f) return cmd_fan(fan);
    if (*swc) return cmd_sweep(sw);
    if (*v) return cmd_validate(va);
    if (*sv) return cmd_serve(se);
  } catch (const ExitError& e) {
    json err = {{"error", e.message}, {"exit_code", e.code}};
    if (!e.pointer.empty()) err["pointer"] = e.pointer;
    std::cerr << err.dump() << '\n';
    return e.code;
  }
  return 0;
}
