#include "pensionlab/artifacts_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "pensionlab/errors.hpp"
#include "pensionlab/parallel.hpp"

namespace pensionlab {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- small helpers ----------------------------------------------------------

json real_to_json(double x) {
  if (std::isnan(x)) return "nan";
  if (x == INFINITY) return "inf";
  if (x == -INFINITY) return "-inf";
  return x;
}

double real_from_json(const json& j, const std::string& pointer) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    if (s == "nan") return NAN;
  }
  throw ArtifactError(pointer + ": expected a number");
}

std::uint64_t fnv1a64(const std::string& bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

template <class T>
void hash_pod(std::uint64_t& h, const T& v) {
  std::string bytes(sizeof(T), '\0');
  std::memcpy(bytes.data(), &v, sizeof(T));
  h = fnv1a64(bytes, h);
}

// ---- config parsing ---------------------------------------------------------

class Reader {
 public:
  Reader(const json& obj, std::string pointer) : obj_(obj), ptr_(std::move(pointer)) {
    if (!obj_.is_object()) throw ConfigError(ptr_.empty() ? "/" : ptr_, "expected an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!ok.count(it.key())) throw ConfigError(ptr_ + "/" + it.key(), "unknown key");
  }

  bool has(const char* key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }
  const json& at(const char* key) const { return obj_.at(key); }
  std::string path(const char* key) const { return ptr_ + "/" + key; }

  void number(const char* key, double& out) const {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number()) throw ConfigError(path(key), "expected a number");
    out = v.get<double>();
    if (!std::isfinite(out)) throw ConfigError(path(key), "must be finite");
  }

  template <class Int>
  void integer(const char* key, Int& out, long long lo, long long hi) const {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number_integer() && !(v.is_number_float() && std::floor(v.get<double>()) == v.get<double>()))
      throw ConfigError(path(key), "expected an integer");
    const double d = v.get<double>();
    if (d < static_cast<double>(lo) || d > static_cast<double>(hi))
      throw ConfigError(path(key), "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    out = static_cast<Int>(v.get<long long>());
  }

  void boolean(const char* key, bool& out) const {
    if (!has(key)) return;
    if (!obj_.at(key).is_boolean()) throw ConfigError(path(key), "expected true or false");
    out = obj_.at(key).get<bool>();
  }

  void numbers(const char* key, std::vector<double>& out) const {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_array()) throw ConfigError(path(key), "expected an array of numbers");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(path(key) + "/" + std::to_string(i), "expected a number");
      out.push_back(v[i].get<double>());
    }
  }

 private:
  const json& obj_;
  std::string ptr_;
};

void check_box(const EkmParams& p, const std::string& ptr, const SweepBox& box) {
  const auto bad = box.violations(p);
  if (!bad.empty())
    throw ConfigError(ptr + "/" + bad.front().first,
                      bad.front().second + " (sweep box; set enforce_sweep_box = false to override)");
}

}  // namespace

std::vector<EkmParams> SweepLattice::triples() const {
  std::vector<EkmParams> out;
  for (double al : alpha)
    for (double rh : rho)
      for (double aa : a) out.push_back({al, rh, aa});
  return out;
}

PipelineInputs RunConfig::pipeline() const {
  PipelineInputs in;
  in.market = market;
  in.mortality = table;
  in.grid = grid;
  in.stop_rel_change = stop_rel_change;
  in.solver.truncation_scale = truncation_scale;
  in.solver.workers = workers;
  in.initial_wealth = initial_wealth;
  in.n_scenarios = simulation.n_scenarios;
  in.seed = simulation.seed;
  in.workers = workers;
  return in;
}

RunConfig parse_config(const json& doc, const std::string& base_dir) {
  RunConfig cfg;
  Reader top(doc, "");
  top.allow({"market", "mortality", "preferences", "sweep", "grid", "solver", "simulation",
             "accumulation", "initial_wealth", "enforce_sweep_box"});

  if (top.has("market")) {
    Reader r(top.at("market"), "/market");
    r.allow({"mu", "sigma", "r", "dt"});
    r.number("mu", cfg.market.mu);
    r.number("sigma", cfg.market.sigma);
    r.number("r", cfg.market.r);
    r.number("dt", cfg.market.dt);
  }
  if (!(cfg.market.sigma > 0.0)) throw ConfigError("/market/sigma", "must be positive");
  if (cfg.market.dt != 1.0) throw ConfigError("/market/dt", "mortality tables are annual, so dt must be 1");

  if (top.has("mortality")) {
    if (!top.at("mortality").is_string()) throw ConfigError("/mortality", "expected \"default\" or a CSV path");
    cfg.mortality = top.at("mortality").get<std::string>();
  }
  if (cfg.mortality != "default") {
    fs::path p(cfg.mortality);
    if (p.is_relative()) p = fs::path(base_dir) / p;
    if (!fs::exists(p)) throw ConfigError("/mortality", "file not found: " + p.string());
    try {
      cfg.table = load_mortality(p.string());
    } catch (const IngestionError& e) {
      throw ConfigError("/mortality", e.what());
    }
  }

  top.boolean("enforce_sweep_box", cfg.enforce_sweep_box);
  if (top.has("preferences")) {
    Reader r(top.at("preferences"), "/preferences");
    r.allow({"alpha", "rho", "a"});
    r.number("alpha", cfg.preferences.alpha);
    r.number("rho", cfg.preferences.rho);
    r.number("a", cfg.preferences.a);
  }
  if (!(cfg.preferences.alpha > 0.0)) throw ConfigError("/preferences/alpha", "must be positive");
  if (!(cfg.preferences.rho < 0.0)) throw ConfigError("/preferences/rho", "must be negative");
  if (!(cfg.preferences.a > 0.0)) throw ConfigError("/preferences/a", "must be positive");
  if (cfg.enforce_sweep_box) check_box(cfg.preferences, "/preferences", SweepBox{});

  if (top.has("sweep")) {
    Reader r(top.at("sweep"), "/sweep");
    r.allow({"alpha", "rho", "a"});
    SweepLattice lat;
    lat.alpha = {cfg.preferences.alpha};
    lat.rho = {cfg.preferences.rho};
    lat.a = {cfg.preferences.a};
    r.numbers("alpha", lat.alpha);
    r.numbers("rho", lat.rho);
    r.numbers("a", lat.a);
    for (const char* key : {"alpha", "rho", "a"}) {
      const auto& v = std::string(key) == "alpha" ? lat.alpha : std::string(key) == "rho" ? lat.rho : lat.a;
      if (v.empty()) throw ConfigError(r.path(key), "needs at least one value");
    }
    const auto triples = lat.triples();
    for (const auto& p : triples) {
      try {
        p.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError("/sweep", e.what());
      }
      if (cfg.enforce_sweep_box) check_box(p, "/sweep", SweepBox{});
    }
    cfg.sweep = lat;
  }

  if (top.has("grid")) {
    Reader r(top.at("grid"), "/grid");
    r.allow({"base_size", "refinements", "x_min_factor", "x_max_floor", "x_max_wealth_multiple",
             "stop_rel_change"});
    r.integer("base_size", cfg.grid.base_size, 2, 1 << 16);
    r.integer("refinements", cfg.grid.refinements, 0, 8);
    r.number("x_min_factor", cfg.grid.x_min_factor);
    r.number("x_max_floor", cfg.grid.x_max_floor);
    r.number("x_max_wealth_multiple", cfg.grid.x_max_wealth_multiple);
    r.number("stop_rel_change", cfg.stop_rel_change);
    if (!(cfg.grid.x_min_factor > 0.0)) throw ConfigError("/grid/x_min_factor", "must be positive");
    if (!(cfg.grid.x_max_floor > 0.0)) throw ConfigError("/grid/x_max_floor", "must be positive");
    if (!(cfg.grid.x_max_wealth_multiple > 0.0))
      throw ConfigError("/grid/x_max_wealth_multiple", "must be positive");
    if (!(cfg.stop_rel_change >= 0.0)) throw ConfigError("/grid/stop_rel_change", "must be >= 0");
  }

  if (top.has("solver")) {
    Reader r(top.at("solver"), "/solver");
    r.allow({"truncation_scale", "workers"});
    r.number("truncation_scale", cfg.truncation_scale);
    r.integer("workers", cfg.workers, 0, 1024);
    if (!(cfg.truncation_scale > 0.0 && cfg.truncation_scale < 1.0))
      throw ConfigError("/solver/truncation_scale", "must lie in (0, 1)");
  }

  if (top.has("simulation")) {
    Reader r(top.at("simulation"), "/simulation");
    r.allow({"n_scenarios", "seed"});
    r.integer("n_scenarios", cfg.simulation.n_scenarios, 10, 100000000);
    if (r.has("seed")) {
      const json& s = r.at("seed");
      if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0))
        throw ConfigError("/simulation/seed", "expected a non-negative integer");
      cfg.simulation.seed = s.get<std::uint64_t>();
    }
  }

  top.number("initial_wealth", cfg.initial_wealth);
  if (!(cfg.initial_wealth > 0.0)) throw ConfigError("/initial_wealth", "must be positive");
  const double x_min = cfg.grid.x_min_factor * cfg.preferences.a;
  if (cfg.initial_wealth < x_min)
    throw ConfigError("/initial_wealth", "below the smallest grid point " + std::to_string(x_min));

  if (top.has("accumulation")) {
    Reader r(top.at("accumulation"), "/accumulation");
    r.allow({"start_age", "contribution_rate", "salary_growth", "fixed_pi", "glidepath", "initial_wealth"});
    AccumulationConfig acc;
    r.integer("start_age", acc.start_age, 0, 200);
    r.number("contribution_rate", acc.contribution_rate);
    r.number("salary_growth", acc.salary_growth);
    r.number("fixed_pi", acc.fixed_pi);
    r.numbers("glidepath", acc.glidepath);
    r.number("initial_wealth", acc.initial_wealth);
    acc.validate(cfg.table.retirement_age());
    cfg.accumulation = acc;
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const ArtifactError& e) {
    throw ConfigError("", e.what());
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
  const fs::path p = fs::absolute(path);
  return parse_config(doc, p.parent_path().string());
}

json config_to_json(const RunConfig& cfg) {
  json j;
  j["market"] = {{"mu", cfg.market.mu}, {"sigma", cfg.market.sigma}, {"r", cfg.market.r}, {"dt", cfg.market.dt}};
  j["mortality"] = cfg.mortality;
  j["preferences"] = {{"alpha", cfg.preferences.alpha}, {"rho", cfg.preferences.rho}, {"a", cfg.preferences.a}};
  if (cfg.sweep) j["sweep"] = {{"alpha", cfg.sweep->alpha}, {"rho", cfg.sweep->rho}, {"a", cfg.sweep->a}};
  j["grid"] = {{"base_size", cfg.grid.base_size},
               {"refinements", cfg.grid.refinements},
               {"x_min_factor", cfg.grid.x_min_factor},
               {"x_max_floor", cfg.grid.x_max_floor},
               {"x_max_wealth_multiple", cfg.grid.x_max_wealth_multiple},
               {"stop_rel_change", cfg.stop_rel_change}};
  j["solver"] = {{"truncation_scale", cfg.truncation_scale}, {"workers", cfg.workers}};
  j["simulation"] = {{"n_scenarios", cfg.simulation.n_scenarios}, {"seed", cfg.simulation.seed}};
  if (cfg.accumulation) {
    const auto& a = *cfg.accumulation;
    j["accumulation"] = {{"start_age", a.start_age},
                         {"contribution_rate", a.contribution_rate},
                         {"salary_growth", a.salary_growth},
                         {"fixed_pi", a.fixed_pi},
                         {"glidepath", a.glidepath},
                         {"initial_wealth", a.initial_wealth}};
  }
  j["initial_wealth"] = cfg.initial_wealth;
  j["enforce_sweep_box"] = cfg.enforce_sweep_box;
  return j;
}

json normalize_config(const json& doc, const std::string& base_dir) {
  return config_to_json(parse_config(doc, base_dir));
}

// ---- policy files -----------------------------------------------------------

namespace {

std::uint64_t decision_digest(const PolicyTable& policy) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& period : policy.periods) {
    hash_pod(h, period.survival);
    for (const auto& d : period.nodes) {
      hash_pod(h, d.log_c);
      hash_pod(h, d.ell);
      hash_pod(h, d.log_eta);
      const std::uint64_t range[2] = {d.i_min, d.i_max};
      hash_pod(h, range);
      for (double b : d.breakpoints) hash_pod(h, b);
    }
  }
  return h;
}

json reals(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(real_to_json(x));
  return a;
}

std::vector<double> reals_from(const json& a, const std::string& ptr) {
  if (!a.is_array()) throw ArtifactError(ptr + ": expected an array");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = real_from_json(a[i], ptr + "/" + std::to_string(i));
  return out;
}

const json& field(const json& obj, const char* key, const std::string& ptr) {
  if (!obj.is_object() || !obj.contains(key)) throw ArtifactError(ptr + "/" + key + ": missing");
  return obj.at(key);
}

}  // namespace

json policy_to_json(const PolicyTable& policy, double truncation_scale, const json& meta) {
  json payload;
  const auto& m = policy.market;
  payload["market"] = {{"mu", m.mu}, {"sigma", m.sigma}, {"r", m.r}, {"dt", m.dt}};
  payload["preferences"] = {{"alpha", policy.prefs.alpha}, {"rho", policy.prefs.rho}, {"a", policy.prefs.a}};
  payload["mortality"] = {{"retirement_age", policy.mortality.retirement_age()},
                          {"qx", policy.mortality.qx()}};
  payload["grid"] = policy.grid.points();
  payload["initial_wealth"] = policy.initial_wealth;
  payload["truncation_scale"] = truncation_scale;
  json values = json::array();
  for (const auto& v : policy.values) values.push_back(reals(v.ell()));
  payload["values"] = std::move(values);
  json periods = json::array();
  for (const auto& period : policy.periods) {
    std::string kinds;
    std::vector<double> shift, delta;
    json mixtures = json::array(), pures = json::array();
    for (std::size_t i = 0; i < period.nodes.size(); ++i) {
      const auto& d = period.nodes[i];
      char k = 'r';
      if (d.terminal) k = 't';
      else if (d.infeasible) k = 'i';
      else if (d.pure) k = 'p';
      else if (d.mixed) k = 'm';
      kinds.push_back(k);
      shift.push_back(k == 'r' || k == 'm' ? d.eta_shift : 0.0);
      delta.push_back(k == 'r' || k == 'm' ? d.eta_delta : 0.0);
      if (k == 'm') mixtures.push_back({i, d.mix_delta_hi, d.mix_theta});
      if (k == 'p') pures.push_back({i, d.i_min});
    }
    periods.push_back({{"survival", period.survival},
                       {"kind", kinds},
                       {"eta_shift", shift},
                       {"eta_delta", delta},
                       {"mixtures", mixtures},
                       {"pure", pures}});
  }
  payload["periods"] = std::move(periods);
  payload["decision_digest"] = hex64(decision_digest(policy));
  payload["meta"] = meta;
  json doc;
  doc["format_version"] = kPolicyFormatVersion;
  doc["checksum"] = hex64(fnv1a64(payload.dump()));
  doc["payload"] = std::move(payload);
  return doc;
}

LoadedPolicy policy_from_json(const json& doc, bool strict) {
  LoadedPolicy out;
  auto problem = [&](const std::string& msg) {
    if (strict) throw ArtifactError(msg);
    out.warnings.push_back(msg);
  };
  if (!doc.is_object() || !doc.contains("format_version"))
    throw ArtifactError("policy: missing format_version");
  if (!doc.at("format_version").is_number_integer() || doc.at("format_version").get<int>() != kPolicyFormatVersion)
    throw ArtifactError("policy: unsupported format_version " + doc.at("format_version").dump() +
                        " (expected " + std::to_string(kPolicyFormatVersion) + ")");
  const json& payload = field(doc, "payload", "");
  const std::string checksum = field(doc, "checksum", "").is_string() ? doc.at("checksum").get<std::string>() : "";
  if (checksum != hex64(fnv1a64(payload.dump()))) problem("policy: checksum mismatch");

  try {
    PolicyTable& pol = out.policy;
    const json& jm = field(payload, "market", "/payload");
    pol.market.mu = real_from_json(field(jm, "mu", "/payload/market"), "/payload/market/mu");
    pol.market.sigma = real_from_json(field(jm, "sigma", "/payload/market"), "/payload/market/sigma");
    pol.market.r = real_from_json(field(jm, "r", "/payload/market"), "/payload/market/r");
    pol.market.dt = real_from_json(field(jm, "dt", "/payload/market"), "/payload/market/dt");
    const json& jp = field(payload, "preferences", "/payload");
    pol.prefs.alpha = real_from_json(field(jp, "alpha", "/payload/preferences"), "/payload/preferences/alpha");
    pol.prefs.rho = real_from_json(field(jp, "rho", "/payload/preferences"), "/payload/preferences/rho");
    pol.prefs.a = real_from_json(field(jp, "a", "/payload/preferences"), "/payload/preferences/a");
    pol.market.validate();
    pol.prefs.validate();
    const json& jt = field(payload, "mortality", "/payload");
    pol.mortality = MortalityTable(field(jt, "retirement_age", "/payload/mortality").get<int>(),
                                   reals_from(field(jt, "qx", "/payload/mortality"), "/payload/mortality/qx"));
    double total = 0.0;
    for (double w : pol.mortality.death_weights()) total += w;
    if (std::fabs(total - 1.0) > 1e-12) problem("policy: mortality death weights do not sum to 1");
    pol.grid = WealthGrid(reals_from(field(payload, "grid", "/payload"), "/payload/grid"));
    pol.initial_wealth = real_from_json(field(payload, "initial_wealth", "/payload"), "/payload/initial_wealth");
    out.truncation_scale = real_from_json(field(payload, "truncation_scale", "/payload"), "/payload/truncation_scale");
    out.meta = payload.contains("meta") ? payload.at("meta") : json::object();

    const json& jv = field(payload, "values", "/payload");
    const json& jper = field(payload, "periods", "/payload");
    const std::size_t h = pol.mortality.horizon();
    if (!jv.is_array() || jv.size() != h || !jper.is_array() || jper.size() != h)
      throw ArtifactError("policy: layer count does not match the mortality horizon");
    const std::size_t n = pol.grid.size();
    pol.values.resize(h);
    for (std::size_t t = 0; t < h; ++t) {
      auto ell = reals_from(jv[t], "/payload/values/" + std::to_string(t));
      if (ell.size() != n) throw ArtifactError("policy: layer " + std::to_string(t) + " has the wrong size");
      pol.values[t] = PiecewiseConcaveValue(pol.grid, std::move(ell));
    }

    SolverOptions options;
    options.truncation_scale = out.truncation_scale;
    options.workers = 0;
    pol.periods.resize(h);
    for (std::size_t t = 0; t < h; ++t) {
      const std::string ptr = "/payload/periods/" + std::to_string(t);
      const json& jpd = jper[t];
      PeriodPolicy& period = pol.periods[t];
      period.survival = real_from_json(field(jpd, "survival", ptr), ptr + "/survival");
      const std::string kinds = field(jpd, "kind", ptr).get<std::string>();
      const auto shift = reals_from(field(jpd, "eta_shift", ptr), ptr + "/eta_shift");
      const auto delta = reals_from(field(jpd, "eta_delta", ptr), ptr + "/eta_delta");
      if (kinds.size() != n || shift.size() != n || delta.size() != n)
        throw ArtifactError(ptr + ": decision arrays have the wrong size");
      std::vector<NodeDecision> keys(n);
      for (std::size_t i = 0; i < n; ++i) {
        NodeDecision& k = keys[i];
        k.budget = pol.grid[i];
        switch (kinds[i]) {
          case 't': k.terminal = true; break;
          case 'i': k.infeasible = true; break;
          case 'p': k.pure = true; break;
          case 'm': k.mixed = true; break;
          case 'r': break;
          default: throw ArtifactError(ptr + "/kind: unknown decision kind");
        }
        k.eta_shift = shift[i];
        k.eta_delta = delta[i];
      }
      for (const auto& mx : field(jpd, "mixtures", ptr)) {
        const std::size_t i = mx.at(0).get<std::size_t>();
        if (i >= n || !keys[i].mixed) throw ArtifactError(ptr + "/mixtures: bad node");
        keys[i].mix_delta_hi = real_from_json(mx.at(1), ptr + "/mixtures");
        keys[i].mix_theta = real_from_json(mx.at(2), ptr + "/mixtures");
      }
      for (const auto& pu : field(jpd, "pure", ptr)) {
        const std::size_t i = pu.at(0).get<std::size_t>();
        if (i >= n || !keys[i].pure) throw ArtifactError(ptr + "/pure: bad node");
        keys[i].i_min = keys[i].i_max = pu.at(1).get<std::size_t>();
      }
      period.nodes.resize(n);
      if (t + 1 == h) {
        const auto last = terminal_layer(pol.grid, pol.prefs, pol.market.dt);
        for (std::size_t i = 0; i < n; ++i) {
          if (!keys[i].terminal) throw ArtifactError(ptr + ": final year must consume everything");
          NodeDecision& d = period.nodes[i];
          d.budget = pol.grid[i];
          d.log_eta = -INFINITY;
          d.log_c = std::log(pol.grid[i]);
          d.ell = last.ell()[i];
          d.terminal = true;
        }
        continue;
      }
      const OnePeriodProblem problem(pol.values[t + 1], period.survival, pol.market, pol.prefs, options);
      parallel_for(n, options.workers, [&](std::size_t i) { period.nodes[i] = problem.replay(keys[i]); });
    }

    for (std::size_t t = 0; t < h; ++t)
      for (std::size_t i = 0; i < n; ++i) {
        const double stored = pol.values[t].ell()[i];
        const double replayed = pol.periods[t].nodes[i].ell;
        if (std::memcmp(&stored, &replayed, sizeof(double)) != 0) {
          problem("policy: year " + std::to_string(t) + " node " + std::to_string(i) +
                  ": stored value does not match its decision");
          t = h;
          break;
        }
      }
    const std::string digest = field(payload, "decision_digest", "/payload").get<std::string>();
    if (digest != hex64(decision_digest(pol))) problem("policy: regenerated decisions differ from the saved ones");
    for (const auto& msg : pol.validate()) problem("policy: " + msg);
  } catch (const json::exception& e) {
    throw ArtifactError(std::string("policy: malformed payload: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ArtifactError(std::string("policy: ") + e.what());
  }
  return out;
}

void save_policy(const PolicyTable& policy, const std::string& path, double truncation_scale,
                 const json& meta) {
  write_file_atomic(path, policy_to_json(policy, truncation_scale, meta).dump() + "\n");
}

LoadedPolicy load_policy(const std::string& path, bool strict) {
  const std::string text = read_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error&) {
    throw ArtifactError("policy: checksum failure (file is not complete JSON): " + path);
  }
  return policy_from_json(doc, strict);
}

// ---- fans and files ---------------------------------------------------------

std::string fan_to_csv(const FanDiagram& fan) {
  std::ostringstream out;
  out << "year,decile,replacement_ratio\n";
  char buf[64];
  for (std::size_t t = 0; t < fan.years.size(); ++t)
    for (int k = 0; k < 9; ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", fan.deciles[t][k]);
      out << fan.years[t] << ',' << 10 * (k + 1) << ',' << buf << '\n';
    }
  return out.str();
}

json gain_to_json(const GainEstimate& g) {
  return {{"L", real_to_json(g.log_neg_gain)},
          {"se_rel", real_to_json(g.se_rel)},
          {"gain", real_to_json(g.gain())},
          {"se", real_to_json(g.standard_error())}};
}

json fan_to_json(const FanDiagram& fan, const json& meta) {
  json deciles = json::array();
  for (int k = 0; k < 9; ++k) {
    json row = json::array();
    for (const auto& d : fan.deciles) row.push_back(d[k]);
    deciles.push_back(std::move(row));
  }
  json out = json::object();
  out["years"] = fan.years;
  out["deciles"] = std::move(deciles);
  out["gain"] = gain_to_json(fan.gain);
  out["meta"] = meta;
  return out;
}

json run_meta(const PolicyTable& policy, const DecumulationResult& sim, std::size_t n_scenarios,
              std::uint64_t seed) {
  json meta;
  meta["params"] = {{"alpha", policy.prefs.alpha}, {"rho", policy.prefs.rho}, {"a", policy.prefs.a}};
  meta["seed"] = seed;
  meta["n_scenarios"] = n_scenarios;
  meta["grid"] = {{"size", policy.grid.size()}, {"x_min", policy.grid.front()}, {"x_max", policy.grid.back()}};
  meta["initial_wealth"] = sim.requested_wealth;
  meta["start_wealth"] = sim.snapped_wealth;
  meta["solver_ell"] = real_to_json(policy.values.front().ell()[sim.start_node]);
  return meta;
}

json strategy_to_json(const PolicyTable& policy, const DecumulationResult& sim, int percentile) {
  return strategy_to_json(policy, percentile, strategy_at_percentile(policy, sim, percentile));
}

json strategy_to_json(const PolicyTable& policy, int percentile, const std::vector<StrategyPoint>& points) {
  json c = json::array(), d = json::array(), years = json::array();
  for (std::size_t t = 0; t < points.size(); ++t) {
    years.push_back(policy.mortality.age(t));
    c.push_back(points[t].consumption);
    d.push_back(points[t].dispersion);
  }
  return {{"percentile", percentile}, {"years", years}, {"consumption", c}, {"dispersion", d}};
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp." + std::to_string(::getpid()) + "." +
                          std::to_string(std::hash<std::string>{}(contents) & 0xffff);
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ArtifactError("cannot write " + tmp);
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    f.flush();
    if (!f) throw ArtifactError("write failed: " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw ArtifactError("cannot rename " + tmp + " to " + path + ": " + ec.message());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArtifactError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace pensionlab
