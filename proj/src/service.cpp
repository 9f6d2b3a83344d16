#include "pensionlab/service.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "httplib.h"
#include "pensionlab/errors.hpp"

namespace pensionlab::service {

using nlohmann::json;
namespace fs = std::filesystem;

const char* state_name(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "unknown";
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Service::Response error(int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  return {status, std::move(extra), {}};
}

bool finished(JobState s) { return s == JobState::done || s == JobState::failed; }

}  // namespace

Service::Service(ServiceOptions options) : options_(std::move(options)) {
  if (!options_.cache_dir.empty()) fs::create_directories(options_.cache_dir);
  for (const auto& p : options_.precompute) {
    RunConfig cfg = options_.base;
    cfg.preferences = p;
    enqueue(std::move(cfg), false, nullptr);
  }
  const unsigned n = std::max(1u, options_.solve_workers);
  for (unsigned k = 0; k < n; ++k) workers_.emplace_back([this] { worker_loop(); });
}

Service::~Service() {
  {
    std::lock_guard lock(queue_mu_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  for (auto& t : workers_) t.join();
}

std::string Service::config_hash(const RunConfig& cfg) {
  json j = config_to_json(cfg);
  for (const char* k : {"preferences", "sweep", "accumulation", "enforce_sweep_box"}) j.erase(k);
  j["solver"].erase("workers");
  if (cfg.mortality != "default") j["mortality"] = mortality_to_csv(cfg.table);
  return hex64(fnv1a64(j.dump()));
}

std::string Service::job_id(const EkmParams& p, const std::string& config_hash) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.17g;%.17g;%.17g;", p.alpha, p.rho, p.a);
  return hex64(fnv1a64(buf + config_hash));
}

std::shared_ptr<Job> Service::find(const std::string& id) const {
  std::shared_lock lock(registry_mu_);
  auto it = jobs_.find(id);
  return it == jobs_.end() ? nullptr : it->second;
}

bool Service::load_cached(Job& job) const {
  if (options_.cache_dir.empty()) return false;
  const fs::path base = fs::path(options_.cache_dir) / job.id;
  const std::string fan_path = base.string() + ".fan.json", strat_path = base.string() + ".strategy.json";
  if (!fs::exists(fan_path) || !fs::exists(strat_path)) return false;
  try {
    std::string fan = read_file(fan_path);
    json strategies = json::parse(read_file(strat_path));
    if (!json::accept(fan)) return false;
    job.fan_body = std::move(fan);
    job.strategies = std::move(strategies);
    job.state = JobState::done;
    return true;
  } catch (const std::exception&) {
    return false;  // unreadable entry: solve again and overwrite
  }
}

std::shared_ptr<Job> Service::enqueue(RunConfig cfg, bool bounded, bool* rejected) {
  const std::string hash = config_hash(cfg);
  const std::string id = job_id(cfg.preferences, hash);
  std::unique_lock reg(registry_mu_);
  if (auto it = jobs_.find(id); it != jobs_.end()) return it->second;
  auto job = std::make_shared<Job>();
  job->id = id;
  job->params = cfg.preferences;
  job->config_hash = hash;
  job->config = std::move(cfg);
  if (!load_cached(*job)) {
    std::lock_guard q(queue_mu_);
    if (bounded && queue_.size() >= options_.max_queue) {
      if (rejected) *rejected = true;
      return nullptr;
    }
    queue_.push_back(job);
  }
  jobs_.emplace(id, job);
  order_.push_back(id);
  queue_cv_.notify_all();
  return job;
}

void Service::worker_loop() {
  for (;;) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock lock(queue_mu_);
      queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      job = queue_.front();
      queue_.pop_front();
      ++running_;
    }
    run(*job);
    {
      std::lock_guard lock(queue_mu_);
      --running_;
    }
    queue_cv_.notify_all();
  }
}

void Service::run(Job& job) {
  job.state = JobState::running;
  try {
    const PipelineInputs in = job.config.pipeline();
    const RunOutput out = solve_and_simulate(job.params, in);
    json meta = run_meta(out.solve->policy, out.sim, in.n_scenarios, in.seed);
    meta["config_hash"] = job.config_hash;
    std::string fan = fan_to_json(out.fan, meta).dump();
    json strategies = json::object();
    const int ps[] = {10, 20, 30, 40, 50, 60, 70, 80, 90};
    const auto points = strategy_at_percentiles(out.solve->policy, out.sim, ps);
    for (std::size_t k = 0; k < 9; ++k)
      strategies[std::to_string(ps[k])] = strategy_to_json(out.solve->policy, ps[k], points[k]);
    if (!options_.cache_dir.empty()) {
      const std::string base = (fs::path(options_.cache_dir) / job.id).string();
      save_policy(out.solve->policy, base + ".policy.json", in.solver.truncation_scale, meta);
      write_file_atomic(base + ".strategy.json", strategies.dump());
      write_file_atomic(base + ".fan.json", fan);  // last: its presence marks a complete entry
    }
    job.fan_body = std::move(fan);
    job.strategies = std::move(strategies);
    job.state = JobState::done;
  } catch (const std::exception& e) {
    job.error = e.what();
    job.state = JobState::failed;
  }
}

JobState Service::wait(const std::string& id) const {
  auto job = find(id);
  if (!job) throw std::invalid_argument("unknown job " + id);
  std::unique_lock lock(queue_mu_);
  queue_cv_.wait(lock, [&] { return finished(job->state.load()); });
  return job->state.load();
}

Service::Response Service::submit(const json& body) {
  if (!body.is_object()) return error(400, "body must be a JSON object");
  json fields = json::object();
  for (auto it = body.begin(); it != body.end(); ++it)
    if (it.key() != "alpha" && it.key() != "rho" && it.key() != "a" && it.key() != "overrides")
      fields[it.key()] = "unknown field";
  EkmParams p;
  for (auto [key, slot] : {std::pair{"alpha", &p.alpha}, std::pair{"rho", &p.rho}, std::pair{"a", &p.a}}) {
    if (!body.contains(key)) fields[key] = "required";
    else if (!body.at(key).is_number()) fields[key] = "expected a number";
    else *slot = body.at(key).get<double>();
  }
  if (fields.empty())
    for (const auto& [name, message] : SweepBox{}.violations(p)) fields[name] = message;
  if (!fields.empty()) return error(400, "invalid parameters", {{"fields", fields}});

  RunConfig cfg = options_.base;
  if (body.contains("overrides")) {
    const json& ov = body.at("overrides");
    if (!ov.is_object()) return error(400, "invalid overrides", {{"fields", {{"overrides", "expected an object"}}}});
    for (const char* k : {"preferences", "sweep", "enforce_sweep_box"})
      if (ov.contains(k)) return error(400, "invalid overrides", {{"fields", {{std::string("/") + k, "not overridable"}}}});
    json merged = config_to_json(options_.base);
    merged.merge_patch(ov);
    merged["preferences"] = {{"alpha", p.alpha}, {"rho", p.rho}, {"a", p.a}};
    merged["enforce_sweep_box"] = true;
    // the base table is already loaded; its path may be relative to another directory
    const bool own_table = !ov.contains("mortality");
    if (own_table) merged["mortality"] = "default";
    try {
      cfg = parse_config(merged, ".");
    } catch (const ConfigError& e) {
      return error(400, "invalid overrides", {{"fields", {{e.pointer, e.message}}}});
    }
    if (own_table) {
      cfg.mortality = options_.base.mortality;
      cfg.table = options_.base.table;
    }
  }
  cfg.preferences = p;

  bool rejected = false;
  auto job = enqueue(std::move(cfg), true, &rejected);
  if (!job) {
    std::lock_guard lock(queue_mu_);
    return error(429, "solve queue is full", {{"queue_depth", queue_.size()}, {"max_queue", options_.max_queue}});
  }
  auto r = this->job(job->id);
  if (r.status == 200 && !finished(job->state.load())) r.status = 202;
  return r;
}

Service::Response Service::job(const std::string& id) const {
  auto job = find(id);
  if (!job) return error(404, "unknown job", {{"job_id", id}});
  const JobState s = job->state.load();
  json body = {{"job_id", job->id},
               {"state", state_name(s)},
               {"params", {{"alpha", job->params.alpha}, {"rho", job->params.rho}, {"a", job->params.a}}},
               {"config_hash", job->config_hash}};
  if (s == JobState::done) body["result"] = "/api/fan?job_id=" + job->id;
  if (s == JobState::failed) body["detail"] = job->error;
  return {200, std::move(body), {}};
}

std::optional<json> Service::preview(const Job& job) const {
  std::shared_lock lock(registry_mu_);
  const Job* best = nullptr;
  double best_d = INFINITY;
  const SweepBox box;
  for (const auto& id : order_) {
    const Job& other = *jobs_.at(id);
    if (other.state.load() != JobState::done || other.config_hash != job.config_hash) continue;
    const double da = std::log10(other.params.alpha / job.params.alpha) / std::log10(box.alpha_max / box.alpha_min);
    const double dr = (other.params.rho - job.params.rho) / (box.rho_max - box.rho_min);
    const double dc = (other.params.a - job.params.a) / (box.a_max - box.a_min);
    const double d = da * da + dr * dr + dc * dc;
    if (d < best_d) {
      best_d = d;
      best = &other;
    }
  }
  if (!best) return std::nullopt;
  return json{{"approx", true}, {"source_job", best->id}, {"fan", json::parse(best->fan_body)}};
}

Service::Response Service::fan(const std::string& id) const {
  auto job = find(id);
  if (!job) return error(404, "unknown job", {{"job_id", id}});
  const JobState s = job->state.load();
  if (s != JobState::done) {
    json extra = {{"job_id", id}, {"state", state_name(s)}};
    if (s == JobState::failed) extra["detail"] = job->error;
    else if (auto pv = preview(*job)) extra["preview"] = std::move(*pv);
    return error(409, "job not done", std::move(extra));
  }
  return {200, json(), job->fan_body};
}

std::optional<std::string> Service::fan_body(const std::string& id) const {
  auto job = find(id);
  if (!job || job->state.load() != JobState::done) return std::nullopt;
  return job->fan_body;
}

Service::Response Service::strategy(const std::string& id, const std::string& percentile) const {
  int p = -1;
  try {
    std::size_t used = 0;
    p = std::stoi(percentile, &used);
    if (used != percentile.size()) p = -1;
  } catch (const std::exception&) {
  }
  if (p < 10 || p > 90 || p % 10 != 0)
    return error(400, "invalid parameters", {{"fields", {{"percentile", "must be one of 10, 20, ..., 90"}}}});
  auto job = find(id);
  if (!job) return error(404, "unknown job", {{"job_id", id}});
  const JobState s = job->state.load();
  if (s != JobState::done) {
    json extra = {{"job_id", id}, {"state", state_name(s)}};
    if (s == JobState::failed) extra["detail"] = job->error;
    return error(409, "job not done", std::move(extra));
  }
  return {200, job->strategies.at(std::to_string(p)), {}};
}

Service::Response Service::health() const {
  std::size_t n_jobs = 0;
  {
    std::shared_lock lock(registry_mu_);
    n_jobs = jobs_.size();
  }
  std::lock_guard lock(queue_mu_);
  return {200,
          {{"status", "ok"},
           {"jobs", n_jobs},
           {"queued", queue_.size()},
           {"running", running_},
           {"max_queue", options_.max_queue},
           {"workers", workers_.size()},
           {"cache_dir", options_.cache_dir}},
          {}};
}

void Service::mount(httplib::Server& server) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.raw.empty() ? r.body.dump() : r.raw, "application/json");
  };
  auto need = [send](const httplib::Request& req, httplib::Response& res, const char* name) -> std::optional<std::string> {
    if (!req.has_param(name)) {
      send(res, error(400, "invalid parameters", {{"fields", {{name, "required"}}}}));
      return std::nullopt;
    }
    return req.get_param_value(name);
  };
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Post("/api/solve", [this, send](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error&) {
      return send(res, error(400, "body is not valid JSON"));
    }
    send(res, submit(body));
  });
  server.Get("/api/job", [this, send, need](const httplib::Request& req, httplib::Response& res) {
    if (auto id = need(req, res, "job_id")) send(res, job(*id));
  });
  server.Get("/api/fan", [this, send, need](const httplib::Request& req, httplib::Response& res) {
    if (auto id = need(req, res, "job_id")) send(res, fan(*id));
  });
  server.Get("/api/strategy", [this, send, need](const httplib::Request& req, httplib::Response& res) {
    auto id = need(req, res, "job_id");
    if (!id) return;
    auto p = need(req, res, "percentile");
    if (p) send(res, strategy(*id, *p));
  });
  server.Get("/api/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
}

int serve(Service& service, const std::string& host, int port) {
  httplib::Server server;
  service.mount(server);
  return server.listen(host, port) ? 0 : 1;
}

}  // namespace pensionlab::service
