#pragma once

// HTTP facade: parameter-keyed cache of solved runs, an asynchronous solve
// queue and JSON endpoints for fans and strategies.

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "pensionlab/artifacts_io.hpp"

namespace httplib {
class Server;
}

namespace pensionlab::service {

enum class JobState { queued, running, done, failed };
const char* state_name(JobState s);

struct Job {
  std::string id;
  EkmParams params;
  std::string config_hash;
  RunConfig config;
  std::atomic<JobState> state{JobState::queued};
  // Written once by the worker before `state` becomes done or failed.
  std::string error;
  std::string fan_body;
  nlohmann::json strategies;  // percentile (as string) -> strategy payload
};

struct ServiceOptions {
  RunConfig base;                   // preferences ignored; everything else shared by all jobs
  std::string cache_dir;            // empty: in-memory only
  std::size_t max_queue = 32;       // queued (not running) jobs beyond this get 429
  unsigned solve_workers = 1;
  std::vector<EkmParams> precompute;  // enqueued at start, exempt from the bound
};

class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  struct Response {
    int status = 200;
    nlohmann::json body;
    std::string raw;  // served verbatim instead of `body` when non-empty
  };

  /// POST /api/solve body.
  Response submit(const nlohmann::json& body);
  Response job(const std::string& id) const;
  Response fan(const std::string& id) const;
  Response strategy(const std::string& id, const std::string& percentile) const;
  Response health() const;

  /// Raw fan payload for a done job (the exact bytes served).
  std::optional<std::string> fan_body(const std::string& id) const;

  /// Blocks until the job leaves queued/running (test and CLI helper).
  JobState wait(const std::string& id) const;

  /// Routes every endpoint on `server`.
  void mount(httplib::Server& server);

  /// Key of a (params, config) pair: stable across runs and processes.
  static std::string job_id(const EkmParams& p, const std::string& config_hash);
  static std::string config_hash(const RunConfig& cfg);

 private:
  std::shared_ptr<Job> find(const std::string& id) const;
  std::shared_ptr<Job> enqueue(RunConfig cfg, bool bounded, bool* rejected);
  bool load_cached(Job& job) const;
  void run(Job& job);
  void worker_loop();
  std::optional<nlohmann::json> preview(const Job& job) const;

  ServiceOptions options_;
  mutable std::shared_mutex registry_mu_;
  std::unordered_map<std::string, std::shared_ptr<Job>> jobs_;
  std::vector<std::string> order_;  // insertion order, for previews

  mutable std::mutex queue_mu_;
  mutable std::condition_variable queue_cv_;  // work available / job finished
  std::deque<std::shared_ptr<Job>> queue_;
  std::size_t running_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

/// Serves on host:port until the server is stopped.
int serve(Service& service, const std::string& host, int port);

}  // namespace pensionlab::service
