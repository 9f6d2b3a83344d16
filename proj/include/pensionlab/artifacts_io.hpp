#pragma once

// Run configuration, policy persistence and tabular exports.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pensionlab/dual_solver.hpp"
#include "pensionlab/simulator.hpp"

namespace pensionlab {

/// Malformed, truncated or inconsistent artifact file.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimulationConfig {
  std::size_t n_scenarios = 100000;
  std::uint64_t seed = 7;
  bool operator==(const SimulationConfig&) const = default;
};

/// Lattice of preference triples for sweeps (Cartesian product).
struct SweepLattice {
  std::vector<double> alpha;
  std::vector<double> rho;
  std::vector<double> a;
  std::vector<EkmParams> triples() const;
  bool operator==(const SweepLattice&) const = default;
};

struct RunConfig {
  MarketParams market;
  std::string mortality = "default";  // "default" or a CSV path
  MortalityTable table = default_mortality();
  EkmParams preferences;
  std::optional<SweepLattice> sweep;
  GridSpec grid;
  double stop_rel_change = 1e-4;
  double truncation_scale = 1e-10;
  SimulationConfig simulation;
  std::optional<AccumulationConfig> accumulation;
  double initial_wealth = 8.0;
  bool enforce_sweep_box = true;
  unsigned workers = 0;

  PipelineInputs pipeline() const;
};

/// Parses and validates a config document; unknown keys and invalid values
/// raise ConfigError with a JSON pointer. Relative mortality paths resolve
/// against `base_dir`.
RunConfig parse_config(const nlohmann::json& doc, const std::string& base_dir = ".");
RunConfig load_config(const std::string& path);
/// Fully populated (normalized) form of a config.
nlohmann::json config_to_json(const RunConfig& cfg);
/// normalize(x) = config_to_json(parse_config(x)).
nlohmann::json normalize_config(const nlohmann::json& doc, const std::string& base_dir = ".");

inline constexpr int kPolicyFormatVersion = 1;

/// Encodes a policy table. Breakpoints are not stored: each decision keeps
/// its exact multiplier coordinates and the loader replays it against the
/// stored continuation layer, checking a digest of the regenerated
/// breakpoints.
nlohmann::json policy_to_json(const PolicyTable& policy, double truncation_scale,
                              const nlohmann::json& meta = nlohmann::json::object());

struct LoadedPolicy {
  PolicyTable policy;
  double truncation_scale = 1e-10;
  nlohmann::json meta;
  std::vector<std::string> warnings;  // lenient mode: problems that would have been errors
};

/// strict: checksum, digest and every invariant must hold, else ArtifactError.
/// lenient: loads whatever is structurally readable and reports problems.
LoadedPolicy policy_from_json(const nlohmann::json& doc, bool strict = true);

void save_policy(const PolicyTable& policy, const std::string& path, double truncation_scale = 1e-10,
                 const nlohmann::json& meta = nlohmann::json::object());
LoadedPolicy load_policy(const std::string& path, bool strict = true);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

/// `year,decile,replacement_ratio` with one row per (age, decile).
std::string fan_to_csv(const FanDiagram& fan);
nlohmann::json fan_to_json(const FanDiagram& fan, const nlohmann::json& meta);
nlohmann::json gain_to_json(const GainEstimate& g);
/// Provenance of a simulated fan: params, seed, scenario count, grid, start.
nlohmann::json run_meta(const PolicyTable& policy, const DecumulationResult& sim, std::size_t n_scenarios,
                        std::uint64_t seed);
/// {years, consumption, dispersion} for one consumption percentile.
nlohmann::json strategy_to_json(const PolicyTable& policy, const DecumulationResult& sim, int percentile);
nlohmann::json strategy_to_json(const PolicyTable& policy, int percentile, const std::vector<StrategyPoint>& points);

/// Write-temp-then-rename.
void write_file_atomic(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

/// Reals as JSON: finite numbers as-is, infinities as "inf"/"-inf".
nlohmann::json real_to_json(double x);
double real_from_json(const nlohmann::json& j, const std::string& pointer);

}  // namespace pensionlab
