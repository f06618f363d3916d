#pragma once

// Experiment driver behind the `kefam` command line: configuration, the
// subcommands and their CSV/JSON/binary outputs.

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "kefam/domains.hpp"

namespace kefam::app {

struct ExperimentConfig {
  std::string family = "ball_family";
  nlohmann::json params = nlohmann::json::object();
  std::vector<int> resolutions;  // first entry drives single solves
  int level = 0;                 // Fefferman level, 0 selects n + 1
  double tol = 1e-10;
  cplx s{};
  int base_samples = 1;  // base values per scan, the first is `s`
  int interior_samples = 16;
  double delta = 2e-2;
  std::string source = "auto";  // auto, oracle, numeric
  int ray_count = 7;
  double ray_phi_start = -0.064;
  std::vector<std::vector<cplx>> flow_starts;  // over `s`; empty selects centre + samples
  std::optional<cplx> flow_target;
  double flow_tol = 1e-8;
  int flow_samples = 32;
  double defect_step = 1e-2;
  std::vector<double> exhaustion_levels{1.0, 2.0, 3.0};
  std::filesystem::path out = "out";
  int workers = 0;  // 0: available parallelism
  std::uint64_t seed = 1;
  bool cache = true;

  FamilyDefinition F;  // instantiated from family + params
  int n() const { return F.n; }
  int resolution() const { return resolutions.front(); }
  int fefferman_level() const { return level > 0 ? level : F.n + 1; }
};

// Command-line overrides (unset fields keep the file values).
struct Overrides {
  std::optional<std::string> out;
  std::optional<int> workers, resolution, level;
  std::optional<std::uint64_t> seed;
  std::optional<double> tol;
};

std::pair<int, int> resolution_range(int n);

// Throws Error(ConfigInvalid) naming the offending field.
ExperimentConfig parse_config(const nlohmann::json& j, const Overrides& o = {});
ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& o = {});

const std::vector<std::string>& subcommands();

// Runs one subcommand and writes its artifacts under cfg.out. Returns 0 when
// every verdict passes, 1 otherwise; library errors propagate.
int run(const ExperimentConfig& cfg, const std::string& subcommand);

// Same, mapping errors to exit statuses (2 for ConfigInvalid, 3 otherwise).
int run_guarded(const nlohmann::json& config, const Overrides& o, const std::string& subcommand);

void init_logging();

}  // namespace kefam::app
