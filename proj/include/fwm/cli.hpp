// Batch front end: YAML run configurations, the five commands and their
// output files, and the mapping from failures to process exit codes.
//
// Config units: frequencies in MHz (cycles, converted to rad/s), temperature
// in degrees C, powers in mW, times as labeled by the key suffix (_ps, _ns,
// _s), rates in 1/s.
#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fwm/atomic_model.hpp"
#include "fwm/photon_stream.hpp"
#include "fwm/tomography.hpp"

namespace fwm::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kValidation = 2,
  kSolver = 3,
  kCapacity = 4,
  kUnsorted = 5,
  kOptimizer = 6,
};

struct ConfigError : std::invalid_argument {
  ConfigError(std::string key, const std::string& what)
      : std::invalid_argument(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

private:
  std::string key_;
};

struct ScanConfig {
  atomic::ThreeLevelParams params;
  atomic::VaporParams vapor;
  // Explicit grid; absent means +-5 sigma of the velocity distribution.
  std::optional<double> v_min, v_max;
  int points = 2001;
  bool normalize = true;
};

struct TagsConfig {
  stream::PairStreamParams params;
  bool csv = false;  // file format; binary otherwise
};

struct AnalyzeConfig {
  std::filesystem::path tags;
  stream::AnalysisOptions options;
};

struct TomoConfig {
  std::optional<std::filesystem::path> counts;
  // Synthetic input when no counts file is given.
  std::string state = "phi_plus";  // phi_plus | werner | mixed
  double werner_p = 0.9;
  double phase_rad = 0.0;
  double n_per_setting = 1e5;
  std::optional<double> flux;
  tomo::MlOptions ml;
};

struct SweepAxis {
  std::string name;
  std::vector<double> values;
};

struct SweepConfig {
  TagsConfig base;
  std::int64_t bin_width_ps = 100;
  std::int64_t span_ps = 40000;
  std::int64_t window_ps = 4000;
  bool correct_efficiency = true;
  std::optional<double> k_per_mw2;  // pair_rate = k * pump_mw * coupling_mw
  std::vector<SweepAxis> grid;      // sorted by axis name
};

using ScenarioConfig = std::variant<ScanConfig, TagsConfig, AnalyzeConfig, TomoConfig, SweepConfig>;

struct RunConfig {
  std::string scenario;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  unsigned workers = 1;
  ScenarioConfig body;
};

struct Overrides {
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
};

// Parses YAML text; relative paths resolve against `base_dir`. The output
// directory falls back to $FWMSIM_OUT, then "fwmsim_out". All parameter
// blocks are validated here, before any computation.
RunConfig parse_config(const std::string& yaml_text, const std::filesystem::path& base_dir,
                       const Overrides& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});

// Two-photon detuning (rad/s) that puts the resonance at velocity v.
double two_photon_detuning_for_velocity(double v, const atomic::ThreeLevelParams& params);

// Each command writes its files into cfg.out_dir and a short human summary
// to `log`.
void cmd_scan(const RunConfig& cfg, std::ostream& log);
void cmd_tags(const RunConfig& cfg, std::ostream& log);
void cmd_analyze(const RunConfig& cfg, std::ostream& log);
void cmd_tomo(const RunConfig& cfg, std::ostream& log);
// Returns kOk, or the exit code of the first failing grid point.
int cmd_sweep(const RunConfig& cfg, std::ostream& log);

int exit_code_for(std::exception_ptr e);

// Dispatches on cfg.scenario; diagnostics go to `err`.
int run(const RunConfig& cfg, std::ostream& log, std::ostream& err);

}  // namespace fwm::cli
