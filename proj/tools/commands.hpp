#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "v1d3/domain.hpp"
#include "v1d3/simulator.hpp"

namespace v1d3::cli {

namespace fs = std::filesystem;

struct GlobalOptions {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  bool strict_paper = false;
};

/// Defaults, then the config file, then V1D3_* environment variables, then
/// --strict-paper, then --seed.
EngineConfig resolve_config(const GlobalOptions& g);

/// Git blob id: SHA-1 of "blob <size>\0" followed by the file bytes.
std::string git_blob_sha1(const fs::path& path);

/// Collects what a run read and wrote; written as JSON next to the outputs.
class RunManifest {
 public:
  RunManifest(std::string command, const GlobalOptions& g, const EngineConfig& cfg);
  void input(const fs::path& path);
  void output(const fs::path& path);
  void note(const std::string& key, nlohmann::json value);
  void write(const fs::path& path);

 private:
  nlohmann::ordered_json doc_;
  std::chrono::system_clock::time_point start_;
};

struct GenDataArgs {
  fs::path scenario;
  fs::path out;
  bool force = false;
  int history_days = 3;
};

struct TrainOpeArgs {
  fs::path trajectories;
  fs::path scenario;
  fs::path out;
  bool force = false;
  std::optional<int> iters;
};

struct SegmentArgs {
  fs::path orders;
  std::optional<fs::path> scenario;
  std::optional<int> K;
  fs::path out;
  bool force = false;
};

struct ResourceArgs {
  std::optional<fs::path> snapshot;
  std::optional<fs::path> schedule;
  std::optional<fs::path> expert;
  std::optional<fs::path> trajectories;
};

struct SimulateArgs {
  fs::path scenario;
  ResourceArgs resources;
  PolicyBundle policy;
  fs::path out;
  bool force = false;
  long trace_every = 60;
  bool assignments = false;
};

struct ExperimentArgs {
  std::string kind;
  fs::path scenario;
  ResourceArgs resources;
  /// Used by the perturbation kinds; the ablation runs its fixed grid.
  PolicyBundle policy{DispatchPolicy::v1d3, RepositionPolicy::none, true, true, std::nullopt, "v1d3/none"};
  std::vector<std::uint64_t> seeds;
  std::optional<long> start_round;
  std::optional<CellId> cell;
  fs::path out;
  bool force = false;
};

void cmd_gen_data(const GlobalOptions& g, const GenDataArgs& a);
void cmd_train_ope(const GlobalOptions& g, const TrainOpeArgs& a);
void cmd_segment(const GlobalOptions& g, const SegmentArgs& a);
SimulationMetrics cmd_simulate(const GlobalOptions& g, const SimulateArgs& a);
void cmd_experiment(const GlobalOptions& g, const ExperimentArgs& a);

/// Applies one "--policy key=value" token to the bundle.
void apply_policy_flag(PolicyBundle& p, const std::string& flag);

/// Parses argv and dispatches; returns the process exit status.
int run(int argc, char** argv);

}  // namespace v1d3::cli
