#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "v1d3/domain.hpp"
#include "v1d3/offline_ope.hpp"
#include "v1d3/online_engine.hpp"
#include "v1d3/reposition.hpp"
#include "v1d3/rng.hpp"

namespace v1d3 {

/// Piecewise-linear pickup distance (cells) -> cancel probability. Flat beyond
/// the first and last knots.
struct CancellationCurve {
  std::vector<std::pair<double, double>> knots;

  /// Throws ConfigError unless distances increase strictly and probabilities lie
  /// in [0, 1] and never decrease.
  void validate() const;
  double at(double distance) const;
};

/// Always consumes exactly one draw from `rng`.
bool step_cancellation(double pickup_distance, const CancellationCurve& curve, Rng& rng);

struct FeeModel {
  double base = 0.3;
  double per_second = 3e-4;

  double fee(Seconds trip_duration) const { return base + per_second * trip_duration; }
};

struct Hotspot {
  CellId cell = 0;
  double sigma_cells = 2.0;
  double peak_rate_per_hour = 100.0;
  /// (hour into the episode, multiplier) knots, linearly interpolated, flat outside.
  std::vector<std::pair<double, double>> profile = {{0.0, 1.0}};

  double multiplier(double hour) const;
};

struct SyntheticSpec {
  double base_rate_per_cell_hour = 0.0;
  std::vector<Hotspot> hotspots;
  /// Probability a trip heads to a hotspot region rather than a local cell.
  double hotspot_attraction = 0.5;
  int local_radius = 5;
  Seconds min_trip_s = 120.0;
  Seconds bin_s = 900.0;
  /// Log-sd of the per-day, per-hotspot intensity multiplier.
  double day_variation = 0.0;
};

struct ShiftSpec {
  /// Shift starts are uniform in [0, start_spread_s].
  Seconds start_spread_s = 0.0;
  /// Shift lengths are uniform in [min_length_s, max_length_s]; <= 0 means the whole episode.
  Seconds min_length_s = 0.0;
  Seconds max_length_s = 0.0;
};

enum class PerturbationKind { add_drivers, add_orders };

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::add_drivers;
  CellId cell = 0;
  long start_round = 0;
  int drivers = 30;
  int orders_per_pulse = 10;
  Seconds pulse_period_s = 8.0;
  Seconds duration_s = 240.0;
  /// Injected drivers go offline after this long; <= 0 keeps them to the end.
  Seconds driver_stay_s = 0.0;

  void validate(const GridMap& grid) const;
};

struct Scenario {
  std::string name = "scenario";
  GridMap grid;
  int fleet_size = 0;
  int managed_N = 0;
  Seconds episode_horizon_s = 36000.0;
  /// Seconds of day at episode second 0.
  Seconds episode_start_abs_s = 14400.0;
  CancellationCurve cancellation;
  FeeModel fees;
  ShiftSpec shifts;
  std::optional<SyntheticSpec> synthetic;
  /// Replay inputs, resolved against the scenario file's directory.
  std::optional<std::filesystem::path> orders_file;
  std::optional<std::filesystem::path> roster_file;
  std::optional<PerturbationSpec> perturbation;

  /// Throws ConfigError on inconsistent fields.
  void validate() const;
};

Scenario load_scenario(const std::filesystem::path& path);
Scenario scenario_from_json_text(const std::string& text, const std::filesystem::path& base_dir = {});
std::string scenario_to_json_text(const Scenario& s);

struct RosterEntry {
  DriverId id = 0;
  CellId start_cell = 0;
  Seconds shift_start = 0.0;
  Seconds shift_end = 0.0;
  bool managed = false;
};

struct EpisodeInputs {
  /// Sorted by creation time, then id.
  std::vector<Order> orders;
  std::vector<RosterEntry> roster;
};

/// Poisson order arrivals per (cell, bin) and a driver roster; depends only on
/// the scenario and the seed.
EpisodeInputs generate_synthetic(const Scenario& scenario, std::uint64_t seed);
/// Order with trip_duration = max(min_trip_s, cruise time) and the scenario's fee.
Order make_order(const Scenario& s, Seconds min_trip_s, OrderId id, CellId origin, CellId dest, Seconds created_at);

/// Replay files when the scenario names them, otherwise generate_synthetic.
EpisodeInputs load_inputs(const Scenario& scenario, std::uint64_t seed);

/// order_id,origin_cell,dest_cell,created_at_s,fee,trip_duration_s
std::vector<Order> read_orders_csv(const std::filesystem::path& path, const GridMap& grid);
void write_orders_csv(const std::filesystem::path& path, std::span<const Order> orders);
/// driver_id,start_cell,shift_start_s,shift_end_s,managed
std::vector<RosterEntry> read_roster_csv(const std::filesystem::path& path, const GridMap& grid);
void write_roster_csv(const std::filesystem::path& path, std::span<const RosterEntry> roster);

enum class DispatchPolicy { v1d3, baseline, greedy };
enum class RepositionPolicy { v1d3, v1d3g, expert, none };

const char* to_string(DispatchPolicy p);
const char* to_string(RepositionPolicy p);
DispatchPolicy dispatch_policy_from_string(const std::string& text);
RepositionPolicy reposition_policy_from_string(const std::string& text);

struct PolicyBundle {
  DispatchPolicy dispatch = DispatchPolicy::v1d3;
  RepositionPolicy reposition = RepositionPolicy::v1d3;
  bool learner = true;
  bool ensemble = true;
  /// Overrides cfg.omega when set (0 gives the frozen offline variant).
  std::optional<double> omega;
  std::string label;
};

/// Everything an episode reads besides the scenario and its inputs.
struct EpisodeResources {
  const ValueNetwork* offline = nullptr;
  const ChangepointSchedule* schedule = nullptr;
  const ExpertMatrix* expert = nullptr;
  /// Distillation states for network-mode ensembles.
  std::vector<SpatioTemporalState> historical_states;
};

struct EpisodeOutputs {
  std::vector<TrajectoryRecord>* trajectories = nullptr;
  std::string episode_id = "episode";
  std::ostream* assignments = nullptr;
  std::ostream* repositions = nullptr;
  /// round,cell,value every trace_every rounds, all cells.
  std::ostream* trace = nullptr;
  long trace_every = 60;
  /// Called after every round's update.
  std::function<void(long round, const OnlineValue&)> on_round;
  std::vector<std::string>* log = nullptr;
};

struct SimulationMetrics {
  double dispatch_score = 0.0;
  double answer_rate = 1.0;
  double completion_rate = 1.0;
  double reposition_score = 0.0;
  long created = 0;
  long matched = 0;
  long completed = 0;
  long cancelled = 0;
  long expired = 0;
  long open_at_horizon = 0;
  /// Sum of every driver's income at the horizon.
  double total_income = 0.0;
  long rounds = 0;
};

/// Runs the dispatch / learn / reposition loop over the scenario horizon.
/// Throws ConfigError when the bundle needs an offline snapshot, a schedule or
/// an expert matrix that `resources` lacks.
SimulationMetrics run_episode(const Scenario& scenario, const EpisodeInputs& inputs, const PolicyBundle& policy,
                              const EngineConfig& cfg, std::uint64_t seed, const EpisodeResources& resources,
                              EpisodeOutputs* outputs = nullptr);

/// scenario,policy,dispatch,reposition,learner,ensemble,seed,<metrics>
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const std::string& scenario, const PolicyBundle& policy,
                       std::uint64_t seed, const SimulationMetrics& m);

// ---------------------------------------------------------------- history

struct HistoryData {
  std::vector<TrajectoryRecord> trajectories;
  /// created_at_s is day * 86400 + episode second.
  std::vector<Order> orders;
  std::vector<ObservedMove> moves;
};

/// Simulates `days` Baseline-dispatched days (no repositioning, no learning)
/// and records their trajectories, orders and a demand-following random-walk
/// log for the expert matrix.
HistoryData simulate_history(const Scenario& scenario, const EngineConfig& cfg, std::uint64_t seed, int days);

/// Order counts per segmentation bin over the episode, averaged across history days.
std::vector<double> history_order_series(std::span<const Order> history_orders, Seconds bin_s, Seconds horizon);

/// Seeded subsample of trajectory start states.
std::vector<SpatioTemporalState> sample_historical_states(std::span<const TrajectoryRecord> records, int count,
                                                          std::uint64_t seed);

// ---------------------------------------------------------------- experiments

struct PerturbationTraces {
  /// delta[r][k]: mean value difference (perturbed - control) over the ring at radius k after round r.
  std::vector<std::array<double, 3>> delta;
  /// Same, averaged over 2-minute windows.
  std::vector<std::array<double, 3>> delta_2min;
  long injection_round = 0;
  long rounds_per_step = 60;
};

/// Paired perturbed and control runs with identical seeds and learner on.
PerturbationTraces run_perturbation_experiment(const Scenario& scenario, const EpisodeInputs& inputs,
                                               const PerturbationSpec& spec, const PolicyBundle& policy,
                                               const EngineConfig& cfg, std::uint64_t seed,
                                               const EpisodeResources& resources);

/// step,minutes,radius0,radius1,radius2 at 2-minute aggregation.
void write_perturbation_csv(const std::filesystem::path& path, const PerturbationTraces& traces,
                            Seconds round_s);

/// Dispatch variants of the comparison table, in row order.
std::vector<PolicyBundle> ablation_dispatch_variants();
std::vector<RepositionPolicy> ablation_reposition_policies();

struct MetricSummary {
  double mean = 0.0;
  double stdev = 0.0;
};

struct AblationRow {
  std::string dispatch_variant;
  RepositionPolicy reposition = RepositionPolicy::none;
  std::vector<SimulationMetrics> runs;
  MetricSummary dispatch_score, answer_rate, completion_rate, reposition_score;
};

MetricSummary summarize(std::span<const double> values);

/// Every dispatch variant crossed with every reposition policy, one episode per
/// seed; `inputs_for_seed` supplies the orders and roster for a seed.
std::vector<AblationRow> run_ablation_suite(const Scenario& scenario,
                                            const std::function<EpisodeInputs(std::uint64_t)>& inputs_for_seed,
                                            const EngineConfig& cfg, std::span<const std::uint64_t> seeds,
                                            const EpisodeResources& resources);

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);

}  // namespace v1d3
