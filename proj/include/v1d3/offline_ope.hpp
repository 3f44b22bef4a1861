#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "v1d3/domain.hpp"
#include "v1d3/valuefn.hpp"

namespace v1d3 {

/// One logged option: a trip or an idle stretch taken by a driver.
struct TrajectoryRecord {
  std::string episode_id;
  DriverId driver_id = 0;
  CellId from_cell = 0;
  Seconds abs_time = 0.0;
  OptionKind kind = OptionKind::idle;
  double reward = 0.0;
  CellId to_cell = 0;
  Seconds duration = 0.0;
};

/// Header: episode_id,driver_id,from_cell,abs_time_s,kind,reward,to_cell,duration_s
std::vector<TrajectoryRecord> read_trajectory_log(const std::filesystem::path& path);
void write_trajectory_log(const std::filesystem::path& path, std::span<const TrajectoryRecord> records);
void write_trajectory_header(std::ostream& out);
void write_trajectory_record(std::ostream& out, const TrajectoryRecord& r);

/// Options of one driver within one episode, in log order.
struct EpisodeLog {
  std::string episode_id;
  DriverId driver_id = 0;
  std::vector<TrajectoryRecord> options;
};

/// Groups records by (episode, driver) preserving first-appearance order.
std::vector<EpisodeLog> group_episodes(std::span<const TrajectoryRecord> records);

struct OpeTransition {
  SpatioTemporalState from;
  double reward = 0.0;
  SpatioTemporalState to;
  /// Duration in discount units, rounded up, at least 1.
  int k = 1;
  /// The option ends at or past the end of the day window: no bootstrap.
  bool terminal = false;
};

struct TrajectoryDataset {
  std::vector<OpeTransition> transitions;
  std::vector<std::string> source_episodes;
  /// One diagnostic per rejected driver-episode.
  std::vector<std::string> rejected;
};

/// Turns every logged option into one (s, R, s', k) record. Driver-episodes with
/// decreasing timestamps are rejected whole and reported in `rejected`.
/// `day_end_abs` marks options ending at or after it as terminal.
TrajectoryDataset extract_transitions(std::span<const EpisodeLog> episodes, const EngineConfig& cfg,
                                      std::optional<Seconds> day_end_abs = std::nullopt);

/// Discount units of a duration: ceil(duration / unit), at least 1.
int discount_units(Seconds duration, const EngineConfig& cfg);

/// R (gamma^k - 1) / (k (gamma - 1)): the trip reward spread evenly over k units
/// and discounted. gamma == 1 returns R.
double smdp_reward(double reward, int k, double gamma);

struct OpeSettings {
  double lr = 3e-4;
  double lambda = 1e-4;
  int batch_size = 256;
  int max_iters = 50000;
  int target_sync = 100;
  double gamma = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  static OpeSettings from_config(const EngineConfig& cfg);
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Network shape used for the time-indexed offline value.
NetworkShape default_ope_shape(const GridMap& grid);

/// Regularized offline evaluation of the logging policy. Dense weights take a
/// standard Adam step; embedding rows take lazy Adam steps (only rows with a
/// gradient move, bias correction uses the global step count).
class OpeTrainer {
 public:
  OpeTrainer(ValueNetwork net, OpeSettings settings);

  /// Squared Bellman error over the batch plus lambda * lipschitz_penalty, and
  /// its gradient with respect to the live parameters (target held fixed).
  double loss_and_gradient(std::span<const OpeTransition> batch, NetworkGradient& grad) const;

  /// One Adam step; returns the pre-step loss. Throws DivergenceError when the
  /// loss is not finite.
  double step(std::span<const OpeTransition> batch);

  const ValueNetwork& net() const { return net_; }
  ValueNetwork& net() { return net_; }
  const TargetShadow& target() const { return target_; }
  const OpeSettings& settings() const { return settings_; }
  long iterations() const { return iterations_; }

 private:
  ValueNetwork net_;
  TargetShadow target_;
  OpeSettings settings_;
  long iterations_ = 0;
  std::vector<double> m_dense_, v_dense_;
  std::vector<double> m_mem_, v_mem_;
  mutable NetworkWorkspace ws_;
};

/// Runs settings.max_iters steps on uniform mini-batches (with replacement)
/// drawn from the "ope-batch" substream. Appends one loss per step to
/// `loss_curve` when given.
const ValueNetwork& train_ope(const TrajectoryDataset& dataset, OpeTrainer& trainer,
                              std::vector<double>* loss_curve = nullptr);

/// Offline values with time pinned to `abs_time`, one entry per cell.
struct OfflineSlice {
  Seconds abs_time = 0.0;
  std::vector<double> by_cell;

  double at(CellId cell) const { return by_cell.at(cell); }
};

/// Throws InputError unless the network takes a time input.
OfflineSlice slice(const ValueNetwork& net, Seconds abs_time, int cell_count);

/// Two-column CSV: step,loss
void write_loss_curve(const std::filesystem::path& path, std::span<const double> losses);

}  // namespace v1d3
