#pragma once

#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "v1d3/domain.hpp"
#include "v1d3/valuefn.hpp"

namespace v1d3 {

struct MatchedTransition {
  DriverId driver = 0;
  OrderId order = 0;
  SpatioTemporalState s_driver;
  /// State at the order's destination when the trip ends.
  SpatioTemporalState s_order;
  double reward = 0.0;
  Seconds dt = 0.0;
};

struct IdleTransition {
  DriverId driver = 0;
  SpatioTemporalState s_driver;
  SpatioTemporalState s_idle;
  Seconds dt = 0.0;
};

/// What happened to every available driver in one dispatch round.
struct DispatchRoundOutcome {
  std::vector<MatchedTransition> matched;
  std::vector<IdleTransition> idle;

  bool empty() const { return matched.empty() && idle.empty(); }
  std::size_t size() const { return matched.size() + idle.size(); }

  /// Throws InputError when a driver appears twice, a duration is not positive,
  /// or (when `available` is non-empty) the drivers differ from `available`.
  void validate(std::span<const DriverId> available = {}) const;
};

/// Live value used during an episode: an exact time-free table, or a time-free
/// network whose targets come from a shadow copy synced every round.
class OnlineValue {
 public:
  OnlineValue() = default;
  static OnlineValue tabular(int cell_count, double alpha);
  static OnlineValue network(ValueNetwork net, double alpha);

  bool is_tabular() const { return std::holds_alternative<TabularValue>(repr_); }
  double alpha() const { return alpha_; }

  double value(const SpatioTemporalState& s) const;
  /// Next-state value used in TD targets: the table itself in tabular mode
  /// (frozen by computing every target before the step), the shadow otherwise.
  double target_value(const SpatioTemporalState& s) const;

  const TabularValue& table() const { return std::get<TabularValue>(repr_); }
  TabularValue& table() { return std::get<TabularValue>(repr_); }
  const ValueNetwork& net() const { return std::get<ValueNetwork>(repr_); }
  ValueNetwork& net() { return std::get<ValueNetwork>(repr_); }
  const TargetShadow& target() const { return target_; }

  /// Records one update for the network shadow. No-op in tabular mode.
  void after_update();
  /// Re-syncs the network shadow with the live net.
  void sync_target();

  /// Per-cell values at clock 0.
  std::vector<double> values_by_cell(int cell_count) const;

  friend bool operator==(const OnlineValue& a, const OnlineValue& b) {
    return a.alpha_ == b.alpha_ && a.repr_ == b.repr_;
  }

 private:
  std::variant<TabularValue, ValueNetwork> repr_;
  TargetShadow target_;
  double alpha_ = 0.025;
};

struct TdErrors {
  std::vector<double> matched;
  std::vector<double> idle;

  double sum_squares() const;
};

/// delta = r + gamma^(dt/unit) V(s_order) - V(s_driver) for matched drivers and
/// gamma^(dt/unit) V(s_idle) - V(s_driver) for idle ones, in input order.
/// Next-state values come from target_value().
TdErrors td_errors(const DispatchRoundOutcome& outcome, const OnlineValue& v, const EngineConfig& cfg);

/// Population loss sum(delta^2) and its gradient. Network mode only.
double online_loss_and_gradient(const DispatchRoundOutcome& outcome, const OnlineValue& v,
                                const EngineConfig& cfg, NetworkGradient& grad);

/// One plain gradient step of size alpha on sum(delta^2); returns the pre-step
/// loss. Tabular mode moves each key by 2 alpha sum(delta) over the drivers
/// whose current state maps to it. An empty outcome is a no-op returning 0.
double online_update(const DispatchRoundOutcome& outcome, OnlineValue& v, const EngineConfig& cfg);

// ---------------------------------------------------------------- changepoints

/// Breakpoints are segment start indices in (0, n); K of them.
struct Segmentation {
  std::vector<int> breakpoints;
  double cost = 0.0;
};

/// Sum of squared deviations from the mean of series[begin, end).
double segment_cost(std::span<const double> series, std::size_t begin, std::size_t end);
/// Total L2 cost of the segmentation given by `breakpoints`.
double segmentation_cost(std::span<const double> series, std::span<const int> breakpoints);

/// Exact L2-optimal split into K+1 contiguous segments. Among optimal splits the
/// lexicographically smallest breakpoint list wins. Throws InputError when
/// K >= series.size() or K < 0.
Segmentation segment_series(std::span<const double> series, int K);

struct ChangepointSchedule {
  /// Strictly increasing episode seconds.
  std::vector<Seconds> points;
  int K = 0;

  /// True when some point lies in [t, t + window).
  bool fires_in(Seconds t, Seconds window) const;
};

/// Order counts per bin of `bin_s` episode seconds; times outside [0, n_bins * bin_s) are ignored.
std::vector<double> bin_order_counts(std::span<const Seconds> created_at, Seconds bin_s, int n_bins);

/// Segments the per-bin series and maps breakpoints to bin start times. The
/// episode start is prepended when `include_start` is set.
ChangepointSchedule segment_orders(std::span<const double> series, int K, Seconds bin_s,
                                   bool include_start);

/// Schedule file: bin_start_s,order_count,is_changepoint
struct ScheduleTable {
  Seconds bin_s = 1800.0;
  std::vector<double> counts;
  std::vector<int> breakpoints;
};

void write_schedule_csv(const std::filesystem::path& path, const ScheduleTable& table);
ScheduleTable read_schedule_csv(const std::filesystem::path& path);
ChangepointSchedule schedule_from_table(const ScheduleTable& table, bool include_start);

// ---------------------------------------------------------------- ensemble

/// Time-indexed offline value and the absolute time of episode second 0.
struct OfflineModel {
  const ValueNetwork* net = nullptr;
  Seconds episode_start_abs = 0.0;

  std::vector<double> slice_at(Seconds t, int cell_count) const;
};

/// States the network-mode ensemble distills on.
struct EnsembleContext {
  std::vector<SpatioTemporalState> episode_states;
  std::vector<SpatioTemporalState> historical_states;
  int cell_count = 0;
};

/// Blends the live value with the offline slice at t when the schedule fires in
/// [t, t + dispatch_round_s): omega * V + (1 - omega) * V_ope^t. Returns true
/// when a blend happened.
bool maybe_ensemble(Seconds t, OnlineValue& v, const OfflineModel& offline, const ChangepointSchedule& schedule,
                    const EngineConfig& cfg, const EnsembleContext* context = nullptr);

}  // namespace v1d3
