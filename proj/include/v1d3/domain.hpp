#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace v1d3 {

using CellId = std::int32_t;
using DriverId = std::int64_t;
using OrderId = std::int64_t;
using Seconds = double;

constexpr Seconds kSecondsPerDay = 86400.0;

/// Raised for malformed inputs: bad cells, missing fields, unparseable records.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a configuration document or a scenario is inconsistent.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Square-cell city grid. Cells are numbered row-major: id = y * width + x.
struct GridMap {
  int width = 20;
  int height = 20;
  double cell_edge_m = 500.0;
  double speed_mps = 5.0;

  int cell_count() const { return width * height; }
  bool contains(CellId c) const { return c >= 0 && c < cell_count(); }
  int x_of(CellId c) const { return c % width; }
  int y_of(CellId c) const { return c / width; }
  CellId cell_at(int x, int y) const { return y * width + x; }
  CellId center() const { return cell_at(width / 2, height / 2); }

  /// Throws ConfigError unless every dimension is positive.
  void validate() const;
  /// Throws InputError when `c` is outside the grid.
  void check_cell(CellId c) const;
};

int chebyshev_distance(CellId a, CellId b, const GridMap& grid);

/// Cruise time between cell centers: Chebyshev cells * edge / speed, rounded up
/// to whole seconds.
Seconds travel_time(CellId a, CellId b, const GridMap& grid);

/// All cells within Chebyshev `radius` of `center`, in increasing id order.
std::vector<CellId> cells_within(CellId center, int radius, const GridMap& grid);

/// Cells at Chebyshev distance exactly `radius`, in increasing id order.
std::vector<CellId> ring_cells(CellId center, int radius, const GridMap& grid);

struct SpatioTemporalState {
  CellId cell = 0;
  Seconds clock = 0.0;
  /// Seconds of day; only the time-indexed offline network reads it.
  std::optional<Seconds> abs_time;

  friend bool operator==(const SpatioTemporalState&, const SpatioTemporalState&) = default;
};

enum class DriverStatus { idle, en_route, on_trip, offline };

struct Driver {
  DriverId id = 0;
  SpatioTemporalState state;
  DriverStatus status = DriverStatus::offline;
  Seconds idle_since = 0.0;
  Seconds online_since = 0.0;
  double income_accum = 0.0;
  bool managed = false;
};

enum class OrderStatus { open, matched, cancelled, completed };

struct Order {
  OrderId id = 0;
  CellId origin = 0;
  CellId destination = 0;
  Seconds created_at = 0.0;
  double fee = 0.0;
  Seconds trip_duration = 1.0;
  OrderStatus status = OrderStatus::open;
};

/// Throws InputError on fee < 0 or trip_duration <= 0.
void validate_order(const Order& order, const GridMap& grid);

enum class OptionKind { trip, idle };

const char* to_string(OptionKind kind);
OptionKind option_kind_from_string(const std::string& text);

struct DriverTransition {
  SpatioTemporalState from;
  OptionKind kind = OptionKind::idle;
  double reward = 0.0;
  SpatioTemporalState to;
  Seconds duration = 0.0;
};

/// Builds a transition whose destination clock is `from.clock + duration`.
/// Idle transitions must carry zero reward; durations must be positive.
DriverTransition make_transition(const SpatioTemporalState& from, OptionKind kind, double reward,
                                 CellId to_cell, Seconds duration);

struct EngineConfig {
  double gamma = 0.9;
  Seconds discount_time_unit_s = 600.0;
  double omega = 0.2;
  int reposition_threshold_C = 150;
  Seconds dispatch_round_s = 2.0;
  double online_lr_alpha = 0.025;
  double ope_lr = 3e-4;
  double lipschitz_lambda = 1e-4;
  int K_changepoints = 5;
  Seconds segment_bin_s = 1800.0;
  int pickup_radius_cells = 3;
  int reposition_radius_cells = 2;
  Seconds episode_horizon_s = 72000.0;
  std::uint64_t seed = 0;

  // Knobs for behaviour the algorithm leaves open.
  bool ensemble_at_start = true;
  bool pickup_in_order_duration = true;
  double reposition_value_scale = 1.0;
  int order_patience_rounds = 10;
  std::string online_representation = "tabular";
  int ope_batch_size = 256;
  int ope_iters = 50000;
  int ope_target_sync = 100;
  int distill_subsample = 5000;
  int distill_steps = 200;
  double distill_lr = 1e-3;

  /// Throws ConfigError when any field is out of range.
  void validate() const;
};

/// Field names accepted in configuration documents, in declaration order.
const std::vector<std::string>& engine_config_keys();

/// Exponent applied to gamma for a transition lasting `duration` seconds.
double discount_exponent(Seconds duration, const EngineConfig& cfg);

/// gamma ^ discount_exponent(duration).
double discount_factor(Seconds duration, const EngineConfig& cfg);

/// Matching radius meaning "no pruning".
constexpr int kUnlimitedRadius = 1 << 20;

/// Pickup radius infinite, no ensemble at episode start, trip-only order durations.
void apply_strict_paper(EngineConfig& cfg);

}  // namespace v1d3
