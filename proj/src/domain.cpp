#include "v1d3/domain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace v1d3 {

void GridMap::validate() const {
  if (width < 1 || height < 1) throw ConfigError("grid dimensions must be at least 1x1");
  if (!(cell_edge_m > 0.0)) throw ConfigError("cell_edge_m must be positive");
  if (!(speed_mps > 0.0)) throw ConfigError("speed_mps must be positive");
}

void GridMap::check_cell(CellId c) const {
  if (!contains(c)) {
    throw InputError("cell " + std::to_string(c) + " outside a " + std::to_string(width) + "x" +
                     std::to_string(height) + " grid");
  }
}

int chebyshev_distance(CellId a, CellId b, const GridMap& grid) {
  return std::max(std::abs(grid.x_of(a) - grid.x_of(b)), std::abs(grid.y_of(a) - grid.y_of(b)));
}

Seconds travel_time(CellId a, CellId b, const GridMap& grid) {
  const int d = chebyshev_distance(a, b, grid);
  if (d == 0) return 0.0;
  // The epsilon absorbs representation error in edge / speed.
  return std::ceil(d * grid.cell_edge_m / grid.speed_mps - 1e-9);
}

std::vector<CellId> cells_within(CellId center, int radius, const GridMap& grid) {
  const int cx = grid.x_of(center);
  const int cy = grid.y_of(center);
  const int r = std::max(0, std::min(radius, std::max(grid.width, grid.height)));
  std::vector<CellId> out;
  for (int y = std::max(0, cy - r); y <= std::min(grid.height - 1, cy + r); ++y) {
    for (int x = std::max(0, cx - r); x <= std::min(grid.width - 1, cx + r); ++x) {
      out.push_back(grid.cell_at(x, y));
    }
  }
  return out;
}

std::vector<CellId> ring_cells(CellId center, int radius, const GridMap& grid) {
  std::vector<CellId> out;
  for (CellId c : cells_within(center, radius, grid)) {
    if (chebyshev_distance(c, center, grid) == radius) out.push_back(c);
  }
  return out;
}

void validate_order(const Order& order, const GridMap& grid) {
  grid.check_cell(order.origin);
  grid.check_cell(order.destination);
  if (!(order.fee >= 0.0) || !std::isfinite(order.fee)) {
    throw InputError("order " + std::to_string(order.id) + ": fee must be finite and >= 0");
  }
  if (!(order.trip_duration > 0.0)) {
    throw InputError("order " + std::to_string(order.id) + ": trip_duration must be positive");
  }
}

const char* to_string(OptionKind kind) { return kind == OptionKind::trip ? "trip" : "idle"; }

OptionKind option_kind_from_string(const std::string& text) {
  if (text == "trip") return OptionKind::trip;
  if (text == "idle") return OptionKind::idle;
  throw InputError("unknown option kind '" + text + "'");
}

DriverTransition make_transition(const SpatioTemporalState& from, OptionKind kind, double reward,
                                 CellId to_cell, Seconds duration) {
  if (!(duration > 0.0)) throw InputError("transition duration must be positive");
  if (kind == OptionKind::idle && reward != 0.0) {
    throw InputError("idle transitions carry zero reward");
  }
  DriverTransition t;
  t.from = from;
  t.kind = kind;
  t.reward = reward;
  t.duration = duration;
  t.to.cell = to_cell;
  t.to.clock = from.clock + duration;
  if (from.abs_time) t.to.abs_time = std::fmod(*from.abs_time + duration, kSecondsPerDay);
  return t;
}

void EngineConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid config: ") + what);
  };
  require(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
  require(discount_time_unit_s > 0.0, "discount_time_unit_s must be positive");
  require(omega >= 0.0 && omega <= 1.0, "omega must lie in [0, 1]");
  require(reposition_threshold_C >= 1, "reposition_threshold_C must be >= 1");
  require(dispatch_round_s > 0.0, "dispatch_round_s must be positive");
  require(online_lr_alpha > 0.0, "online_lr_alpha must be positive");
  require(ope_lr > 0.0, "ope_lr must be positive");
  require(lipschitz_lambda >= 0.0, "lipschitz_lambda must be >= 0");
  require(K_changepoints >= 0, "K_changepoints must be >= 0");
  require(segment_bin_s > 0.0, "segment_bin_s must be positive");
  require(pickup_radius_cells >= 0, "pickup_radius_cells must be >= 0");
  require(reposition_radius_cells >= 0, "reposition_radius_cells must be >= 0");
  require(episode_horizon_s > 0.0, "episode_horizon_s must be positive");
  require(reposition_value_scale > 0.0, "reposition_value_scale must be positive");
  require(order_patience_rounds >= 1, "order_patience_rounds must be >= 1");
  require(online_representation == "tabular" || online_representation == "network",
          "online_representation must be 'tabular' or 'network'");
  require(ope_batch_size >= 1, "ope_batch_size must be >= 1");
  require(ope_iters >= 0, "ope_iters must be >= 0");
  require(ope_target_sync >= 1, "ope_target_sync must be >= 1");
  require(distill_subsample >= 0, "distill_subsample must be >= 0");
  require(distill_steps >= 0, "distill_steps must be >= 0");
  require(distill_lr > 0.0, "distill_lr must be positive");
}

double discount_exponent(Seconds duration, const EngineConfig& cfg) {
  return duration / cfg.discount_time_unit_s;
}

double discount_factor(Seconds duration, const EngineConfig& cfg) {
  if (duration == 0.0) return 1.0;
  return std::pow(cfg.gamma, discount_exponent(duration, cfg));
}

void apply_strict_paper(EngineConfig& cfg) {
  cfg.pickup_radius_cells = kUnlimitedRadius;
  cfg.ensemble_at_start = false;
  cfg.pickup_in_order_duration = false;
}

}  // namespace v1d3
