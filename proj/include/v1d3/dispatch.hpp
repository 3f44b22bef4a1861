#pragma once

#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "v1d3/domain.hpp"
#include "v1d3/online_engine.hpp"

namespace v1d3 {

struct DispatchDriver {
  DriverId id = 0;
  SpatioTemporalState state;
};

/// Eligible driver-order pair; `driver` and `order` index the problem lists.
struct DispatchEdge {
  int driver = 0;
  int order = 0;
  double rho = 0.0;
  double fee = 0.0;
  int distance = 0;
};

/// Edges are stored driver-major with ascending order index inside a driver.
struct DispatchProblem {
  std::vector<DriverId> drivers;
  std::vector<OrderId> orders;
  std::vector<DispatchEdge> edges;
  int radius = kUnlimitedRadius;

  /// Throws InputError on out-of-range indices, radius violations, non-finite
  /// utilities or a broken edge order.
  void validate() const;
};

/// Every pair eligible at distance 0 with rho = fee = matrix entry; ids are indices.
DispatchProblem dense_problem(const std::vector<std::vector<double>>& rho);

struct MatchingSolution {
  /// (driver index, order index), sorted by driver index.
  std::vector<std::pair<int, int>> pairs;
  double total_utility = 0.0;
};

/// Seconds from accepting an order to dropping the passenger; includes the
/// pickup leg when cfg.pickup_in_order_duration is set.
Seconds order_duration(CellId driver_cell, const Order& order, const EngineConfig& cfg, const GridMap& grid);

/// rho = fee + gamma^(dt/unit) V(destination) - V(driver), V the live value.
double utility(const SpatioTemporalState& driver, const Order& order, const OnlineValue& v, const EngineConfig& cfg,
               const GridMap& grid);

/// Edges for every pair within cfg.pickup_radius_cells, utilities from `v`.
DispatchProblem build_problem(std::span<const DispatchDriver> drivers, std::span<const Order> orders,
                              const OnlineValue& v, const EngineConfig& cfg, const GridMap& grid);

/// Maximum total rho over matchings. Edges with rho <= 0 are ignored.
/// Successive shortest paths with potentials; ties favour lower indices.
MatchingSolution solve_matching(const DispatchProblem& problem);

/// Maximum cardinality, then minimum total pickup distance.
MatchingSolution baseline_match(const DispatchProblem& problem);

/// Pairs by fee descending (ties by edge index), accepted while both ends are free.
MatchingSolution greedy_match(const DispatchProblem& problem);

/// round,driver_id,order_id,rho,pickup_distance_cells
void write_assignment_header(std::ostream& out);
void write_assignments(std::ostream& out, long round, const DispatchProblem& problem,
                       const MatchingSolution& solution);

}  // namespace v1d3
