#include "v1d3/dispatch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

#include "v1d3/csv.hpp"

namespace v1d3 {

void DispatchProblem::validate() const {
  const int nd = static_cast<int>(drivers.size());
  const int no = static_cast<int>(orders.size());
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto& e = edges[k];
    if (e.driver < 0 || e.driver >= nd || e.order < 0 || e.order >= no) throw InputError("edge index out of range");
    if (e.distance > radius) throw InputError("edge exceeds the pickup radius");
    if (!std::isfinite(e.rho)) throw InputError("utility must be finite");
    if (k > 0) {
      const auto& p = edges[k - 1];
      if (std::pair(p.driver, p.order) >= std::pair(e.driver, e.order)) throw InputError("edges out of order");
    }
  }
}

DispatchProblem dense_problem(const std::vector<std::vector<double>>& rho) {
  DispatchProblem p;
  const int nd = static_cast<int>(rho.size());
  const int no = nd == 0 ? 0 : static_cast<int>(rho[0].size());
  for (int i = 0; i < nd; ++i) p.drivers.push_back(i);
  for (int j = 0; j < no; ++j) p.orders.push_back(j);
  for (int i = 0; i < nd; ++i) {
    if (static_cast<int>(rho[i].size()) != no) throw InputError("utility matrix is ragged");
    for (int j = 0; j < no; ++j) p.edges.push_back({i, j, rho[i][j], rho[i][j], 0});
  }
  return p;
}

Seconds order_duration(CellId driver_cell, const Order& order, const EngineConfig& cfg, const GridMap& grid) {
  const Seconds pickup = cfg.pickup_in_order_duration ? travel_time(driver_cell, order.origin, grid) : 0.0;
  return pickup + order.trip_duration;
}

double utility(const SpatioTemporalState& driver, const Order& order, const OnlineValue& v, const EngineConfig& cfg,
               const GridMap& grid) {
  const Seconds dt = order_duration(driver.cell, order, cfg, grid);
  const SpatioTemporalState dest{order.destination, driver.clock + dt, std::nullopt};
  return order.fee + discount_factor(dt, cfg) * v.value(dest) - v.value(driver);
}

DispatchProblem build_problem(std::span<const DispatchDriver> drivers, std::span<const Order> orders,
                              const OnlineValue& v, const EngineConfig& cfg, const GridMap& grid) {
  DispatchProblem p;
  p.radius = cfg.pickup_radius_cells;
  p.drivers.reserve(drivers.size());
  p.orders.reserve(orders.size());
  for (const auto& d : drivers) p.drivers.push_back(d.id);
  for (const auto& o : orders) p.orders.push_back(o.id);
  for (int i = 0; i < static_cast<int>(drivers.size()); ++i) {
    const auto& d = drivers[i];
    const double v_driver = v.value(d.state);
    for (int j = 0; j < static_cast<int>(orders.size()); ++j) {
      const auto& o = orders[j];
      const int dist = chebyshev_distance(d.state.cell, o.origin, grid);
      if (dist > p.radius) continue;
      const Seconds dt = order_duration(d.state.cell, o, cfg, grid);
      const SpatioTemporalState dest{o.destination, d.state.clock + dt, std::nullopt};
      const double rho = o.fee + discount_factor(dt, cfg) * v.value(dest) - v_driver;
      p.edges.push_back({i, j, rho, o.fee, dist});
    }
  }
  return p;
}

namespace {

// Max-weight matching on a sparse bipartite graph with positive weights.
// Residual costs: -w on unmatched driver->order edges, +w on matched
// order->driver edges. Each phase runs Dijkstra on reduced costs from every
// free driver and augments along the cheapest path ending at a free order,
// stopping once that path no longer has negative cost.
std::vector<int> max_weight_matching(int nd, int no, std::span<const DispatchEdge> edges,
                                     std::span<const double> weight) {
  const int n = nd + no;
  std::vector<std::vector<int>> out_edges(nd);
  for (int k = 0; k < static_cast<int>(edges.size()); ++k) {
    if (weight[k] > 0.0) out_edges[edges[k].driver].push_back(k);
  }

  std::vector<int> match_driver(nd, -1);  // driver -> edge index
  std::vector<int> match_order(no, -1);   // order -> edge index
  std::vector<double> pot(n, 0.0);
  for (int k = 0; k < static_cast<int>(edges.size()); ++k) {
    if (weight[k] > 0.0) {
      auto& p = pot[nd + edges[k].order];
      p = std::min(p, -weight[k]);
    }
  }

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(n);
  std::vector<int> parent(n);  // edge index used to enter the node
  std::vector<char> done(n);
  using Item = std::pair<double, int>;

  for (int phase = 0; phase < std::min(nd, no); ++phase) {
    std::fill(dist.begin(), dist.end(), inf);
    std::fill(parent.begin(), parent.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    for (int d = 0; d < nd; ++d) {
      if (match_driver[d] < 0) {
        dist[d] = std::max(0.0, -pot[d]);
        heap.emplace(dist[d], d);
      }
    }
    while (!heap.empty()) {
      const auto [du, u] = heap.top();
      heap.pop();
      if (done[u] || du > dist[u]) continue;
      done[u] = 1;
      if (u < nd) {
        for (int k : out_edges[u]) {
          if (match_driver[u] == k) continue;
          const int v = nd + edges[k].order;
          const double nd_v = du + std::max(0.0, -weight[k] + pot[u] - pot[v]);
          if (nd_v < dist[v]) {
            dist[v] = nd_v;
            parent[v] = k;
            heap.emplace(nd_v, v);
          }
        }
      } else {
        const int k = match_order[u - nd];
        if (k < 0) continue;
        const int v = edges[k].driver;
        const double nd_v = du + std::max(0.0, weight[k] + pot[u] - pot[v]);
        if (nd_v < dist[v]) {
          dist[v] = nd_v;
          parent[v] = k;
          heap.emplace(nd_v, v);
        }
      }
    }

    int best = -1;
    double best_cost = 0.0;
    for (int o = 0; o < no; ++o) {
      if (match_order[o] >= 0 || dist[nd + o] == inf) continue;
      const double true_cost = dist[nd + o] + pot[nd + o];
      if (true_cost < best_cost) {
        best_cost = true_cost;
        best = o;
      }
    }
    if (best < 0) break;

    double reach = 0.0;
    for (int u = 0; u < n; ++u) {
      if (dist[u] < inf) reach = std::max(reach, dist[u]);
    }
    for (int u = 0; u < n; ++u) pot[u] += dist[u] < inf ? dist[u] : reach;

    int v = nd + best;
    while (true) {
      const int k = parent[v];
      const int d = edges[k].driver;
      const int previous = match_driver[d];
      match_driver[d] = k;
      match_order[edges[k].order] = k;
      if (previous < 0) break;
      v = nd + edges[previous].order;
      // The driver's old order is re-entered through its own parent edge next.
      match_order[edges[previous].order] = -1;
    }
  }
  return match_driver;
}

MatchingSolution collect(const DispatchProblem& problem, const std::vector<int>& match_driver) {
  MatchingSolution s;
  for (int d = 0; d < static_cast<int>(match_driver.size()); ++d) {
    const int k = match_driver[d];
    if (k < 0) continue;
    s.pairs.emplace_back(d, problem.edges[k].order);
    s.total_utility += problem.edges[k].rho;
  }
  return s;
}

}  // namespace

MatchingSolution solve_matching(const DispatchProblem& problem) {
  std::vector<double> w(problem.edges.size());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = problem.edges[k].rho;
  return collect(problem, max_weight_matching(static_cast<int>(problem.drivers.size()),
                                              static_cast<int>(problem.orders.size()), problem.edges, w));
}

MatchingSolution baseline_match(const DispatchProblem& problem) {
  int max_dist = 0;
  for (const auto& e : problem.edges) max_dist = std::max(max_dist, e.distance);
  const double size = static_cast<double>(std::min(problem.drivers.size(), problem.orders.size()));
  const double big = max_dist * size + 1.0;
  std::vector<double> w(problem.edges.size());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = big - problem.edges[k].distance;
  return collect(problem, max_weight_matching(static_cast<int>(problem.drivers.size()),
                                              static_cast<int>(problem.orders.size()), problem.edges, w));
}

MatchingSolution greedy_match(const DispatchProblem& problem) {
  std::vector<int> order(problem.edges.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return problem.edges[a].fee > problem.edges[b].fee; });
  std::vector<int> match_driver(problem.drivers.size(), -1);
  std::vector<char> order_taken(problem.orders.size(), 0);
  for (int k : order) {
    const auto& e = problem.edges[k];
    if (match_driver[e.driver] >= 0 || order_taken[e.order]) continue;
    match_driver[e.driver] = k;
    order_taken[e.order] = 1;
  }
  return collect(problem, match_driver);
}

void write_assignment_header(std::ostream& out) {
  csv::write_row(out, {"round", "driver_id", "order_id", "rho", "pickup_distance_cells"});
}

void write_assignments(std::ostream& out, long round, const DispatchProblem& problem,
                       const MatchingSolution& solution) {
  for (const auto& [d, o] : solution.pairs) {
    const auto it = std::lower_bound(problem.edges.begin(), problem.edges.end(), std::pair(d, o),
                                     [](const DispatchEdge& e, const std::pair<int, int>& key) {
                                       return std::pair(e.driver, e.order) < key;
                                     });
    if (it == problem.edges.end() || it->driver != d || it->order != o) throw InputError("assignment without an eligible edge");
    csv::write_row(out, {std::to_string(round), std::to_string(problem.drivers[d]), std::to_string(problem.orders[o]),
                         csv::format_double(it->rho), std::to_string(it->distance)});
  }
}

}  // namespace v1d3
