#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "v1d3/domain.hpp"
#include "v1d3/online_engine.hpp"
#include "v1d3/rng.hpp"

namespace v1d3 {

struct RepositionCandidate {
  CellId cell = 0;
  Seconds dt = 0.0;
};

struct RepositionCandidateSet {
  SpatioTemporalState origin;
  /// Origin first (dt = 0), then the other cells in increasing id order.
  std::vector<RepositionCandidate> candidates;
  bool includes_origin = true;
};

/// Origin plus every cell within cfg.reposition_radius_cells, with cruise times.
RepositionCandidateSet reposition_candidates(const SpatioTemporalState& origin, const EngineConfig& cfg,
                                             const GridMap& grid);

/// gamma^(dt/unit) V(s_k) / cfg.reposition_value_scale for each candidate.
std::vector<double> discounted_values(const RepositionCandidateSet& cands, const OnlineValue& v,
                                      const EngineConfig& cfg);

/// Softmax of discounted_values, computed with max subtraction.
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> reposition_distribution(const RepositionCandidateSet& cands, const OnlineValue& v,
                                            const EngineConfig& cfg);

struct RepositionMove {
  DriverId driver = 0;
  CellId from = 0;
  CellId to = 0;
};

/// Idle drivers whose idle time at `now` reaches C dispatch rounds, sorted by id.
std::vector<const Driver*> qualifying_drivers(std::span<const Driver> drivers, Seconds now, const EngineConfig& cfg);

/// One independent draw per qualifying driver, in driver-id order.
std::vector<RepositionMove> sample_reposition(std::span<const Driver> drivers, Seconds now, const OnlineValue& v,
                                              const EngineConfig& cfg, const GridMap& grid, Rng& rng);

/// Argmax of the discounted values; exact ties are broken uniformly from `rng`.
std::vector<RepositionMove> greedy_reposition(std::span<const Driver> drivers, Seconds now, const OnlineValue& v,
                                              const EngineConfig& cfg, const GridMap& grid, Rng& rng);

/// Per hour of day and origin, a distribution over destination cells.
class ExpertMatrix {
 public:
  using Row = std::vector<std::pair<CellId, double>>;

  /// Throws InputError on negative or non-finite entries, hours outside [0, 24)
  /// or rows that do not sum to 1 within 1e-9.
  void set_row(int hour, CellId origin, Row row);
  const Row* row(int hour, CellId origin) const;
  std::size_t row_count() const { return rows_.size(); }

  /// CSV: hour,origin_cell,destination_cell,probability
  static ExpertMatrix load(const std::filesystem::path& path, const GridMap& grid);
  void save(const std::filesystem::path& path) const;

  friend bool operator==(const ExpertMatrix&, const ExpertMatrix&) = default;

 private:
  std::map<std::pair<int, CellId>, Row> rows_;
};

struct ObservedMove {
  Seconds abs_time = 0.0;
  CellId from = 0;
  CellId to = 0;
};

/// Hour-of-day transition frequencies with add-one smoothing over the cells
/// within `radius` of each observed origin. Moves farther than `radius` are ignored.
ExpertMatrix estimate_expert_matrix(std::span<const ObservedMove> moves, const GridMap& grid, int radius = 2);

/// Categorical draw from the row for the driver's hour and cell. A missing row
/// falls back to a uniform choice among the radius-1 neighbours and appends a
/// note to `log` when given.
std::vector<RepositionMove> expert_reposition(std::span<const Driver> drivers, Seconds now,
                                              Seconds episode_start_abs, const ExpertMatrix& matrix,
                                              const EngineConfig& cfg, const GridMap& grid, Rng& rng,
                                              std::vector<std::string>* log = nullptr);

/// round,driver_id,from_cell,to_cell,policy
void write_reposition_header(std::ostream& out);
void write_repositions(std::ostream& out, long round, std::span<const RepositionMove> moves,
                       const std::string& policy);

}  // namespace v1d3
