#pragma once

#include <cstdint>
#include <vector>

#include "v1d3/offline_ope.hpp"
#include "v1d3/online_engine.hpp"
#include "v1d3/reposition.hpp"
#include "v1d3/simulator.hpp"
#include "v1d3/valuefn.hpp"

namespace v1d3 {

/// Trains the time-indexed offline value on logged trajectories. The network is
/// initialized from the "init" substream of `seed`; cfg.ope_iters steps.
ValueNetwork train_offline_value(std::span<const TrajectoryRecord> records, const Scenario& scenario,
                                 const EngineConfig& cfg, std::uint64_t seed,
                                 std::vector<double>* loss_curve = nullptr);

/// Segmentation of the averaged history order series with cfg.K_changepoints
/// breakpoints (clamped to the bin count).
ScheduleTable schedule_table_from_history(std::span<const Order> history_orders, const Scenario& scenario,
                                          const EngineConfig& cfg);

/// Everything the full policy stack reads, built from simulated history.
struct Artifacts {
  HistoryData history;
  ValueNetwork offline;
  std::vector<double> loss_curve;
  ScheduleTable table;
  ChangepointSchedule schedule;
  ExpertMatrix expert;
  std::vector<SpatioTemporalState> historical_states;

  /// Borrowing view; the artifacts must outlive it.
  EpisodeResources resources() const;
};

Artifacts build_artifacts(const Scenario& scenario, const EngineConfig& cfg, std::uint64_t seed, int history_days);

}  // namespace v1d3
