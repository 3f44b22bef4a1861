#include "v1d3/pipeline.hpp"

#include <algorithm>
#include <cmath>

namespace v1d3 {

ValueNetwork train_offline_value(std::span<const TrajectoryRecord> records, const Scenario& scenario,
                                 const EngineConfig& cfg, std::uint64_t seed, std::vector<double>* loss_curve) {
  ValueNetwork net(default_ope_shape(scenario.grid));
  net.randomize(derive_seed(seed, "init"));
  auto settings = OpeSettings::from_config(cfg);
  settings.seed = seed;
  OpeTrainer trainer(std::move(net), settings);
  if (settings.max_iters == 0) return trainer.net();
  const auto episodes = group_episodes(records);
  const auto dataset =
      extract_transitions(episodes, cfg, scenario.episode_start_abs_s + scenario.episode_horizon_s);
  train_ope(dataset, trainer, loss_curve);
  return trainer.net();
}

ScheduleTable schedule_table_from_history(std::span<const Order> history_orders, const Scenario& scenario,
                                          const EngineConfig& cfg) {
  ScheduleTable table;
  table.bin_s = cfg.segment_bin_s;
  table.counts = history_order_series(history_orders, cfg.segment_bin_s, scenario.episode_horizon_s);
  const int n = static_cast<int>(table.counts.size());
  const int K = std::clamp(cfg.K_changepoints, 0, std::max(0, n - 1));
  if (n > 0) table.breakpoints = segment_series(table.counts, K).breakpoints;
  return table;
}

EpisodeResources Artifacts::resources() const {
  EpisodeResources r;
  r.offline = &offline;
  r.schedule = &schedule;
  r.expert = &expert;
  r.historical_states = historical_states;
  return r;
}

Artifacts build_artifacts(const Scenario& scenario, const EngineConfig& cfg, std::uint64_t seed, int history_days) {
  Artifacts a;
  a.history = simulate_history(scenario, cfg, seed, history_days);
  a.offline = train_offline_value(a.history.trajectories, scenario, cfg, seed, &a.loss_curve);
  a.table = schedule_table_from_history(a.history.orders, scenario, cfg);
  a.schedule = schedule_from_table(a.table, cfg.ensemble_at_start);
  a.expert = estimate_expert_matrix(a.history.moves, scenario.grid);
  a.historical_states = sample_historical_states(a.history.trajectories, cfg.distill_subsample, seed);
  return a;
}

}  // namespace v1d3
