#include "v1d3/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "v1d3/csv.hpp"
#include "v1d3/dispatch.hpp"

namespace v1d3 {

const char* to_string(DispatchPolicy p) {
  switch (p) {
    case DispatchPolicy::v1d3: return "v1d3";
    case DispatchPolicy::baseline: return "baseline";
    case DispatchPolicy::greedy: return "greedy";
  }
  return "?";
}

const char* to_string(RepositionPolicy p) {
  switch (p) {
    case RepositionPolicy::v1d3: return "v1d3";
    case RepositionPolicy::v1d3g: return "v1d3g";
    case RepositionPolicy::expert: return "expert";
    case RepositionPolicy::none: return "none";
  }
  return "?";
}

DispatchPolicy dispatch_policy_from_string(const std::string& text) {
  if (text == "v1d3") return DispatchPolicy::v1d3;
  if (text == "baseline") return DispatchPolicy::baseline;
  if (text == "greedy") return DispatchPolicy::greedy;
  throw ConfigError("unknown dispatch policy '" + text + "' (expected v1d3, baseline or greedy)");
}

RepositionPolicy reposition_policy_from_string(const std::string& text) {
  if (text == "v1d3") return RepositionPolicy::v1d3;
  if (text == "v1d3g") return RepositionPolicy::v1d3g;
  if (text == "expert") return RepositionPolicy::expert;
  if (text == "none") return RepositionPolicy::none;
  throw ConfigError("unknown reposition policy '" + text + "' (expected v1d3, v1d3g, expert or none)");
}

namespace {

constexpr DriverId kInjectedDriverBase = 1'000'000'000'000LL;
constexpr OrderId kInjectedOrderBase = 1'000'000'000'000LL;

struct SimDriver {
  Driver d;
  CellId start_cell = 0;
  Seconds shift_start = 0.0;
  Seconds shift_end = 0.0;
  Seconds busy_until = 0.0;
  CellId busy_dest = 0;
  bool started = false;
  Seconds idle_log_start = 0.0;
  bool counts_for_reposition = false;
};

OnlineValue initial_value(const Scenario& s, const EngineConfig& cfg, std::uint64_t seed) {
  if (cfg.online_representation == "network") {
    NetworkShape shape;
    shape.embedding.grid_width = s.grid.width;
    shape.embedding.time_tile_s = 0.0;
    shape.uses_time_input = false;
    ValueNetwork net(shape);
    net.randomize(derive_seed(seed, "init"));
    return OnlineValue::network(std::move(net), cfg.online_lr_alpha);
  }
  return OnlineValue::tabular(s.grid.cell_count(), cfg.online_lr_alpha);
}

std::vector<Order> injected_orders(const Scenario& s, const PerturbationSpec& p, const EngineConfig& cfg,
                                   Rng& rng) {
  std::vector<Order> out;
  const Seconds t0 = p.start_round * cfg.dispatch_round_s;
  const int radius = s.synthetic ? s.synthetic->local_radius : 5;
  const Seconds min_trip = s.synthetic ? s.synthetic->min_trip_s : 120.0;
  const auto local = cells_within(p.cell, radius, s.grid);
  OrderId next = kInjectedOrderBase;
  for (Seconds offset = 0.0; offset < p.duration_s; offset += p.pulse_period_s) {
    for (int k = 0; k < p.orders_per_pulse; ++k) {
      const CellId dest = local[rng.below(local.size())];
      out.push_back(make_order(s, min_trip, next++, p.cell, dest, t0 + offset));
    }
  }
  return out;
}

void log_idle(EpisodeOutputs* out, const Scenario& s, const SimDriver& sd, Seconds until, CellId to) {
  if (!out || !out->trajectories || !(until > sd.idle_log_start)) return;
  TrajectoryRecord r;
  r.episode_id = out->episode_id;
  r.driver_id = sd.d.id;
  r.from_cell = sd.d.state.cell;
  r.abs_time = s.episode_start_abs_s + sd.idle_log_start;
  r.kind = OptionKind::idle;
  r.reward = 0.0;
  r.to_cell = to;
  r.duration = until - sd.idle_log_start;
  out->trajectories->push_back(std::move(r));
}

}  // namespace

SimulationMetrics run_episode(const Scenario& scenario, const EpisodeInputs& inputs, const PolicyBundle& policy,
                              const EngineConfig& cfg_in, std::uint64_t seed, const EpisodeResources& resources,
                              EpisodeOutputs* outputs) {
  EngineConfig cfg = cfg_in;
  if (policy.omega) cfg.omega = *policy.omega;
  cfg.validate();
  const auto& grid = scenario.grid;
  const int cells = grid.cell_count();
  const Seconds round_s = cfg.dispatch_round_s;
  const Seconds horizon = scenario.episode_horizon_s;

  if (policy.ensemble && (!resources.offline || !resources.schedule)) {
    throw ConfigError("ensemble enabled but no offline snapshot or changepoint schedule was supplied");
  }
  if (policy.ensemble && !resources.offline->uses_time_input()) {
    throw ConfigError("the offline snapshot must be time-indexed");
  }
  if (policy.reposition == RepositionPolicy::expert && !resources.expert) {
    throw ConfigError("expert repositioning needs an expert matrix");
  }

  OnlineValue value = initial_value(scenario, cfg, seed);
  const OfflineModel offline{resources.offline, scenario.episode_start_abs_s};
  Rng cancel_rng(seed, "cancellation");
  Rng reposition_rng(seed, "reposition");
  Rng perturb_rng(seed, "perturbation");

  std::vector<SimDriver> drivers;
  drivers.reserve(inputs.roster.size());
  for (const auto& e : inputs.roster) {
    grid.check_cell(e.start_cell);
    SimDriver sd;
    sd.d.id = e.id;
    sd.d.managed = e.managed;
    sd.d.status = DriverStatus::offline;
    sd.start_cell = e.start_cell;
    sd.shift_start = e.shift_start;
    sd.shift_end = std::min(e.shift_end, horizon);
    sd.counts_for_reposition = e.managed;
    drivers.push_back(sd);
  }
  std::sort(drivers.begin(), drivers.end(), [](const SimDriver& a, const SimDriver& b) { return a.d.id < b.d.id; });

  std::vector<Order> stream(inputs.orders.begin(), inputs.orders.end());
  const auto& pert = scenario.perturbation;
  if (pert && pert->kind == PerturbationKind::add_orders) {
    auto extra = injected_orders(scenario, *pert, cfg, perturb_rng);
    stream.insert(stream.end(), extra.begin(), extra.end());
    std::stable_sort(stream.begin(), stream.end(),
                     [](const Order& a, const Order& b) { return a.created_at < b.created_at; });
  }

  SimulationMetrics m;
  const long rounds = static_cast<long>(std::floor(horizon / round_s + 1e-9));
  m.rounds = rounds;
  std::size_t next_order = 0;
  std::vector<Order> open;
  std::vector<long> open_since;
  std::vector<DispatchDriver> available;
  std::vector<int> available_idx;
  std::vector<int> kept;  // per available driver: index into outcome.matched or -1
  std::vector<Driver> managed_view;
  std::vector<int> managed_idx;
  EnsembleContext context;
  context.cell_count = cells;
  context.historical_states = resources.historical_states;

  for (long r = 0; r < rounds; ++r) {
    const Seconds t = r * round_s;

    if (pert && pert->kind == PerturbationKind::add_drivers && r == pert->start_round) {
      for (int k = 0; k < pert->drivers; ++k) {
        SimDriver sd;
        sd.d.id = kInjectedDriverBase + k;
        sd.d.status = DriverStatus::offline;
        sd.start_cell = pert->cell;
        sd.shift_start = t;
        sd.shift_end = pert->driver_stay_s > 0.0 ? std::min(horizon, t + pert->driver_stay_s) : horizon;
        drivers.push_back(sd);
      }
    }

    while (next_order < stream.size() && stream[next_order].created_at <= t) {
      const auto& o = stream[next_order++];
      if (o.created_at < 0.0 || o.created_at >= horizon) continue;
      open.push_back(o);
      open_since.push_back(r);
      ++m.created;
    }

    for (auto& sd : drivers) {
      auto& d = sd.d;
      if (!sd.started) {
        if (t < sd.shift_start || sd.shift_start >= sd.shift_end) continue;
        sd.started = true;
        d.status = DriverStatus::idle;
        d.state = SpatioTemporalState{sd.start_cell, t, std::nullopt};
        d.idle_since = t;
        d.online_since = t;
        sd.idle_log_start = t;
      }
      if ((d.status == DriverStatus::on_trip || d.status == DriverStatus::en_route) && sd.busy_until <= t) {
        d.state.cell = sd.busy_dest;
        d.status = DriverStatus::idle;
        d.idle_since = sd.busy_until;
        sd.idle_log_start = sd.busy_until;
      }
      if (d.status == DriverStatus::idle && t >= sd.shift_end) {
        log_idle(outputs, scenario, sd, sd.shift_end, d.state.cell);
        d.status = DriverStatus::offline;
      }
      d.state.clock = t;
    }

    if (policy.ensemble) {
      if (!value.is_tabular()) {
        context.episode_states.clear();
        for (const auto& sd : drivers) {
          if (sd.d.status != DriverStatus::offline) context.episode_states.push_back(sd.d.state);
        }
      }
      maybe_ensemble(t, value, offline, *resources.schedule, cfg, &context);
    }

    available.clear();
    available_idx.clear();
    for (int i = 0; i < static_cast<int>(drivers.size()); ++i) {
      if (drivers[i].d.status == DriverStatus::idle) {
        available.push_back({drivers[i].d.id, drivers[i].d.state});
        available_idx.push_back(i);
      }
    }

    DispatchRoundOutcome outcome;
    kept.assign(available.size(), -1);
    std::vector<char> order_gone(open.size(), 0);
    if (!available.empty() && !open.empty()) {
      const auto problem = build_problem(available, open, value, cfg, grid);
      MatchingSolution solution;
      switch (policy.dispatch) {
        case DispatchPolicy::v1d3: solution = solve_matching(problem); break;
        case DispatchPolicy::baseline: solution = baseline_match(problem); break;
        case DispatchPolicy::greedy: solution = greedy_match(problem); break;
      }
      if (outputs && outputs->assignments) write_assignments(*outputs->assignments, r, problem, solution);
      for (const auto& [a, o] : solution.pairs) {
        auto& sd = drivers[available_idx[a]];
        auto& d = sd.d;
        const Order& order = open[o];
        order_gone[o] = 1;
        ++m.matched;
        const int distance = chebyshev_distance(d.state.cell, order.origin, grid);
        if (step_cancellation(distance, scenario.cancellation, cancel_rng)) {
          ++m.cancelled;
          continue;
        }
        const Seconds dt = order_duration(d.state.cell, order, cfg, grid);
        const Seconds full = travel_time(d.state.cell, order.origin, grid) + order.trip_duration;
        log_idle(outputs, scenario, sd, t, d.state.cell);
        if (outputs && outputs->trajectories) {
          TrajectoryRecord rec;
          rec.episode_id = outputs->episode_id;
          rec.driver_id = d.id;
          rec.from_cell = d.state.cell;
          rec.abs_time = scenario.episode_start_abs_s + t;
          rec.kind = OptionKind::trip;
          rec.reward = order.fee;
          rec.to_cell = order.destination;
          rec.duration = full;
          outputs->trajectories->push_back(std::move(rec));
        }
        MatchedTransition mt;
        mt.driver = d.id;
        mt.order = order.id;
        mt.s_driver = d.state;
        mt.s_order = SpatioTemporalState{order.destination, t + dt, std::nullopt};
        mt.reward = order.fee;
        mt.dt = dt;
        kept[a] = static_cast<int>(outcome.matched.size());
        outcome.matched.push_back(mt);

        d.status = DriverStatus::on_trip;
        d.income_accum += order.fee;
        sd.busy_until = t + full;
        sd.busy_dest = order.destination;
        ++m.completed;
        m.dispatch_score += order.fee;
      }
    }

    // Drop matched orders and expire the ones out of patience.
    std::size_t w = 0;
    for (std::size_t i = 0; i < open.size(); ++i) {
      if (order_gone[i]) continue;
      if (r - open_since[i] + 1 >= cfg.order_patience_rounds) {
        ++m.expired;
        continue;
      }
      open[w] = open[i];
      open_since[w] = open_since[i];
      ++w;
    }
    open.resize(w);
    open_since.resize(w);

    if (policy.reposition != RepositionPolicy::none && r % cfg.reposition_threshold_C == 0) {
      managed_view.clear();
      managed_idx.clear();
      for (int i : available_idx) {
        if (drivers[i].d.managed && drivers[i].d.status == DriverStatus::idle) {
          managed_view.push_back(drivers[i].d);
          managed_idx.push_back(i);
        }
      }
      std::vector<RepositionMove> moves;
      switch (policy.reposition) {
        case RepositionPolicy::v1d3:
          moves = sample_reposition(managed_view, t, value, cfg, grid, reposition_rng);
          break;
        case RepositionPolicy::v1d3g:
          moves = greedy_reposition(managed_view, t, value, cfg, grid, reposition_rng);
          break;
        case RepositionPolicy::expert:
          moves = expert_reposition(managed_view, t, scenario.episode_start_abs_s, *resources.expert, cfg, grid,
                                    reposition_rng, outputs ? outputs->log : nullptr);
          break;
        case RepositionPolicy::none: break;
      }
      if (outputs && outputs->repositions) write_repositions(*outputs->repositions, r, moves, to_string(policy.reposition));
      for (const auto& mv : moves) {
        if (mv.to == mv.from) continue;
        const auto it = std::lower_bound(managed_view.begin(), managed_view.end(), mv.driver,
                                         [](const Driver& d, DriverId id) { return d.id < id; });
        auto& sd = drivers[managed_idx[it - managed_view.begin()]];
        log_idle(outputs, scenario, sd, t, sd.d.state.cell);
        const Seconds travel = travel_time(mv.from, mv.to, grid);
        sd.idle_log_start = t;
        log_idle(outputs, scenario, sd, t + travel, mv.to);
        sd.d.status = DriverStatus::en_route;
        sd.busy_until = t + travel;
        sd.busy_dest = mv.to;
      }
    }

    for (std::size_t a = 0; a < available.size(); ++a) {
      if (kept[a] >= 0) continue;
      IdleTransition it;
      it.driver = available[a].id;
      it.s_driver = available[a].state;
      it.s_idle = SpatioTemporalState{available[a].state.cell, t + round_s, std::nullopt};
      it.dt = round_s;
      outcome.idle.push_back(it);
    }

    if (policy.learner) online_update(outcome, value, cfg);

    if (outputs) {
      if (outputs->on_round) outputs->on_round(r, value);
      if (outputs->trace && outputs->trace_every > 0 && r % outputs->trace_every == 0) {
        for (CellId c = 0; c < cells; ++c) {
          csv::write_row(*outputs->trace, {std::to_string(r), std::to_string(c),
                                           csv::format_double(value.value(SpatioTemporalState{c, t, std::nullopt}))});
        }
      }
    }
  }

  for (auto& sd : drivers) {
    if (sd.d.status == DriverStatus::idle) log_idle(outputs, scenario, sd, std::min(horizon, sd.shift_end), sd.d.state.cell);
  }
  m.open_at_horizon = static_cast<long>(open.size());
  m.answer_rate = m.created > 0 ? static_cast<double>(m.matched) / m.created : 1.0;
  m.completion_rate = m.created > 0 ? static_cast<double>(m.completed) / m.created : 1.0;

  double score_sum = 0.0;
  long managed = 0;
  for (const auto& sd : drivers) {
    m.total_income += sd.d.income_accum;
    if (!sd.counts_for_reposition) continue;
    const Seconds online = sd.shift_end - sd.shift_start;
    if (online <= 0.0) continue;
    score_sum += sd.d.income_accum / online;
    ++managed;
  }
  m.reposition_score = managed > 0 ? score_sum / managed : 0.0;
  return m;
}

void write_metrics_header(std::ostream& out) {
  csv::write_row(out, {"scenario", "policy", "dispatch", "reposition", "learner", "ensemble", "seed",
                       "dispatch_score", "answer_rate", "completion_rate", "reposition_score", "created", "matched",
                       "completed", "cancelled", "expired", "open_at_horizon"});
}

void write_metrics_row(std::ostream& out, const std::string& scenario, const PolicyBundle& policy,
                       std::uint64_t seed, const SimulationMetrics& m) {
  csv::write_row(out, {scenario, policy.label, to_string(policy.dispatch), to_string(policy.reposition),
                       policy.learner ? "1" : "0", policy.ensemble ? "1" : "0", std::to_string(seed),
                       csv::format_double(m.dispatch_score), csv::format_double(m.answer_rate),
                       csv::format_double(m.completion_rate), csv::format_double(m.reposition_score),
                       std::to_string(m.created), std::to_string(m.matched), std::to_string(m.completed),
                       std::to_string(m.cancelled), std::to_string(m.expired), std::to_string(m.open_at_horizon)});
}

// ---------------------------------------------------------------- history

HistoryData simulate_history(const Scenario& scenario, const EngineConfig& cfg, std::uint64_t seed, int days) {
  if (days < 0) throw InputError("history days must be >= 0");
  HistoryData h;
  PolicyBundle logging{DispatchPolicy::baseline, RepositionPolicy::none, false, false, std::nullopt, "history"};
  Scenario plain = scenario;
  plain.perturbation.reset();
  for (int day = 0; day < days; ++day) {
    const auto day_seed = derive_seed(seed, "history-" + std::to_string(day));
    const auto inputs = generate_synthetic(plain, day_seed);
    EpisodeOutputs out;
    out.trajectories = &h.trajectories;
    out.episode_id = "day-" + std::to_string(day);
    run_episode(plain, inputs, logging, cfg, day_seed, {}, &out);
    const auto id_offset = static_cast<OrderId>(h.orders.size());
    for (auto o : inputs.orders) {
      o.id += id_offset;
      o.created_at += day * kSecondsPerDay;
      h.orders.push_back(o);
    }

    // Demand-following random walk: every five minutes each walker moves within
    // radius 2 with probability proportional to that hour's order count + 1.
    const int hours = static_cast<int>(std::ceil(plain.episode_horizon_s / 3600.0));
    std::vector<std::vector<double>> count(hours, std::vector<double>(plain.grid.cell_count(), 0.0));
    for (const auto& o : inputs.orders) {
      const int hr = std::min(hours - 1, static_cast<int>(o.created_at / 3600.0));
      count[hr][o.origin] += 1.0;
    }
    Rng walk(day_seed, "bootstrap-walk");
    const int walkers = std::max(1, plain.fleet_size / 5);
    std::vector<CellId> at(walkers);
    for (auto& c : at) c = static_cast<CellId>(walk.below(plain.grid.cell_count()));
    std::vector<double> weights;
    for (Seconds t = 0.0; t < plain.episode_horizon_s; t += 300.0) {
      const int hr = std::min(hours - 1, static_cast<int>(t / 3600.0));
      for (auto& c : at) {
        const auto near = cells_within(c, 2, plain.grid);
        weights.resize(near.size());
        for (std::size_t k = 0; k < near.size(); ++k) weights[k] = count[hr][near[k]] + 1.0;
        const CellId to = near[walk.categorical(weights)];
        h.moves.push_back({plain.episode_start_abs_s + t, c, to});
        c = to;
      }
    }
  }
  return h;
}

std::vector<double> history_order_series(std::span<const Order> history_orders, Seconds bin_s, Seconds horizon) {
  if (!(bin_s > 0.0)) throw InputError("bin length must be positive");
  const int n_bins = static_cast<int>(std::ceil(horizon / bin_s - 1e-9));
  std::vector<double> series(n_bins, 0.0);
  std::set<long> days;
  for (const auto& o : history_orders) {
    const long day = static_cast<long>(std::floor(o.created_at / kSecondsPerDay));
    days.insert(day);
    const Seconds t = o.created_at - day * kSecondsPerDay;
    const auto b = static_cast<long>(std::floor(t / bin_s));
    if (b >= 0 && b < n_bins) series[b] += 1.0;
  }
  if (!days.empty()) {
    for (double& x : series) x /= static_cast<double>(days.size());
  }
  return series;
}

std::vector<SpatioTemporalState> sample_historical_states(std::span<const TrajectoryRecord> records, int count,
                                                          std::uint64_t seed) {
  std::vector<SpatioTemporalState> out;
  if (records.empty() || count <= 0) return out;
  Rng rng(seed, "distill-subsample");
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const auto& r = records[rng.below(records.size())];
    out.push_back(SpatioTemporalState{r.from_cell, 0.0, std::fmod(r.abs_time, kSecondsPerDay)});
  }
  return out;
}

// ---------------------------------------------------------------- experiments

PerturbationTraces run_perturbation_experiment(const Scenario& scenario, const EpisodeInputs& inputs,
                                               const PerturbationSpec& spec, const PolicyBundle& policy,
                                               const EngineConfig& cfg, std::uint64_t seed,
                                               const EpisodeResources& resources) {
  if (!policy.learner) throw ConfigError("perturbation experiments need the online learner");
  spec.validate(scenario.grid);
  std::array<std::vector<CellId>, 3> rings;
  for (int k = 0; k < 3; ++k) rings[k] = ring_cells(spec.cell, k, scenario.grid);

  auto record = [&](std::vector<std::array<double, 3>>& sink) {
    return [&sink, &rings](long, const OnlineValue& v) {
      std::array<double, 3> means{};
      for (int k = 0; k < 3; ++k) {
        double sum = 0.0;
        for (CellId c : rings[k]) sum += v.value(SpatioTemporalState{c, 0.0, std::nullopt});
        means[k] = rings[k].empty() ? 0.0 : sum / rings[k].size();
      }
      sink.push_back(means);
    };
  };

  Scenario control = scenario;
  control.perturbation.reset();
  Scenario perturbed = scenario;
  perturbed.perturbation = spec;

  std::vector<std::array<double, 3>> base, pert;
  EpisodeOutputs out_base, out_pert;
  out_base.on_round = record(base);
  out_pert.on_round = record(pert);
  run_episode(control, inputs, policy, cfg, seed, resources, &out_base);
  run_episode(perturbed, inputs, policy, cfg, seed, resources, &out_pert);

  PerturbationTraces traces;
  traces.injection_round = spec.start_round;
  traces.rounds_per_step = std::max<long>(1, std::lround(120.0 / cfg.dispatch_round_s));
  traces.delta.resize(base.size());
  for (std::size_t r = 0; r < base.size(); ++r) {
    for (int k = 0; k < 3; ++k) traces.delta[r][k] = pert[r][k] - base[r][k];
  }
  for (std::size_t start = 0; start < traces.delta.size(); start += traces.rounds_per_step) {
    const std::size_t end = std::min(traces.delta.size(), start + traces.rounds_per_step);
    std::array<double, 3> mean{};
    for (std::size_t r = start; r < end; ++r) {
      for (int k = 0; k < 3; ++k) mean[k] += traces.delta[r][k];
    }
    for (int k = 0; k < 3; ++k) mean[k] /= static_cast<double>(end - start);
    traces.delta_2min.push_back(mean);
  }
  return traces;
}

void write_perturbation_csv(const std::filesystem::path& path, const PerturbationTraces& traces, Seconds round_s) {
  auto out = csv::open_output(path);
  csv::write_row(out, {"step", "minutes", "radius0", "radius1", "radius2"});
  for (std::size_t i = 0; i < traces.delta_2min.size(); ++i) {
    const auto& d = traces.delta_2min[i];
    const double minutes = i * traces.rounds_per_step * round_s / 60.0;
    csv::write_row(out, {std::to_string(i), csv::format_double(minutes), csv::format_double(d[0]),
                         csv::format_double(d[1]), csv::format_double(d[2])});
  }
}

std::vector<PolicyBundle> ablation_dispatch_variants() {
  return {
      {DispatchPolicy::v1d3, RepositionPolicy::none, true, true, std::nullopt, "v1d3"},
      {DispatchPolicy::v1d3, RepositionPolicy::none, true, false, std::nullopt, "online-only"},
      {DispatchPolicy::v1d3, RepositionPolicy::none, false, true, 0.0, "offline-only"},
      {DispatchPolicy::baseline, RepositionPolicy::none, true, true, std::nullopt, "baseline"},
      {DispatchPolicy::greedy, RepositionPolicy::none, true, true, std::nullopt, "greedy"},
  };
}

std::vector<RepositionPolicy> ablation_reposition_policies() {
  return {RepositionPolicy::v1d3, RepositionPolicy::v1d3g, RepositionPolicy::expert, RepositionPolicy::none};
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stdev = std::sqrt(ss / (values.size() - 1));
  }
  return s;
}

std::vector<AblationRow> run_ablation_suite(const Scenario& scenario,
                                            const std::function<EpisodeInputs(std::uint64_t)>& inputs_for_seed,
                                            const EngineConfig& cfg, std::span<const std::uint64_t> seeds,
                                            const EpisodeResources& resources) {
  if (seeds.size() < 3) throw ConfigError("the comparison table needs at least 3 seeds");
  std::vector<AblationRow> rows;
  for (const auto& variant : ablation_dispatch_variants()) {
    for (auto repo : ablation_reposition_policies()) {
      AblationRow row;
      row.dispatch_variant = variant.label;
      row.reposition = repo;
      rows.push_back(row);
    }
  }
  for (auto seed : seeds) {
    const auto inputs = inputs_for_seed(seed);
    std::size_t i = 0;
    for (auto variant : ablation_dispatch_variants()) {
      for (auto repo : ablation_reposition_policies()) {
        variant.reposition = repo;
        rows[i++].runs.push_back(run_episode(scenario, inputs, variant, cfg, seed, resources));
      }
    }
  }
  for (auto& row : rows) {
    std::vector<double> ds, ar, cr, rs;
    for (const auto& m : row.runs) {
      ds.push_back(m.dispatch_score);
      ar.push_back(m.answer_rate);
      cr.push_back(m.completion_rate);
      rs.push_back(m.reposition_score);
    }
    row.dispatch_score = summarize(ds);
    row.answer_rate = summarize(ar);
    row.completion_rate = summarize(cr);
    row.reposition_score = summarize(rs);
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  auto out = csv::open_output(path);
  csv::write_row(out, {"dispatch", "reposition", "runs", "dispatch_score_mean", "dispatch_score_sd", "answer_rate_mean",
                       "answer_rate_sd", "completion_rate_mean", "completion_rate_sd", "reposition_score_mean",
                       "reposition_score_sd"});
  for (const auto& r : rows) {
    csv::write_row(out, {r.dispatch_variant, to_string(r.reposition), std::to_string(r.runs.size()),
                         csv::format_double(r.dispatch_score.mean), csv::format_double(r.dispatch_score.stdev),
                         csv::format_double(r.answer_rate.mean), csv::format_double(r.answer_rate.stdev),
                         csv::format_double(r.completion_rate.mean), csv::format_double(r.completion_rate.stdev),
                         csv::format_double(r.reposition_score.mean), csv::format_double(r.reposition_score.stdev)});
  }
}

}  // namespace v1d3
