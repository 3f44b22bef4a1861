#include "v1d3/online_engine.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "v1d3/csv.hpp"
#include "v1d3/offline_ope.hpp"

namespace v1d3 {

void DispatchRoundOutcome::validate(std::span<const DriverId> available) const {
  std::set<DriverId> seen;
  for (const auto& m : matched) {
    if (!(m.dt > 0.0)) throw InputError("matched transition with non-positive duration");
    if (!seen.insert(m.driver).second) throw InputError("driver listed twice in round outcome");
  }
  for (const auto& i : idle) {
    if (!(i.dt > 0.0)) throw InputError("idle transition with non-positive duration");
    if (!seen.insert(i.driver).second) throw InputError("driver listed twice in round outcome");
  }
  if (!available.empty()) {
    const std::set<DriverId> expected(available.begin(), available.end());
    if (expected != seen) throw InputError("round outcome does not cover the available drivers");
  }
}

// ---------------------------------------------------------------- online value

OnlineValue OnlineValue::tabular(int cell_count, double alpha) {
  OnlineValue v;
  v.repr_ = TabularValue(cell_count);
  v.alpha_ = alpha;
  return v;
}

OnlineValue OnlineValue::network(ValueNetwork net, double alpha) {
  if (net.uses_time_input()) throw ConfigError("the online network must be time-free");
  OnlineValue v;
  v.target_ = TargetShadow(net, 1);
  v.repr_ = std::move(net);
  v.alpha_ = alpha;
  return v;
}

double OnlineValue::value(const SpatioTemporalState& s) const {
  if (auto* t = std::get_if<TabularValue>(&repr_)) return t->value(s);
  return std::get<ValueNetwork>(repr_).value(s);
}

double OnlineValue::target_value(const SpatioTemporalState& s) const {
  if (auto* t = std::get_if<TabularValue>(&repr_)) return t->value(s);
  return target_.value(s);
}

void OnlineValue::after_update() {
  if (auto* n = std::get_if<ValueNetwork>(&repr_)) target_.step(*n);
}

void OnlineValue::sync_target() {
  if (auto* n = std::get_if<ValueNetwork>(&repr_)) target_.sync(*n);
}

std::vector<double> OnlineValue::values_by_cell(int cell_count) const {
  std::vector<double> out(cell_count);
  for (CellId c = 0; c < cell_count; ++c) out[c] = value(SpatioTemporalState{c, 0.0, std::nullopt});
  return out;
}

// ---------------------------------------------------------------- TD update

double TdErrors::sum_squares() const {
  double s = 0.0;
  for (double d : matched) s += d * d;
  for (double d : idle) s += d * d;
  return s;
}

TdErrors td_errors(const DispatchRoundOutcome& outcome, const OnlineValue& v, const EngineConfig& cfg) {
  TdErrors out;
  out.matched.reserve(outcome.matched.size());
  out.idle.reserve(outcome.idle.size());
  for (const auto& m : outcome.matched) {
    out.matched.push_back(m.reward + discount_factor(m.dt, cfg) * v.target_value(m.s_order) - v.value(m.s_driver));
  }
  for (const auto& i : outcome.idle) {
    out.idle.push_back(discount_factor(i.dt, cfg) * v.target_value(i.s_idle) - v.value(i.s_driver));
  }
  return out;
}

double online_loss_and_gradient(const DispatchRoundOutcome& outcome, const OnlineValue& v,
                                const EngineConfig& cfg, NetworkGradient& grad) {
  if (v.is_tabular()) throw InputError("online_loss_and_gradient needs network mode");
  const auto& net = v.net();
  grad.reset(net.dense().size());
  const auto deltas = td_errors(outcome, v, cfg);
  NetworkWorkspace ws;
  for (std::size_t i = 0; i < outcome.matched.size(); ++i) {
    net.accumulate_gradient(outcome.matched[i].s_driver, -2.0 * deltas.matched[i], grad, ws);
  }
  for (std::size_t i = 0; i < outcome.idle.size(); ++i) {
    net.accumulate_gradient(outcome.idle[i].s_driver, -2.0 * deltas.idle[i], grad, ws);
  }
  return deltas.sum_squares();
}

double online_update(const DispatchRoundOutcome& outcome, OnlineValue& v, const EngineConfig& cfg) {
  if (outcome.empty()) return 0.0;
  if (v.is_tabular()) {
    const auto deltas = td_errors(outcome, v, cfg);
    auto& table = v.table();
    std::map<std::size_t, double> step;
    for (std::size_t i = 0; i < outcome.matched.size(); ++i) {
      step[table.key_of(outcome.matched[i].s_driver)] += deltas.matched[i];
    }
    for (std::size_t i = 0; i < outcome.idle.size(); ++i) {
      step[table.key_of(outcome.idle[i].s_driver)] += deltas.idle[i];
    }
    const auto values = table.values();
    for (const auto& [key, sum] : step) table.set_key(key, values[key] + 2.0 * v.alpha() * sum);
    return deltas.sum_squares();
  }

  NetworkGradient grad;
  const double loss = online_loss_and_gradient(outcome, v, cfg, grad);
  auto& net = v.net();
  auto dense = net.dense();
  for (std::size_t i = 0; i < dense.size(); ++i) dense[i] -= v.alpha() * grad.dense[i];
  for (const auto& [r, g] : grad.memory_rows) {
    auto row = net.memory_row_mut(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] -= v.alpha() * g[j];
  }
  v.after_update();
  return loss;
}

// ---------------------------------------------------------------- changepoints

double segment_cost(std::span<const double> series, std::size_t begin, std::size_t end) {
  if (begin >= end) return 0.0;
  double mean = 0.0;
  for (std::size_t i = begin; i < end; ++i) mean += series[i];
  mean /= static_cast<double>(end - begin);
  double cost = 0.0;
  for (std::size_t i = begin; i < end; ++i) cost += (series[i] - mean) * (series[i] - mean);
  return cost;
}

double segmentation_cost(std::span<const double> series, std::span<const int> breakpoints) {
  double total = 0.0;
  std::size_t begin = 0;
  for (int b : breakpoints) {
    total += segment_cost(series, begin, static_cast<std::size_t>(b));
    begin = static_cast<std::size_t>(b);
  }
  return total + segment_cost(series, begin, series.size());
}

Segmentation segment_series(std::span<const double> series, int K) {
  const int n = static_cast<int>(series.size());
  if (K < 0 || K >= n) throw InputError("changepoint count must be below the series length");
  for (double x : series) {
    if (!std::isfinite(x)) throw InputError("order series must be finite");
  }

  // cost[i][j] for the segment [i, j).
  std::vector<std::vector<double>> cost(n + 1, std::vector<double>(n + 1, 0.0));
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j <= n; ++j) cost[i][j] = segment_cost(series, i, j);
  }

  // suffix[k][i]: best cost of splitting [i, n) into k + 1 segments.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> suffix(K + 1, std::vector<double>(n + 1, inf));
  for (int i = 0; i < n; ++i) suffix[0][i] = cost[i][n];
  for (int k = 1; k <= K; ++k) {
    for (int i = 0; i + k < n; ++i) {
      double best = inf;
      for (int j = i + 1; j + k <= n; ++j) best = std::min(best, cost[i][j] + suffix[k - 1][j]);
      suffix[k][i] = best;
    }
  }

  auto same = [](double a, double b) { return std::abs(a - b) <= 1e-12 * (1.0 + std::abs(a) + std::abs(b)); };
  Segmentation out;
  int i = 0;
  for (int k = K; k >= 1; --k) {
    for (int j = i + 1; j + k <= n; ++j) {
      if (same(cost[i][j] + suffix[k - 1][j], suffix[k][i])) {
        out.breakpoints.push_back(j);
        i = j;
        break;
      }
    }
  }
  out.cost = segmentation_cost(series, out.breakpoints);
  return out;
}

bool ChangepointSchedule::fires_in(Seconds t, Seconds window) const {
  const auto it = std::lower_bound(points.begin(), points.end(), t);
  return it != points.end() && *it < t + window;
}

std::vector<double> bin_order_counts(std::span<const Seconds> created_at, Seconds bin_s, int n_bins) {
  if (!(bin_s > 0.0)) throw InputError("bin length must be positive");
  std::vector<double> counts(std::max(0, n_bins), 0.0);
  for (Seconds t : created_at) {
    if (t < 0.0) continue;
    const auto b = static_cast<long long>(std::floor(t / bin_s));
    if (b < n_bins) counts[b] += 1.0;
  }
  return counts;
}

namespace {

ChangepointSchedule schedule_of(std::span<const int> breakpoints, Seconds bin_s, bool include_start) {
  ChangepointSchedule s;
  s.K = static_cast<int>(breakpoints.size());
  if (include_start) s.points.push_back(0.0);
  for (int b : breakpoints) s.points.push_back(b * bin_s);
  return s;
}

}  // namespace

ChangepointSchedule segment_orders(std::span<const double> series, int K, Seconds bin_s, bool include_start) {
  if (!(bin_s > 0.0)) throw InputError("bin length must be positive");
  return schedule_of(segment_series(series, K).breakpoints, bin_s, include_start);
}

void write_schedule_csv(const std::filesystem::path& path, const ScheduleTable& table) {
  auto out = csv::open_output(path);
  csv::write_row(out, {"bin_start_s", "order_count", "is_changepoint"});
  const std::set<int> marks(table.breakpoints.begin(), table.breakpoints.end());
  for (std::size_t i = 0; i < table.counts.size(); ++i) {
    csv::write_row(out, {csv::format_double(i * table.bin_s), csv::format_double(table.counts[i]),
                         marks.count(static_cast<int>(i)) ? "1" : "0"});
  }
}

ScheduleTable read_schedule_csv(const std::filesystem::path& path) {
  csv::Reader reader(path);
  reader.expect_header({"bin_start_s", "order_count", "is_changepoint"});
  ScheduleTable table;
  std::vector<Seconds> starts;
  std::vector<std::string> f;
  while (reader.next(f)) {
    const auto line = reader.line_number();
    if (f.size() != 3) throw InputError(path.string() + ": line " + std::to_string(line) + ": expected 3 fields");
    starts.push_back(csv::parse_double(f[0], line));
    table.counts.push_back(csv::parse_double(f[1], line));
    const auto flag = csv::parse_int(f[2], line);
    if (flag != 0 && flag != 1) throw InputError(path.string() + ": line " + std::to_string(line) + ": flag must be 0 or 1");
    if (flag == 1) {
      if (starts.size() == 1) throw InputError(path.string() + ": the first bin cannot be a changepoint");
      table.breakpoints.push_back(static_cast<int>(starts.size() - 1));
    }
  }
  if (starts.size() >= 2) table.bin_s = starts[1] - starts[0];
  for (std::size_t i = 0; i < starts.size(); ++i) {
    if (std::abs(starts[i] - i * table.bin_s) > 1e-6) throw InputError(path.string() + ": bins are not evenly spaced");
  }
  if (!(table.bin_s > 0.0)) throw InputError(path.string() + ": bin length must be positive");
  return table;
}

ChangepointSchedule schedule_from_table(const ScheduleTable& table, bool include_start) {
  return schedule_of(table.breakpoints, table.bin_s, include_start);
}

// ---------------------------------------------------------------- ensemble

std::vector<double> OfflineModel::slice_at(Seconds t, int cell_count) const {
  if (net == nullptr) throw ConfigError("no offline value snapshot loaded");
  return slice(*net, episode_start_abs + t, cell_count).by_cell;
}

bool maybe_ensemble(Seconds t, OnlineValue& v, const OfflineModel& offline, const ChangepointSchedule& schedule,
                    const EngineConfig& cfg, const EnsembleContext* context) {
  if (!schedule.fires_in(t, cfg.dispatch_round_s)) return false;

  if (v.is_tabular()) {
    const auto offline_by_cell = offline.slice_at(t, v.table().cell_count());
    v.table() = ensemble_tabular(v.table(), offline_by_cell, cfg.omega);
    return true;
  }

  if (cfg.omega == 1.0) return true;
  auto& net = v.net();
  if (context == nullptr || context->cell_count <= 0) throw ConfigError("network ensemble needs a state context");
  const int cells = context->cell_count;
  const auto offline_by_cell = offline.slice_at(t, cells);

  std::vector<DistillTarget> targets;
  std::set<CellId> covered;
  auto add = [&](const SpatioTemporalState& s) {
    if (s.cell < 0 || s.cell >= cells) return;
    // The online net ignores time, so one target per cell suffices.
    if (!covered.insert(s.cell).second) return;
    const SpatioTemporalState key{s.cell, 0.0, std::nullopt};
    targets.push_back({key, cfg.omega * net.value(key) + (1.0 - cfg.omega) * offline_by_cell[s.cell]});
  };
  for (const auto& s : context->episode_states) add(s);
  for (const auto& s : context->historical_states) add(s);
  if (targets.empty()) {
    for (CellId c = 0; c < cells; ++c) add(SpatioTemporalState{c, 0.0, std::nullopt});
  }
  distill(net, targets, cfg.distill_steps, cfg.distill_lr);
  v.sync_target();
  return true;
}

}  // namespace v1d3
