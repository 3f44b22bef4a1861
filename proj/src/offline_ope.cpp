#include "v1d3/offline_ope.hpp"

#include <cmath>
#include <map>

#include "v1d3/csv.hpp"
#include "v1d3/rng.hpp"

namespace v1d3 {
namespace {

const std::vector<std::string> kTrajectoryHeader = {"episode_id", "driver_id", "from_cell", "abs_time_s",
                                                    "kind",       "reward",    "to_cell",   "duration_s"};

}  // namespace

// ---------------------------------------------------------------- trajectory IO

std::vector<TrajectoryRecord> read_trajectory_log(const std::filesystem::path& path) {
  csv::Reader reader(path);
  reader.expect_header(kTrajectoryHeader);
  std::vector<TrajectoryRecord> out;
  std::vector<std::string> f;
  while (reader.next(f)) {
    const auto line = reader.line_number();
    const auto where = path.string() + ": line " + std::to_string(line) + ": ";
    if (f.size() != kTrajectoryHeader.size()) throw InputError(where + "expected 8 fields");
    TrajectoryRecord r;
    try {
      r.episode_id = f[0];
      r.driver_id = csv::parse_int(f[1], line);
      r.from_cell = static_cast<CellId>(csv::parse_int(f[2], line));
      r.abs_time = csv::parse_double(f[3], line);
      r.kind = option_kind_from_string(f[4]);
      r.reward = csv::parse_double(f[5], line);
      r.to_cell = static_cast<CellId>(csv::parse_int(f[6], line));
      r.duration = csv::parse_double(f[7], line);
    } catch (const InputError& e) {
      throw InputError(where + e.what());
    }
    if (r.episode_id.empty()) throw InputError(where + "empty episode_id");
    if (r.from_cell < 0 || r.to_cell < 0) throw InputError(where + "negative cell id");
    if (!(r.duration > 0.0)) throw InputError(where + "duration must be positive");
    if (r.kind == OptionKind::idle && r.reward != 0.0) throw InputError(where + "idle option with reward");
    if (!std::isfinite(r.reward) || !std::isfinite(r.abs_time)) throw InputError(where + "non-finite value");
    out.push_back(std::move(r));
  }
  return out;
}

void write_trajectory_header(std::ostream& out) { csv::write_row(out, kTrajectoryHeader); }

void write_trajectory_record(std::ostream& out, const TrajectoryRecord& r) {
  csv::write_row(out, {r.episode_id, std::to_string(r.driver_id), std::to_string(r.from_cell),
                       csv::format_double(r.abs_time), to_string(r.kind), csv::format_double(r.reward),
                       std::to_string(r.to_cell), csv::format_double(r.duration)});
}

void write_trajectory_log(const std::filesystem::path& path, std::span<const TrajectoryRecord> records) {
  auto out = csv::open_output(path);
  write_trajectory_header(out);
  for (const auto& r : records) write_trajectory_record(out, r);
}

std::vector<EpisodeLog> group_episodes(std::span<const TrajectoryRecord> records) {
  std::vector<EpisodeLog> out;
  std::map<std::pair<std::string, DriverId>, std::size_t> index;
  for (const auto& r : records) {
    auto [it, inserted] = index.try_emplace({r.episode_id, r.driver_id}, out.size());
    if (inserted) out.push_back(EpisodeLog{r.episode_id, r.driver_id, {}});
    out[it->second].options.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------- extraction

int discount_units(Seconds duration, const EngineConfig& cfg) {
  const double units = std::ceil(duration / cfg.discount_time_unit_s - 1e-12);
  return std::max(1, static_cast<int>(units));
}

TrajectoryDataset extract_transitions(std::span<const EpisodeLog> episodes, const EngineConfig& cfg,
                                      std::optional<Seconds> day_end_abs) {
  TrajectoryDataset data;
  std::map<std::string, bool> seen_episode;
  for (const auto& ep : episodes) {
    bool monotone = true;
    for (std::size_t i = 1; i < ep.options.size(); ++i) {
      if (ep.options[i].abs_time < ep.options[i - 1].abs_time) {
        data.rejected.push_back("episode " + ep.episode_id + " driver " + std::to_string(ep.driver_id) +
                                ": timestamp decreases at option " + std::to_string(i));
        monotone = false;
        break;
      }
    }
    if (!monotone) continue;
    if (!ep.options.empty() && seen_episode.try_emplace(ep.episode_id, true).second) {
      data.source_episodes.push_back(ep.episode_id);
    }
    for (const auto& opt : ep.options) {
      OpeTransition t;
      t.from = SpatioTemporalState{opt.from_cell, opt.abs_time, std::fmod(opt.abs_time, kSecondsPerDay)};
      const Seconds end = opt.abs_time + opt.duration;
      t.to = SpatioTemporalState{opt.to_cell, end, std::fmod(end, kSecondsPerDay)};
      t.reward = opt.reward;
      t.k = discount_units(opt.duration, cfg);
      t.terminal = day_end_abs.has_value() && end >= *day_end_abs;
      data.transitions.push_back(t);
    }
  }
  return data;
}

double smdp_reward(double reward, int k, double gamma) {
  if (k < 1) throw InputError("smdp_reward needs k >= 1");
  if (gamma == 1.0) return reward;
  return reward * (std::pow(gamma, k) - 1.0) / (k * (gamma - 1.0));
}

// ---------------------------------------------------------------- training

OpeSettings OpeSettings::from_config(const EngineConfig& cfg) {
  OpeSettings s;
  s.lr = cfg.ope_lr;
  s.lambda = cfg.lipschitz_lambda;
  s.batch_size = cfg.ope_batch_size;
  s.max_iters = cfg.ope_iters;
  s.target_sync = cfg.ope_target_sync;
  s.gamma = cfg.gamma;
  s.seed = cfg.seed;
  return s;
}

NetworkShape default_ope_shape(const GridMap& grid) {
  NetworkShape shape;
  shape.embedding.grid_width = grid.width;
  shape.uses_time_input = true;
  return shape;
}

OpeTrainer::OpeTrainer(ValueNetwork net, OpeSettings settings)
    : net_(std::move(net)), target_(net_, settings.target_sync), settings_(settings) {
  if (!net_.uses_time_input()) throw ConfigError("offline value network must take a time input");
  m_dense_.assign(net_.dense().size(), 0.0);
  v_dense_.assign(net_.dense().size(), 0.0);
  m_mem_.assign(net_.memory_param_count(), 0.0);
  v_mem_.assign(net_.memory_param_count(), 0.0);
}

double OpeTrainer::loss_and_gradient(std::span<const OpeTransition> batch, NetworkGradient& grad) const {
  grad.reset(net_.dense().size());
  double loss = 0.0;
  for (const auto& t : batch) {
    const double next = t.terminal ? 0.0 : target_.value(t.to);
    const double target = smdp_reward(t.reward, t.k, settings_.gamma) + std::pow(settings_.gamma, t.k) * next;
    const double v = net_.forward(t.from, ws_);
    const double delta = target - v;
    loss += delta * delta;
    net_.accumulate_gradient(t.from, -2.0 * delta, grad, ws_);
  }
  if (settings_.lambda > 0.0) {
    loss += settings_.lambda * lipschitz_penalty(net_);
    accumulate_lipschitz_subgradient(net_, settings_.lambda, grad);
  }
  return loss;
}

double OpeTrainer::step(std::span<const OpeTransition> batch) {
  if (batch.empty()) throw InputError("ope_step needs a non-empty batch");
  NetworkGradient grad;
  const double loss = loss_and_gradient(batch, grad);
  if (!std::isfinite(loss)) {
    throw DivergenceError("offline evaluation diverged at step " + std::to_string(iterations_) +
                          " (loss " + csv::format_double(loss) + ")");
  }
  ++iterations_;
  const double b1 = settings_.beta1, b2 = settings_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(iterations_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(iterations_));
  auto adam = [&](double& param, double g, double& m, double& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    param -= settings_.lr * (m / c1) / (std::sqrt(v / c2) + settings_.epsilon);
  };
  auto dense = net_.dense();
  for (std::size_t i = 0; i < dense.size(); ++i) adam(dense[i], grad.dense[i], m_dense_[i], v_dense_[i]);
  const int m = net_.shape().embedding.embed_dim;
  for (const auto& [r, g] : grad.memory_rows) {
    auto row = net_.memory_row_mut(r);
    const std::size_t base = static_cast<std::size_t>(r) * m;
    for (int j = 0; j < m; ++j) adam(row[j], g[j], m_mem_[base + j], v_mem_[base + j]);
  }
  target_.step(net_);
  return loss;
}

const ValueNetwork& train_ope(const TrajectoryDataset& dataset, OpeTrainer& trainer,
                              std::vector<double>* loss_curve) {
  const auto& s = trainer.settings();
  if (s.max_iters == 0) return trainer.net();
  if (dataset.transitions.empty()) throw InputError("offline evaluation needs a non-empty dataset");
  Rng rng(s.seed, "ope-batch");
  std::vector<OpeTransition> batch(static_cast<std::size_t>(s.batch_size));
  for (int it = 0; it < s.max_iters; ++it) {
    for (auto& slot : batch) slot = dataset.transitions[rng.below(dataset.transitions.size())];
    const double loss = trainer.step(batch);
    if (loss_curve) loss_curve->push_back(loss);
  }
  return trainer.net();
}

OfflineSlice slice(const ValueNetwork& net, Seconds abs_time, int cell_count) {
  if (!net.uses_time_input()) throw InputError("slicing needs a time-indexed network");
  OfflineSlice out;
  out.abs_time = std::fmod(abs_time, kSecondsPerDay);
  out.by_cell.resize(cell_count);
  NetworkWorkspace ws;
  for (CellId c = 0; c < cell_count; ++c) {
    out.by_cell[c] = net.forward(SpatioTemporalState{c, 0.0, out.abs_time}, ws);
  }
  return out;
}

void write_loss_curve(const std::filesystem::path& path, std::span<const double> losses) {
  auto out = csv::open_output(path);
  csv::write_row(out, {"step", "loss"});
  for (std::size_t i = 0; i < losses.size(); ++i) {
    csv::write_row(out, {std::to_string(i + 1), csv::format_double(losses[i])});
  }
}

}  // namespace v1d3
