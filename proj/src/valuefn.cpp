#include "v1d3/valuefn.hpp"

#include <cmath>
#include <limits>

#include "v1d3/rng.hpp"

namespace v1d3 {

// ---------------------------------------------------------------- tabular

TabularValue::TabularValue(int cell_count, Seconds slice_s, int slice_count)
    : cell_count_(cell_count), slice_s_(slice_s > 0.0 ? slice_s : 0.0),
      slice_count_(slice_s > 0.0 ? std::max(1, slice_count) : 1) {
  if (cell_count < 1) throw InputError("tabular value needs at least one cell");
  values_.assign(static_cast<std::size_t>(cell_count_) * slice_count_, 0.0);
}

int TabularValue::slice_of(Seconds clock) const {
  if (slice_s_ <= 0.0) return 0;
  const auto idx = static_cast<long long>(std::floor(clock / slice_s_));
  return static_cast<int>(std::clamp<long long>(idx, 0, slice_count_ - 1));
}

std::size_t TabularValue::key_of(const SpatioTemporalState& s) const {
  if (s.cell < 0 || s.cell >= cell_count_) throw InputError("state cell outside value table");
  return static_cast<std::size_t>(slice_of(s.clock)) * cell_count_ + s.cell;
}

double TabularValue::at(CellId cell, int slice) const {
  return values_[static_cast<std::size_t>(slice) * cell_count_ + cell];
}

void TabularValue::set(CellId cell, int slice, double v) {
  if (cell < 0 || cell >= cell_count_ || slice < 0 || slice >= slice_count_) {
    throw InputError("tabular key out of range");
  }
  set_key(static_cast<std::size_t>(slice) * cell_count_ + cell, v);
}

void TabularValue::set_key(std::size_t key, double v) {
  if (!std::isfinite(v)) throw InputError("tabular values must be finite");
  values_.at(key) = v;
}

TabularValue ensemble_tabular(const TabularValue& online, std::span<const double> offline_by_cell,
                              double omega) {
  if (!(omega >= 0.0 && omega <= 1.0)) throw InputError("ensemble weight must lie in [0, 1]");
  if (offline_by_cell.size() != static_cast<std::size_t>(online.cell_count())) {
    throw InputError("offline slice size does not match the value table");
  }
  TabularValue out = online;
  if (omega == 1.0) return out;
  const auto values = online.values();
  for (std::size_t key = 0; key < values.size(); ++key) {
    const double offline = offline_by_cell[online.cell_of_key(key)];
    out.set_key(key, omega == 0.0 ? offline : omega * values[key] + (1.0 - omega) * offline);
  }
  return out;
}

// ---------------------------------------------------------------- embedding

CerebellarEmbedding::CerebellarEmbedding(EmbeddingSpec spec) : spec_(spec) {
  if (spec_.n_quantizers < 1 || spec_.memory_rows < 1 || spec_.embed_dim < 1 ||
      spec_.grid_width < 1 || !(spec_.tile_cells > 0.0)) {
    throw ConfigError("invalid cerebellar embedding shape");
  }
  memory_.assign(static_cast<std::size_t>(spec_.memory_rows) * spec_.embed_dim, 0.0);
}

QuantizedKey CerebellarEmbedding::quantize(int quantizer, CellId cell, double time) const {
  const double offset = static_cast<double>(quantizer) / spec_.n_quantizers;
  const double x = cell % spec_.grid_width;
  const double y = cell / spec_.grid_width;
  QuantizedKey key;
  key.quantizer = quantizer;
  key.qx = static_cast<std::int64_t>(std::floor(x / spec_.tile_cells + offset));
  key.qy = static_cast<std::int64_t>(std::floor(y / spec_.tile_cells + offset));
  key.qt = spec_.time_tile_s > 0.0
               ? static_cast<std::int64_t>(std::floor(time / spec_.time_tile_s + offset))
               : 0;
  return key;
}

std::int32_t CerebellarEmbedding::row_of(const QuantizedKey& key) const {
  std::uint64_t h = splitmix64(static_cast<std::uint64_t>(key.quantizer) + 1);
  h = (h ^ static_cast<std::uint64_t>(key.qx)) * 0x9e3779b97f4a7c15ULL;
  h = (h ^ static_cast<std::uint64_t>(key.qy)) * 0xc2b2ae3d27d4eb4fULL;
  h = (h ^ static_cast<std::uint64_t>(key.qt)) * 0x165667b19e3779f9ULL;
  h ^= h >> 32;
  return static_cast<std::int32_t>(h % static_cast<std::uint64_t>(spec_.memory_rows));
}

std::vector<std::int32_t> CerebellarEmbedding::active_rows(CellId cell, double time) const {
  std::vector<std::int32_t> rows(spec_.n_quantizers);
  for (int i = 0; i < spec_.n_quantizers; ++i) rows[i] = row_of(quantize(i, cell, time));
  return rows;
}

std::span<const double> CerebellarEmbedding::row(std::int32_t r) const {
  return std::span<const double>(memory_).subspan(static_cast<std::size_t>(r) * spec_.embed_dim,
                                                  spec_.embed_dim);
}

std::span<double> CerebellarEmbedding::row(std::int32_t r) {
  return std::span<double>(memory_).subspan(static_cast<std::size_t>(r) * spec_.embed_dim,
                                            spec_.embed_dim);
}

void CerebellarEmbedding::embed_rows(std::span<const std::int32_t> rows,
                                     std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::int32_t r : rows) {
    const auto src = row(r);
    for (int j = 0; j < spec_.embed_dim; ++j) out[j] += src[j];
  }
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  for (auto& v : out) v *= inv_n;
}

// ---------------------------------------------------------------- gradient

void NetworkGradient::reset(std::size_t dense_size) {
  dense.assign(dense_size, 0.0);
  memory_rows.clear();
}

std::vector<double>& NetworkGradient::row(std::int32_t r, int embed_dim) {
  auto [it, inserted] = memory_rows.try_emplace(r);
  if (inserted) it->second.assign(embed_dim, 0.0);
  return it->second;
}

// ---------------------------------------------------------------- network

ValueNetwork::ValueNetwork(NetworkShape shape) : shape_(std::move(shape)), embedding_(shape_.embedding) {
  int in = shape_.embedding.embed_dim;
  std::size_t offset = 0;
  auto add_layer = [&](int out) {
    if (out < 1) throw ConfigError("dense layer widths must be positive");
    DenseLayer layer{in, out, offset, offset + static_cast<std::size_t>(in) * out};
    offset = layer.b_offset + out;
    layers_.push_back(layer);
    in = out;
  };
  for (int width : shape_.hidden) add_layer(width);
  add_layer(1);
  dense_.assign(offset, 0.0);
}

void ValueNetwork::randomize(std::uint64_t seed) {
  Rng rng(seed, "value-network-init");
  for (auto& w : embedding_.memory()) w = rng.uniform(-0.1, 0.1);
  for (const auto& layer : layers_) {
    const double bound = std::sqrt(6.0 / layer.in);
    for (std::size_t i = 0; i < static_cast<std::size_t>(layer.in) * layer.out; ++i) {
      dense_[layer.w_offset + i] = rng.uniform(-bound, bound);
    }
    for (int i = 0; i < layer.out; ++i) dense_[layer.b_offset + i] = 0.0;
  }
  norms_valid_ = false;
}

void ValueNetwork::set_zero() {
  std::fill(embedding_.memory().begin(), embedding_.memory().end(), 0.0);
  std::fill(dense_.begin(), dense_.end(), 0.0);
  norms_valid_ = false;
}

double ValueNetwork::param(std::size_t i) const {
  const std::size_t mem = memory_param_count();
  return i < mem ? embedding_.memory()[i] : dense_.at(i - mem);
}

void ValueNetwork::set_param(std::size_t i, double v) {
  const std::size_t mem = memory_param_count();
  if (i < mem) {
    embedding_.memory()[i] = v;
    dirty_rows_.push_back(static_cast<std::int32_t>(i / shape_.embedding.embed_dim));
  } else {
    dense_.at(i - mem) = v;
  }
}

void ValueNetwork::scale_params(double factor) {
  for (auto& w : embedding_.memory()) w *= factor;
  for (auto& w : dense_) w *= factor;
  norms_valid_ = false;
}

std::span<double> ValueNetwork::memory_mut() {
  norms_valid_ = false;
  return embedding_.memory();
}

std::span<double> ValueNetwork::memory_row_mut(std::int32_t r) {
  dirty_rows_.push_back(r);
  return embedding_.row(r);
}

double ValueNetwork::time_input(const SpatioTemporalState& s) const {
  if (shape_.uses_time_input) {
    if (!s.abs_time) throw InputError("value network with time input needs abs_time");
    return *s.abs_time;
  }
  return s.clock;
}

double ValueNetwork::forward(const SpatioTemporalState& s, NetworkWorkspace& ws) const {
  const int m = shape_.embedding.embed_dim;
  ws.rows = embedding_.active_rows(s.cell, time_input(s));
  ws.acts.resize(layers_.size());
  ws.acts[0].resize(m);
  embedding_.embed_rows(ws.rows, ws.acts[0]);
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const auto& in = ws.acts[l];
    auto& out = ws.acts[l + 1];
    out.resize(layer.out);
    for (int o = 0; o < layer.out; ++o) {
      const double* w = &dense_[layer.w_offset + static_cast<std::size_t>(o) * layer.in];
      double z = dense_[layer.b_offset + o];
      for (int k = 0; k < layer.in; ++k) z += w[k] * in[k];
      out[o] = z > 0.0 ? z : 0.0;
    }
  }
  const auto& head = layers_.back();
  const auto& in = ws.acts[layers_.size() - 1];
  double out = dense_[head.b_offset];
  for (int k = 0; k < head.in; ++k) out += dense_[head.w_offset + k] * in[k];
  return out;
}

double ValueNetwork::value(const SpatioTemporalState& s) const {
  thread_local NetworkWorkspace ws;
  return forward(s, ws);
}

double ValueNetwork::accumulate_gradient(const SpatioTemporalState& s, double scale,
                                         NetworkGradient& grad, NetworkWorkspace& ws) const {
  const double out = forward(s, ws);
  if (grad.dense.size() != dense_.size()) throw InputError("gradient buffer not reset for this network");
  // ws.delta holds dOut/dz for the current layer's outputs.
  ws.delta.assign(1, scale);
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& layer = layers_[li];
    const auto& in = ws.acts[li];
    for (int o = 0; o < layer.out; ++o) {
      const double g = ws.delta[o];
      if (g == 0.0) continue;
      double* dw = &grad.dense[layer.w_offset + static_cast<std::size_t>(o) * layer.in];
      for (int k = 0; k < layer.in; ++k) dw[k] += g * in[k];
      grad.dense[layer.b_offset + o] += g;
    }
    ws.delta_prev.assign(layer.in, 0.0);
    for (int o = 0; o < layer.out; ++o) {
      const double g = ws.delta[o];
      if (g == 0.0) continue;
      const double* w = &dense_[layer.w_offset + static_cast<std::size_t>(o) * layer.in];
      for (int k = 0; k < layer.in; ++k) ws.delta_prev[k] += w[k] * g;
    }
    if (li > 0) {
      for (int k = 0; k < layer.in; ++k) {
        if (!(in[k] > 0.0)) ws.delta_prev[k] = 0.0;
      }
    }
    std::swap(ws.delta, ws.delta_prev);
  }
  // ws.delta is now dOut/d(embedding); each activated row receives 1/n of it.
  const int m = shape_.embedding.embed_dim;
  const double inv_n = 1.0 / static_cast<double>(ws.rows.size());
  for (std::int32_t r : ws.rows) {
    auto& row = grad.row(r, m);
    for (int j = 0; j < m; ++j) row[j] += ws.delta[j] * inv_n;
  }
  return out;
}

void ValueNetwork::refresh_norms() const {
  const int m = shape_.embedding.embed_dim;
  auto row_sum = [&](std::int32_t r) {
    double s = 0.0;
    for (double w : embedding_.row(r)) s += std::abs(w);
    (void)m;
    return s;
  };
  if (!norms_valid_) {
    row_l1_.assign(shape_.embedding.memory_rows, 0.0);
    for (std::int32_t r = 0; r < shape_.embedding.memory_rows; ++r) row_l1_[r] = row_sum(r);
    norms_valid_ = true;
  } else {
    for (std::int32_t r : dirty_rows_) row_l1_[r] = row_sum(r);
  }
  dirty_rows_.clear();
}

double ValueNetwork::memory_inf_norm(std::int32_t* argmax_row) const {
  refresh_norms();
  double best = -1.0;
  std::int32_t best_row = 0;
  for (std::int32_t r = 0; r < static_cast<std::int32_t>(row_l1_.size()); ++r) {
    if (row_l1_[r] > best) {
      best = row_l1_[r];
      best_row = r;
    }
  }
  if (argmax_row) *argmax_row = best_row;
  return best;
}

std::vector<double> ValueNetwork::flat_params() const {
  std::vector<double> out(embedding_.memory().begin(), embedding_.memory().end());
  out.insert(out.end(), dense_.begin(), dense_.end());
  return out;
}

void ValueNetwork::set_flat_params(std::span<const double> flat) {
  if (flat.size() != param_count()) throw InputError("parameter vector size mismatch");
  const std::size_t mem = memory_param_count();
  std::copy(flat.begin(), flat.begin() + mem, embedding_.memory().begin());
  std::copy(flat.begin() + mem, flat.end(), dense_.begin());
  norms_valid_ = false;
}

// ---------------------------------------------------------------- free functions

std::vector<double> embed(const SpatioTemporalState& s, const ValueNetwork& net) {
  const auto rows = net.embedding().active_rows(s.cell, net.time_input(s));
  std::vector<double> out(net.shape().embedding.embed_dim);
  net.embedding().embed_rows(rows, out);
  return out;
}

double value(const SpatioTemporalState& s, const ValueNetwork& net) { return net.value(s); }

std::vector<double> flatten(const NetworkGradient& grad, const ValueNetwork& net) {
  const int m = net.shape().embedding.embed_dim;
  std::vector<double> out(net.param_count(), 0.0);
  for (const auto& [r, row] : grad.memory_rows) {
    std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(r) * m);
  }
  std::copy(grad.dense.begin(), grad.dense.end(),
            out.begin() + static_cast<std::ptrdiff_t>(net.memory_param_count()));
  return out;
}

std::vector<double> value_gradient(const SpatioTemporalState& s, const ValueNetwork& net) {
  NetworkGradient grad;
  grad.reset(net.dense().size());
  NetworkWorkspace ws;
  net.accumulate_gradient(s, 1.0, grad, ws);
  return flatten(grad, net);
}

namespace {

// Lowest-index row with the largest absolute row-sum of an out x in matrix.
int argmax_row_l1(std::span<const double> w, int rows, int cols, double* best_out) {
  int best_row = 0;
  double best = -1.0;
  for (int o = 0; o < rows; ++o) {
    double s = 0.0;
    for (int k = 0; k < cols; ++k) s += std::abs(w[static_cast<std::size_t>(o) * cols + k]);
    if (s > best) {
      best = s;
      best_row = o;
    }
  }
  *best_out = best;
  return best_row;
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

double lipschitz_penalty(const ValueNetwork& net) {
  double total = net.memory_inf_norm();
  for (const auto& layer : net.layers()) {
    double best = 0.0;
    argmax_row_l1(net.dense().subspan(layer.w_offset, static_cast<std::size_t>(layer.in) * layer.out),
                  layer.out, layer.in, &best);
    total += best;
  }
  return total;
}

void accumulate_lipschitz_subgradient(const ValueNetwork& net, double scale, NetworkGradient& grad) {
  const int m = net.shape().embedding.embed_dim;
  std::int32_t row = 0;
  net.memory_inf_norm(&row);
  auto& g = grad.row(row, m);
  const auto mem_row = net.embedding().row(row);
  for (int j = 0; j < m; ++j) g[j] += scale * sign(mem_row[j]);
  for (const auto& layer : net.layers()) {
    double best = 0.0;
    const auto w = net.dense().subspan(layer.w_offset, static_cast<std::size_t>(layer.in) * layer.out);
    const int o = argmax_row_l1(w, layer.out, layer.in, &best);
    for (int k = 0; k < layer.in; ++k) {
      const std::size_t idx = static_cast<std::size_t>(o) * layer.in + k;
      grad.dense[layer.w_offset + idx] += scale * sign(w[idx]);
    }
  }
}

// ---------------------------------------------------------------- target shadow

TargetShadow::TargetShadow(const ValueNetwork& live, int sync_period)
    : frozen_(live), sync_period_(sync_period) {
  if (sync_period < 1) throw ConfigError("target sync period must be >= 1");
}

bool TargetShadow::step(const ValueNetwork& live) {
  if (++steps_since_sync_ >= sync_period_) {
    sync(live);
    return true;
  }
  return false;
}

void TargetShadow::sync(const ValueNetwork& live) {
  frozen_ = live;
  steps_since_sync_ = 0;
}

// ---------------------------------------------------------------- distillation

namespace {

double mean_squared_error(const ValueNetwork& net, std::span<const DistillTarget> targets,
                          NetworkWorkspace& ws) {
  double total = 0.0;
  for (const auto& t : targets) {
    const double d = net.forward(t.state, ws) - t.target;
    total += d * d;
  }
  return total / static_cast<double>(targets.size());
}

}  // namespace

DistillReport distill(ValueNetwork& student, std::span<const DistillTarget> targets, int steps,
                      double lr) {
  if (targets.empty()) throw InputError("distillation needs at least one target");
  for (const auto& t : targets) {
    if (!std::isfinite(t.target)) throw InputError("distillation targets must be finite");
  }
  const int m = student.shape().embedding.embed_dim;
  const double n = static_cast<double>(targets.size());
  NetworkWorkspace ws;
  NetworkGradient grad;
  DistillReport report;
  double current = mean_squared_error(student, targets, ws);
  report.mse.push_back(current);

  std::vector<double> dense_backup;
  std::map<std::int32_t, std::vector<double>> row_backup;
  for (int step = 0; step < steps; ++step) {
    grad.reset(student.dense().size());
    for (const auto& t : targets) {
      const double v = student.forward(t.state, ws);
      student.accumulate_gradient(t.state, 2.0 * (v - t.target) / n, grad, ws);
    }
    dense_backup.assign(student.dense().begin(), student.dense().end());
    row_backup.clear();
    for (const auto& [r, g] : grad.memory_rows) {
      const auto row = student.embedding().row(r);
      row_backup.emplace(r, std::vector<double>(row.begin(), row.end()));
    }
    auto restore = [&] {
      std::copy(dense_backup.begin(), dense_backup.end(), student.dense().begin());
      for (const auto& [r, saved] : row_backup) {
        auto row = student.memory_row_mut(r);
        std::copy(saved.begin(), saved.end(), row.begin());
      }
    };
    double step_size = lr;
    bool accepted = false;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt, step_size *= 0.5) {
      auto dense = student.dense();
      for (std::size_t i = 0; i < dense.size(); ++i) dense[i] -= step_size * grad.dense[i];
      for (const auto& [r, g] : grad.memory_rows) {
        auto row = student.memory_row_mut(r);
        for (int j = 0; j < m; ++j) row[j] -= step_size * g[j];
      }
      const double next = mean_squared_error(student, targets, ws);
      if (next <= current) {
        current = next;
        accepted = true;
      } else {
        restore();
      }
    }
    report.mse.push_back(current);
  }
  return report;
}

}  // namespace v1d3
