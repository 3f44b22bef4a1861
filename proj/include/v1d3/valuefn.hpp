#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "v1d3/domain.hpp"

namespace v1d3 {

/// Exact value table over (cell, time slice). A non-positive slice length
/// collapses the clock so the table is keyed by cell alone.
class TabularValue {
 public:
  TabularValue() = default;
  TabularValue(int cell_count, Seconds slice_s = 0.0, int slice_count = 1);

  int cell_count() const { return cell_count_; }
  int slice_count() const { return slice_count_; }
  Seconds slice_s() const { return slice_s_; }

  int slice_of(Seconds clock) const;
  std::size_t key_of(const SpatioTemporalState& s) const;

  double value(const SpatioTemporalState& s) const { return values_[key_of(s)]; }
  double at(CellId cell, int slice = 0) const;
  /// Throws InputError for non-finite values.
  void set(CellId cell, int slice, double v);
  void set_key(std::size_t key, double v);

  std::span<const double> values() const { return values_; }
  CellId cell_of_key(std::size_t key) const { return static_cast<CellId>(key % cell_count_); }

  friend bool operator==(const TabularValue&, const TabularValue&) = default;

 private:
  int cell_count_ = 0;
  Seconds slice_s_ = 0.0;
  int slice_count_ = 1;
  std::vector<double> values_;
};

/// omega * online + (1 - omega) * offline, applied to every key; the offline
/// slice is indexed by cell. omega == 1 and omega == 0 return exact copies.
TabularValue ensemble_tabular(const TabularValue& online, std::span<const double> offline_by_cell,
                              double omega);

struct EmbeddingSpec {
  int n_quantizers = 3;
  int memory_rows = 20000;
  int embed_dim = 50;
  /// Needed to split cell ids into lattice coordinates.
  int grid_width = 20;
  /// Tile edge of each quantizer lattice, in cells; lattices are staggered by
  /// tile_cells / n_quantizers.
  double tile_cells = 3.0;
  /// Tile length along the time axis; <= 0 drops the time coordinate.
  double time_tile_s = 1800.0;

  friend bool operator==(const EmbeddingSpec&, const EmbeddingSpec&) = default;
};

struct QuantizedKey {
  int quantizer = 0;
  std::int64_t qx = 0;
  std::int64_t qy = 0;
  std::int64_t qt = 0;
};

/// CMAC addressing: n staggered quantizers over (x, y, time) hashed into A
/// memory rows. The memory itself is an A x m row-major matrix.
class CerebellarEmbedding {
 public:
  CerebellarEmbedding() = default;
  explicit CerebellarEmbedding(EmbeddingSpec spec);

  const EmbeddingSpec& spec() const { return spec_; }

  QuantizedKey quantize(int quantizer, CellId cell, double time) const;
  /// hash_g: multiplicative 64-bit hash of the quantized key, reduced mod A.
  std::int32_t row_of(const QuantizedKey& key) const;
  /// One row per quantizer, duplicates kept.
  std::vector<std::int32_t> active_rows(CellId cell, double time) const;

  std::span<const double> memory() const { return memory_; }
  std::span<double> memory() { return memory_; }
  std::span<const double> row(std::int32_t r) const;
  std::span<double> row(std::int32_t r);

  /// c(s)^T memory / n for the given activated rows.
  void embed_rows(std::span<const std::int32_t> rows, std::span<double> out) const;

 private:
  EmbeddingSpec spec_;
  std::vector<double> memory_;
};

struct NetworkShape {
  EmbeddingSpec embedding;
  std::vector<int> hidden = {32, 128, 32};
  bool uses_time_input = false;

  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

/// Dense layer view into ValueNetwork::dense(): W is out x in row-major, then b.
struct DenseLayer {
  int in = 0;
  int out = 0;
  std::size_t w_offset = 0;
  std::size_t b_offset = 0;
};

/// Gradient over a ValueNetwork's parameters. Embedding memory is sparse: only
/// activated rows carry entries.
struct NetworkGradient {
  std::vector<double> dense;
  std::map<std::int32_t, std::vector<double>> memory_rows;

  void reset(std::size_t dense_size);
  std::vector<double>& row(std::int32_t r, int embed_dim);
};

/// Scratch buffers for forward/backward passes.
struct NetworkWorkspace {
  std::vector<std::int32_t> rows;
  std::vector<std::vector<double>> acts;  // acts[0] = embedding, acts[l+1] = layer l output
  std::vector<double> delta;
  std::vector<double> delta_prev;
};

/// Cerebellar embedding followed by ReLU dense layers and a linear scalar head.
/// Flat parameter order: embedding memory (row-major), then each dense layer's
/// W and b, the scalar head last.
class ValueNetwork {
 public:
  ValueNetwork() = default;
  explicit ValueNetwork(NetworkShape shape);

  const NetworkShape& shape() const { return shape_; }
  bool uses_time_input() const { return shape_.uses_time_input; }
  const CerebellarEmbedding& embedding() const { return embedding_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  /// Memory ~ U(-0.1, 0.1); He-uniform dense weights; zero biases.
  void randomize(std::uint64_t seed);
  void set_zero();

  std::size_t memory_param_count() const { return embedding_.memory().size(); }
  std::size_t param_count() const { return memory_param_count() + dense_.size(); }
  double param(std::size_t i) const;
  void set_param(std::size_t i, double v);
  void scale_params(double factor);

  std::span<const double> dense() const { return dense_; }
  std::span<double> dense() { return dense_; }
  std::span<const double> memory() const { return embedding_.memory(); }
  /// Mutable access to the whole memory invalidates the cached row norms.
  std::span<double> memory_mut();
  /// Mutable access to one memory row; only that row's cached norm is refreshed.
  std::span<double> memory_row_mut(std::int32_t r);

  /// Time coordinate fed to the embedding. Throws InputError when abs_time is
  /// required but absent.
  double time_input(const SpatioTemporalState& s) const;

  double value(const SpatioTemporalState& s) const;
  double forward(const SpatioTemporalState& s, NetworkWorkspace& ws) const;
  /// Adds scale * dV/dparams into `grad` (which must be reset for this network)
  /// and returns V(s).
  double accumulate_gradient(const SpatioTemporalState& s, double scale, NetworkGradient& grad,
                             NetworkWorkspace& ws) const;

  /// Max absolute row-sum of the embedding memory, cached per row.
  double memory_inf_norm(std::int32_t* argmax_row = nullptr) const;

  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> flat);

  friend bool operator==(const ValueNetwork& a, const ValueNetwork& b) {
    return a.shape_ == b.shape_ && a.dense_ == b.dense_ &&
           std::equal(a.memory().begin(), a.memory().end(), b.memory().begin(), b.memory().end());
  }

 private:
  void refresh_norms() const;

  NetworkShape shape_;
  CerebellarEmbedding embedding_;
  std::vector<DenseLayer> layers_;
  std::vector<double> dense_;
  mutable std::vector<double> row_l1_;
  mutable std::vector<std::int32_t> dirty_rows_;
  mutable bool norms_valid_ = false;
};

std::vector<double> embed(const SpatioTemporalState& s, const ValueNetwork& net);
double value(const SpatioTemporalState& s, const ValueNetwork& net);
/// Dense flat gradient (memory first), for inspection and small networks.
std::vector<double> value_gradient(const SpatioTemporalState& s, const ValueNetwork& net);

/// ||memory||_inf + sum over dense layers (head included) of ||W||_inf, where
/// ||.||_inf is the max absolute row-sum.
double lipschitz_penalty(const ValueNetwork& net);
/// Adds scale * subgradient of lipschitz_penalty; ties resolve to the lowest row.
void accumulate_lipschitz_subgradient(const ValueNetwork& net, double scale, NetworkGradient& grad);

std::vector<double> flatten(const NetworkGradient& grad, const ValueNetwork& net);

/// Frozen copy of a network that refreshes every `sync_period` observed steps.
class TargetShadow {
 public:
  TargetShadow() = default;
  TargetShadow(const ValueNetwork& live, int sync_period);

  double value(const SpatioTemporalState& s) const { return frozen_.value(s); }
  const ValueNetwork& frozen() const { return frozen_; }
  int sync_period() const { return sync_period_; }

  /// Records one update of `live`; returns true when this step triggered a sync.
  bool step(const ValueNetwork& live);
  void sync(const ValueNetwork& live);

 private:
  ValueNetwork frozen_;
  int sync_period_ = 1;
  long steps_since_sync_ = 0;
};

struct DistillTarget {
  SpatioTemporalState state;
  double target = 0.0;
};

/// Full-batch gradient descent on mean squared error with step halving, so the
/// recorded error never increases. mse[0] is the error before the first step.
struct DistillReport {
  std::vector<double> mse;
};

DistillReport distill(ValueNetwork& student, std::span<const DistillTarget> targets, int steps,
                      double lr);

}  // namespace v1d3
