#pragma once

#include <filesystem>

#include "v1d3/valuefn.hpp"

namespace v1d3 {

/// A persisted value network plus the discounting it was trained under.
///
/// Binary layout, all integers and floats little-endian:
///   "V1D3SNAP"                      8 bytes magic
///   u32 version (= 1)
///   u32 n_quantizers, u32 memory_rows, u32 embed_dim, u32 grid_width
///   f64 tile_cells, f64 time_tile_s
///   u8  uses_time_input
///   u32 hidden_count, then hidden_count x u32 widths
///   f64 gamma, f64 discount_time_unit_s
///   u64 param_count, then param_count x f64 in ValueNetwork flat order
///   u64 FNV-1a checksum of every preceding byte
struct ValueSnapshot {
  ValueNetwork net;
  double gamma = 0.9;
  double discount_time_unit_s = 600.0;
};

void save_snapshot(const ValueSnapshot& snap, const std::filesystem::path& path);
/// Throws InputError on bad magic, version, shape, truncation or checksum.
ValueSnapshot load_snapshot(const std::filesystem::path& path);

}  // namespace v1d3
