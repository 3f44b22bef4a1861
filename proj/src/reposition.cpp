#include "v1d3/reposition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "v1d3/csv.hpp"

namespace v1d3 {

RepositionCandidateSet reposition_candidates(const SpatioTemporalState& origin, const EngineConfig& cfg,
                                             const GridMap& grid) {
  grid.check_cell(origin.cell);
  RepositionCandidateSet set;
  set.origin = origin;
  set.candidates.push_back({origin.cell, 0.0});
  for (CellId c : cells_within(origin.cell, cfg.reposition_radius_cells, grid)) {
    if (c != origin.cell) set.candidates.push_back({c, travel_time(origin.cell, c, grid)});
  }
  return set;
}

std::vector<double> discounted_values(const RepositionCandidateSet& cands, const OnlineValue& v,
                                      const EngineConfig& cfg) {
  std::vector<double> out;
  out.reserve(cands.candidates.size());
  for (const auto& c : cands.candidates) {
    const SpatioTemporalState s{c.cell, cands.origin.clock + c.dt, std::nullopt};
    out.push_back(discount_factor(c.dt, cfg) * v.value(s) / cfg.reposition_value_scale);
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw InputError("softmax of an empty vector");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += p[i] = std::exp(logits[i] - top);
  for (double& x : p) x /= total;
  return p;
}

std::vector<double> reposition_distribution(const RepositionCandidateSet& cands, const OnlineValue& v,
                                            const EngineConfig& cfg) {
  return softmax(discounted_values(cands, v, cfg));
}

std::vector<const Driver*> qualifying_drivers(std::span<const Driver> drivers, Seconds now, const EngineConfig& cfg) {
  const Seconds threshold = cfg.reposition_threshold_C * cfg.dispatch_round_s;
  std::vector<const Driver*> out;
  for (const auto& d : drivers) {
    if (d.status == DriverStatus::idle && now - d.idle_since >= threshold) out.push_back(&d);
  }
  std::sort(out.begin(), out.end(), [](const Driver* a, const Driver* b) { return a->id < b->id; });
  return out;
}

std::vector<RepositionMove> sample_reposition(std::span<const Driver> drivers, Seconds now, const OnlineValue& v,
                                              const EngineConfig& cfg, const GridMap& grid, Rng& rng) {
  std::vector<RepositionMove> moves;
  for (const Driver* d : qualifying_drivers(drivers, now, cfg)) {
    const auto cands = reposition_candidates(d->state, cfg, grid);
    const auto p = reposition_distribution(cands, v, cfg);
    moves.push_back({d->id, d->state.cell, cands.candidates[rng.categorical(p)].cell});
  }
  return moves;
}

std::vector<RepositionMove> greedy_reposition(std::span<const Driver> drivers, Seconds now, const OnlineValue& v,
                                              const EngineConfig& cfg, const GridMap& grid, Rng& rng) {
  std::vector<RepositionMove> moves;
  std::vector<std::size_t> best;
  for (const Driver* d : qualifying_drivers(drivers, now, cfg)) {
    const auto cands = reposition_candidates(d->state, cfg, grid);
    const auto values = discounted_values(cands, v, cfg);
    const double top = *std::max_element(values.begin(), values.end());
    best.clear();
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i] == top) best.push_back(i);
    }
    const std::size_t pick = best.size() == 1 ? best[0] : best[rng.below(best.size())];
    moves.push_back({d->id, d->state.cell, cands.candidates[pick].cell});
  }
  return moves;
}

// ---------------------------------------------------------------- expert

void ExpertMatrix::set_row(int hour, CellId origin, Row row) {
  if (hour < 0 || hour >= 24) throw InputError("expert matrix hour outside [0, 24)");
  if (row.empty()) throw InputError("expert matrix row is empty");
  double total = 0.0;
  for (const auto& [cell, p] : row) {
    if (!std::isfinite(p) || p < 0.0) throw InputError("expert matrix probabilities must be finite and >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw InputError("expert matrix row (hour " + std::to_string(hour) + ", origin " + std::to_string(origin) +
                     ") sums to " + csv::format_double(total));
  }
  rows_[{hour, origin}] = std::move(row);
}

const ExpertMatrix::Row* ExpertMatrix::row(int hour, CellId origin) const {
  const auto it = rows_.find({hour, origin});
  return it == rows_.end() ? nullptr : &it->second;
}

ExpertMatrix ExpertMatrix::load(const std::filesystem::path& path, const GridMap& grid) {
  csv::Reader reader(path);
  reader.expect_header({"hour", "origin_cell", "destination_cell", "probability"});
  std::map<std::pair<int, CellId>, Row> pending;
  std::vector<std::string> f;
  while (reader.next(f)) {
    const auto line = reader.line_number();
    const auto where = path.string() + ": line " + std::to_string(line) + ": ";
    if (f.size() != 4) throw InputError(where + "expected 4 fields");
    const int hour = static_cast<int>(csv::parse_int(f[0], line));
    const auto origin = static_cast<CellId>(csv::parse_int(f[1], line));
    const auto dest = static_cast<CellId>(csv::parse_int(f[2], line));
    const double p = csv::parse_double(f[3], line);
    if (!grid.contains(origin) || !grid.contains(dest)) throw InputError(where + "cell outside the grid");
    pending[{hour, origin}].emplace_back(dest, p);
  }
  ExpertMatrix m;
  for (auto& [key, row] : pending) m.set_row(key.first, key.second, std::move(row));
  return m;
}

void ExpertMatrix::save(const std::filesystem::path& path) const {
  auto out = csv::open_output(path);
  csv::write_row(out, {"hour", "origin_cell", "destination_cell", "probability"});
  for (const auto& [key, row] : rows_) {
    for (const auto& [dest, p] : row) {
      csv::write_row(out, {std::to_string(key.first), std::to_string(key.second), std::to_string(dest),
                           csv::format_double(p)});
    }
  }
}

ExpertMatrix estimate_expert_matrix(std::span<const ObservedMove> moves, const GridMap& grid, int radius) {
  std::map<std::pair<int, CellId>, std::map<CellId, double>> counts;
  for (const auto& m : moves) {
    grid.check_cell(m.from);
    grid.check_cell(m.to);
    if (chebyshev_distance(m.from, m.to, grid) > radius) continue;
    const int hour = static_cast<int>(std::floor(std::fmod(m.abs_time, kSecondsPerDay) / 3600.0)) % 24;
    counts[{hour, m.from}][m.to] += 1.0;
  }
  ExpertMatrix matrix;
  for (const auto& [key, by_dest] : counts) {
    const auto cells = cells_within(key.second, radius, grid);
    double total = 0.0;
    for (const auto& [cell, n] : by_dest) total += n;
    total += static_cast<double>(cells.size());
    ExpertMatrix::Row row;
    for (CellId c : cells) {
      const auto it = by_dest.find(c);
      row.emplace_back(c, ((it == by_dest.end() ? 0.0 : it->second) + 1.0) / total);
    }
    matrix.set_row(key.first, key.second, std::move(row));
  }
  return matrix;
}

std::vector<RepositionMove> expert_reposition(std::span<const Driver> drivers, Seconds now,
                                              Seconds episode_start_abs, const ExpertMatrix& matrix,
                                              const EngineConfig& cfg, const GridMap& grid, Rng& rng,
                                              std::vector<std::string>* log) {
  const int hour = static_cast<int>(std::floor(std::fmod(episode_start_abs + now, kSecondsPerDay) / 3600.0)) % 24;
  std::vector<RepositionMove> moves;
  std::vector<double> weights;
  for (const Driver* d : qualifying_drivers(drivers, now, cfg)) {
    const CellId origin = d->state.cell;
    if (const auto* row = matrix.row(hour, origin)) {
      weights.clear();
      for (const auto& entry : *row) weights.push_back(entry.second);
      moves.push_back({d->id, origin, (*row)[rng.categorical(weights)].first});
      continue;
    }
    const auto ring = ring_cells(origin, 1, grid);
    if (log) {
      log->push_back("no expert row for hour " + std::to_string(hour) + ", cell " + std::to_string(origin) +
                     "; uniform over neighbours");
    }
    const CellId to = ring.empty() ? origin : ring[rng.below(ring.size())];
    moves.push_back({d->id, origin, to});
  }
  return moves;
}

void write_reposition_header(std::ostream& out) {
  csv::write_row(out, {"round", "driver_id", "from_cell", "to_cell", "policy"});
}

void write_repositions(std::ostream& out, long round, std::span<const RepositionMove> moves,
                       const std::string& policy) {
  for (const auto& m : moves) {
    csv::write_row(out, {std::to_string(round), std::to_string(m.driver), std::to_string(m.from),
                         std::to_string(m.to), policy});
  }
}

}  // namespace v1d3
