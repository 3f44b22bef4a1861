#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "v1d3/csv.hpp"
#include "v1d3/simulator.hpp"

namespace v1d3 {
namespace {

using nlohmann::ordered_json;

// Reads keys from one JSON object and rejects any key left unread.
class Fields {
 public:
  Fields(const ordered_json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(j_.at(key), key);
  }

  template <class T>
  T need(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) throw ConfigError(where_ + ": missing key '" + key + "'");
    return convert<T>(j_.at(key), key);
  }

  const ordered_json& sub(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  template <class T>
  T convert(const ordered_json& v, const std::string& key) const {
    const auto fail = [&](const char* what) { return ConfigError(where_ + ": '" + key + "' must be " + what); };
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw fail("a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw fail("a string");
      return v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw fail("an integer");
      return v.get<T>();
    } else {
      if (!v.is_number()) throw fail("a number");
      return v.get<T>();
    }
  }

  const ordered_json& j_;
  std::string where_;
  std::set<std::string> used_;
};

std::vector<std::pair<double, double>> read_knots(const ordered_json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be a list of [x, y] pairs");
  std::vector<std::pair<double, double>> out;
  for (const auto& k : j) {
    if (!k.is_array() || k.size() != 2 || !k[0].is_number() || !k[1].is_number()) {
      throw ConfigError(where + " must be a list of [x, y] pairs");
    }
    out.emplace_back(k[0].get<double>(), k[1].get<double>());
  }
  return out;
}

ordered_json write_knots(const std::vector<std::pair<double, double>>& knots) {
  ordered_json arr = ordered_json::array();
  for (const auto& [x, y] : knots) arr.push_back({x, y});
  return arr;
}

double interpolate(const std::vector<std::pair<double, double>>& knots, double x) {
  if (knots.empty()) return 0.0;
  if (x <= knots.front().first) return knots.front().second;
  if (x >= knots.back().first) return knots.back().second;
  const auto hi = std::upper_bound(knots.begin(), knots.end(), x,
                                   [](double v, const std::pair<double, double>& k) { return v < k.first; });
  const auto lo = hi - 1;
  const double w = (x - lo->first) / (hi->first - lo->first);
  return lo->second + w * (hi->second - lo->second);
}

CellId read_cell(Fields& f, const GridMap& grid, const std::string& where) {
  if (f.has("cell")) return f.need<int>("cell");
  const int x = f.need<int>("x");
  const int y = f.need<int>("y");
  if (x < 0 || x >= grid.width || y < 0 || y >= grid.height) throw ConfigError(where + ": cell outside the grid");
  return grid.cell_at(x, y);
}

PerturbationKind perturbation_kind_from_string(const std::string& text) {
  if (text == "add_drivers") return PerturbationKind::add_drivers;
  if (text == "add_orders") return PerturbationKind::add_orders;
  throw ConfigError("unknown perturbation kind '" + text + "'");
}

const char* to_string(PerturbationKind k) { return k == PerturbationKind::add_drivers ? "add_drivers" : "add_orders"; }

}  // namespace

// ---------------------------------------------------------------- curves

void CancellationCurve::validate() const {
  for (std::size_t i = 0; i < knots.size(); ++i) {
    const auto [d, p] = knots[i];
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("cancellation probabilities must lie in [0, 1]");
    if (i > 0) {
      if (!(d > knots[i - 1].first)) throw ConfigError("cancellation knots must have increasing distances");
      if (p < knots[i - 1].second) throw ConfigError("cancellation probability must not decrease with distance");
    }
  }
}

double CancellationCurve::at(double distance) const { return interpolate(knots, distance); }

bool step_cancellation(double pickup_distance, const CancellationCurve& curve, Rng& rng) {
  return rng.uniform() < curve.at(pickup_distance);
}

double Hotspot::multiplier(double hour) const { return interpolate(profile, hour); }

void PerturbationSpec::validate(const GridMap& grid) const {
  if (!grid.contains(cell)) throw ConfigError("perturbation cell outside the grid");
  if (start_round < 0) throw ConfigError("perturbation start_round must be >= 0");
  if (drivers < 0 || orders_per_pulse < 0) throw ConfigError("perturbation counts must be >= 0");
  if (!(pulse_period_s > 0.0) || duration_s < 0.0) throw ConfigError("perturbation pulse timing must be positive");
}

void Scenario::validate() const {
  grid.validate();
  if (fleet_size < 0) throw ConfigError("fleet_size must be >= 0");
  if (managed_N < 0 || managed_N > fleet_size) throw ConfigError("managed_N must lie in [0, fleet_size]");
  if (!(episode_horizon_s > 0.0)) throw ConfigError("episode_horizon_s must be positive");
  if (episode_start_abs_s < 0.0 || episode_start_abs_s >= kSecondsPerDay) {
    throw ConfigError("episode_start_abs_s must lie within a day");
  }
  cancellation.validate();
  if (fees.base < 0.0 || fees.per_second < 0.0) throw ConfigError("fees must be >= 0");
  if (shifts.start_spread_s < 0.0 || shifts.min_length_s > shifts.max_length_s) {
    throw ConfigError("shift window is inconsistent");
  }
  if (synthetic) {
    const auto& s = *synthetic;
    if (s.base_rate_per_cell_hour < 0.0) throw ConfigError("base rate must be >= 0");
    if (!(s.hotspot_attraction >= 0.0 && s.hotspot_attraction <= 1.0)) {
      throw ConfigError("hotspot_attraction must lie in [0, 1]");
    }
    if (s.local_radius < 0 || !(s.min_trip_s > 0.0) || !(s.bin_s > 0.0) || s.day_variation < 0.0) {
      throw ConfigError("synthetic order spec is inconsistent");
    }
    for (const auto& h : s.hotspots) {
      if (!grid.contains(h.cell)) throw ConfigError("hotspot outside the grid");
      if (!(h.sigma_cells > 0.0) || h.peak_rate_per_hour < 0.0) throw ConfigError("hotspot shape is inconsistent");
      for (const auto& [hour, m] : h.profile) {
        if (m < 0.0) throw ConfigError("hotspot profile multipliers must be >= 0");
      }
    }
  }
  if (!synthetic && !orders_file) throw ConfigError("scenario needs synthetic orders or an orders file");
  if (perturbation) perturbation->validate(grid);
}

// ---------------------------------------------------------------- JSON

Scenario scenario_from_json_text(const std::string& text, const std::filesystem::path& base_dir) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("scenario is not valid JSON: ") + e.what());
  }
  Fields f(j, "scenario");
  Scenario s;
  s.name = f.get<std::string>("name", s.name);
  if (f.has("grid")) {
    Fields g(f.sub("grid"), "grid");
    s.grid.width = g.get<int>("width", s.grid.width);
    s.grid.height = g.get<int>("height", s.grid.height);
    s.grid.cell_edge_m = g.get<double>("cell_edge_m", s.grid.cell_edge_m);
    s.grid.speed_mps = g.get<double>("speed_mps", s.grid.speed_mps);
    g.finish();
  }
  s.grid.validate();
  s.fleet_size = f.need<int>("fleet_size");
  s.managed_N = f.get<int>("managed_N", 0);
  s.episode_horizon_s = f.get<double>("episode_horizon_s", s.episode_horizon_s);
  s.episode_start_abs_s = f.get<double>("episode_start_abs_s", s.episode_start_abs_s);
  if (f.has("cancellation_curve")) s.cancellation.knots = read_knots(f.sub("cancellation_curve"), "cancellation_curve");
  if (f.has("fees")) {
    Fields g(f.sub("fees"), "fees");
    s.fees.base = g.get<double>("base", s.fees.base);
    s.fees.per_second = g.get<double>("per_second", s.fees.per_second);
    g.finish();
  }
  if (f.has("shifts")) {
    Fields g(f.sub("shifts"), "shifts");
    s.shifts.start_spread_s = g.get<double>("start_spread_s", 0.0);
    s.shifts.min_length_s = g.get<double>("min_length_s", 0.0);
    s.shifts.max_length_s = g.get<double>("max_length_s", 0.0);
    g.finish();
  }
  if (f.has("synthetic")) {
    Fields g(f.sub("synthetic"), "synthetic");
    SyntheticSpec spec;
    spec.base_rate_per_cell_hour = g.get<double>("base_rate_per_cell_hour", 0.0);
    spec.hotspot_attraction = g.get<double>("hotspot_attraction", spec.hotspot_attraction);
    spec.local_radius = g.get<int>("local_radius", spec.local_radius);
    spec.min_trip_s = g.get<double>("min_trip_s", spec.min_trip_s);
    spec.bin_s = g.get<double>("bin_s", spec.bin_s);
    spec.day_variation = g.get<double>("day_variation", 0.0);
    if (g.has("hotspots")) {
      const auto& arr = g.sub("hotspots");
      if (!arr.is_array()) throw ConfigError("hotspots must be a list");
      for (const auto& hj : arr) {
        Fields h(hj, "hotspot");
        Hotspot spot;
        spot.cell = read_cell(h, s.grid, "hotspot");
        spot.sigma_cells = h.get<double>("sigma_cells", spot.sigma_cells);
        spot.peak_rate_per_hour = h.get<double>("peak_rate_per_hour", spot.peak_rate_per_hour);
        if (h.has("profile")) spot.profile = read_knots(h.sub("profile"), "hotspot profile");
        h.finish();
        spec.hotspots.push_back(spot);
      }
    }
    g.finish();
    s.synthetic = spec;
  }
  if (f.has("orders_file")) s.orders_file = base_dir / f.need<std::string>("orders_file");
  if (f.has("roster_file")) s.roster_file = base_dir / f.need<std::string>("roster_file");
  if (f.has("perturbation")) {
    Fields g(f.sub("perturbation"), "perturbation");
    PerturbationSpec p;
    p.kind = perturbation_kind_from_string(g.need<std::string>("kind"));
    p.cell = read_cell(g, s.grid, "perturbation");
    p.start_round = g.get<long>("start_round", 0);
    p.drivers = g.get<int>("drivers", p.drivers);
    p.orders_per_pulse = g.get<int>("orders_per_pulse", p.orders_per_pulse);
    p.pulse_period_s = g.get<double>("pulse_period_s", p.pulse_period_s);
    p.duration_s = g.get<double>("duration_s", p.duration_s);
    p.driver_stay_s = g.get<double>("driver_stay_s", p.driver_stay_s);
    g.finish();
    s.perturbation = p;
  }
  f.finish();
  s.validate();
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open scenario " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return scenario_from_json_text(buf.str(), path.parent_path());
}

std::string scenario_to_json_text(const Scenario& s) {
  ordered_json j;
  j["name"] = s.name;
  j["grid"] = {{"width", s.grid.width},
               {"height", s.grid.height},
               {"cell_edge_m", s.grid.cell_edge_m},
               {"speed_mps", s.grid.speed_mps}};
  j["fleet_size"] = s.fleet_size;
  j["managed_N"] = s.managed_N;
  j["episode_horizon_s"] = s.episode_horizon_s;
  j["episode_start_abs_s"] = s.episode_start_abs_s;
  j["cancellation_curve"] = write_knots(s.cancellation.knots);
  j["fees"] = {{"base", s.fees.base}, {"per_second", s.fees.per_second}};
  j["shifts"] = {{"start_spread_s", s.shifts.start_spread_s},
                 {"min_length_s", s.shifts.min_length_s},
                 {"max_length_s", s.shifts.max_length_s}};
  if (s.synthetic) {
    const auto& spec = *s.synthetic;
    ordered_json g;
    g["base_rate_per_cell_hour"] = spec.base_rate_per_cell_hour;
    g["hotspot_attraction"] = spec.hotspot_attraction;
    g["local_radius"] = spec.local_radius;
    g["min_trip_s"] = spec.min_trip_s;
    g["bin_s"] = spec.bin_s;
    g["day_variation"] = spec.day_variation;
    g["hotspots"] = ordered_json::array();
    for (const auto& h : spec.hotspots) {
      g["hotspots"].push_back({{"cell", h.cell},
                               {"sigma_cells", h.sigma_cells},
                               {"peak_rate_per_hour", h.peak_rate_per_hour},
                               {"profile", write_knots(h.profile)}});
    }
    j["synthetic"] = g;
  }
  if (s.orders_file) j["orders_file"] = s.orders_file->string();
  if (s.roster_file) j["roster_file"] = s.roster_file->string();
  if (s.perturbation) {
    const auto& p = *s.perturbation;
    j["perturbation"] = {{"kind", to_string(p.kind)},
                         {"cell", p.cell},
                         {"start_round", p.start_round},
                         {"drivers", p.drivers},
                         {"orders_per_pulse", p.orders_per_pulse},
                         {"pulse_period_s", p.pulse_period_s},
                         {"duration_s", p.duration_s},
                         {"driver_stay_s", p.driver_stay_s}};
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- synthetic orders

namespace {

struct DemandField {
  // weight[h][c]: spatial kernel of hotspot h at cell c.
  std::vector<std::vector<double>> weight;
  std::vector<double> day_scale;
};

DemandField demand_field(const Scenario& s, const SyntheticSpec& spec, std::uint64_t seed) {
  DemandField f;
  Rng day(seed, "orders-day");
  for (const auto& h : spec.hotspots) {
    std::vector<double> w(s.grid.cell_count());
    const double hx = s.grid.x_of(h.cell), hy = s.grid.y_of(h.cell);
    for (CellId c = 0; c < s.grid.cell_count(); ++c) {
      const double dx = s.grid.x_of(c) - hx, dy = s.grid.y_of(c) - hy;
      w[c] = std::exp(-(dx * dx + dy * dy) / (2.0 * h.sigma_cells * h.sigma_cells));
    }
    f.weight.push_back(std::move(w));
    const double sd = spec.day_variation;
    f.day_scale.push_back(sd > 0.0 ? std::exp(sd * day.normal() - 0.5 * sd * sd) : 1.0);
  }
  return f;
}

// Orders per hour at each cell, and each hotspot's share, at `hour` into the episode.
double cell_rate(const SyntheticSpec& spec, const DemandField& f, CellId c, double hour) {
  double rate = spec.base_rate_per_cell_hour;
  for (std::size_t h = 0; h < spec.hotspots.size(); ++h) {
    rate += spec.hotspots[h].peak_rate_per_hour * spec.hotspots[h].multiplier(hour) * f.day_scale[h] * f.weight[h][c];
  }
  return rate;
}

CellId clamp_cell(const GridMap& grid, long x, long y) {
  x = std::clamp<long>(x, 0, grid.width - 1);
  y = std::clamp<long>(y, 0, grid.height - 1);
  return grid.cell_at(static_cast<int>(x), static_cast<int>(y));
}

CellId draw_destination(const Scenario& s, const SyntheticSpec& spec, const DemandField& f, CellId origin,
                        double hour, Rng& rng) {
  if (!spec.hotspots.empty() && rng.uniform() < spec.hotspot_attraction) {
    std::vector<double> pull(spec.hotspots.size());
    for (std::size_t h = 0; h < pull.size(); ++h) {
      pull[h] = spec.hotspots[h].peak_rate_per_hour * spec.hotspots[h].multiplier(hour) * f.day_scale[h];
    }
    double total = 0.0;
    for (double p : pull) total += p;
    if (total > 0.0) {
      const auto& h = spec.hotspots[rng.categorical(pull)];
      const long x = std::lround(s.grid.x_of(h.cell) + h.sigma_cells * rng.normal());
      const long y = std::lround(s.grid.y_of(h.cell) + h.sigma_cells * rng.normal());
      return clamp_cell(s.grid, x, y);
    }
  }
  const auto local = cells_within(origin, spec.local_radius, s.grid);
  return local[rng.below(local.size())];
}

}  // namespace

Order make_order(const Scenario& s, Seconds min_trip_s, OrderId id, CellId origin, CellId dest, Seconds created_at) {
  Order o;
  o.id = id;
  o.origin = origin;
  o.destination = dest;
  o.created_at = created_at;
  o.trip_duration = std::max(min_trip_s, travel_time(origin, dest, s.grid));
  o.fee = s.fees.fee(o.trip_duration);
  return o;
}

EpisodeInputs generate_synthetic(const Scenario& s, std::uint64_t seed) {
  if (!s.synthetic) throw ConfigError("scenario has no synthetic order spec");
  const auto& spec = *s.synthetic;
  const auto field = demand_field(s, spec, seed);
  EpisodeInputs out;

  Rng arrivals(seed, "orders");
  const int cells = s.grid.cell_count();
  std::vector<double> demand_mass(cells, 0.0);
  for (Seconds bin_start = 0.0; bin_start < s.episode_horizon_s; bin_start += spec.bin_s) {
    const Seconds bin_end = std::min(bin_start + spec.bin_s, s.episode_horizon_s);
    const double hour = 0.5 * (bin_start + bin_end) / 3600.0;
    for (CellId c = 0; c < cells; ++c) {
      const double rate = cell_rate(spec, field, c, hour);
      demand_mass[c] += rate * (bin_end - bin_start);
      if (rate <= 0.0) continue;
      Seconds t = bin_start + arrivals.exponential(rate / 3600.0);
      while (t < bin_end) {
        const CellId dest = draw_destination(s, spec, field, c, t / 3600.0, arrivals);
        out.orders.push_back(make_order(s, spec.min_trip_s, 0, c, dest, t));
        t += arrivals.exponential(rate / 3600.0);
      }
    }
  }
  std::stable_sort(out.orders.begin(), out.orders.end(),
                   [](const Order& a, const Order& b) { return a.created_at < b.created_at; });
  for (std::size_t i = 0; i < out.orders.size(); ++i) out.orders[i].id = static_cast<OrderId>(i);

  // Drivers start where the day's demand is, with a floor so empty cells stay possible.
  Rng roster(seed, "roster");
  double total_mass = 0.0;
  for (double m : demand_mass) total_mass += m;
  std::vector<double> start_weight(cells);
  for (CellId c = 0; c < cells; ++c) start_weight[c] = demand_mass[c] + 0.05 * total_mass / cells + 1e-12;
  for (int i = 0; i < s.fleet_size; ++i) {
    RosterEntry e;
    e.id = i;
    e.start_cell = static_cast<CellId>(roster.categorical(start_weight));
    e.shift_start = s.shifts.start_spread_s > 0.0 ? std::floor(roster.uniform(0.0, s.shifts.start_spread_s)) : 0.0;
    const Seconds length = s.shifts.max_length_s > 0.0
                               ? std::floor(roster.uniform(s.shifts.min_length_s, s.shifts.max_length_s))
                               : s.episode_horizon_s;
    e.shift_end = std::min(s.episode_horizon_s, e.shift_start + length);
    e.managed = i < s.managed_N;
    out.roster.push_back(e);
  }
  return out;
}

EpisodeInputs load_inputs(const Scenario& s, std::uint64_t seed) {
  if (!s.orders_file) return generate_synthetic(s, seed);
  EpisodeInputs in;
  in.orders = read_orders_csv(*s.orders_file, s.grid);
  if (s.roster_file) {
    in.roster = read_roster_csv(*s.roster_file, s.grid);
  } else {
    if (!s.synthetic) throw ConfigError("replay scenario needs a roster file or a synthetic spec");
    in.roster = generate_synthetic(s, seed).roster;
  }
  return in;
}

// ---------------------------------------------------------------- files

std::vector<Order> read_orders_csv(const std::filesystem::path& path, const GridMap& grid) {
  csv::Reader reader(path);
  reader.expect_header({"order_id", "origin_cell", "dest_cell", "created_at_s", "fee", "trip_duration_s"});
  std::vector<Order> out;
  std::vector<std::string> f;
  while (reader.next(f)) {
    const auto line = reader.line_number();
    const auto where = path.string() + ": line " + std::to_string(line) + ": ";
    if (f.size() != 6) throw InputError(where + "expected 6 fields");
    Order o;
    try {
      o.id = csv::parse_int(f[0], line);
      o.origin = static_cast<CellId>(csv::parse_int(f[1], line));
      o.destination = static_cast<CellId>(csv::parse_int(f[2], line));
      o.created_at = csv::parse_double(f[3], line);
      o.fee = csv::parse_double(f[4], line);
      o.trip_duration = csv::parse_double(f[5], line);
      validate_order(o, grid);
    } catch (const InputError& e) {
      throw InputError(where + e.what());
    }
    out.push_back(o);
  }
  std::stable_sort(out.begin(), out.end(), [](const Order& a, const Order& b) {
    return a.created_at < b.created_at || (a.created_at == b.created_at && a.id < b.id);
  });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].id == out[i - 1].id) throw InputError(path.string() + ": duplicate order id " + std::to_string(out[i].id));
  }
  return out;
}

void write_orders_csv(const std::filesystem::path& path, std::span<const Order> orders) {
  auto out = csv::open_output(path);
  csv::write_row(out, {"order_id", "origin_cell", "dest_cell", "created_at_s", "fee", "trip_duration_s"});
  for (const auto& o : orders) {
    csv::write_row(out, {std::to_string(o.id), std::to_string(o.origin), std::to_string(o.destination),
                         csv::format_double(o.created_at), csv::format_double(o.fee),
                         csv::format_double(o.trip_duration)});
  }
}

std::vector<RosterEntry> read_roster_csv(const std::filesystem::path& path, const GridMap& grid) {
  csv::Reader reader(path);
  reader.expect_header({"driver_id", "start_cell", "shift_start_s", "shift_end_s", "managed"});
  std::vector<RosterEntry> out;
  std::vector<std::string> f;
  while (reader.next(f)) {
    const auto line = reader.line_number();
    const auto where = path.string() + ": line " + std::to_string(line) + ": ";
    if (f.size() != 5) throw InputError(where + "expected 5 fields");
    RosterEntry e;
    e.id = csv::parse_int(f[0], line);
    e.start_cell = static_cast<CellId>(csv::parse_int(f[1], line));
    e.shift_start = csv::parse_double(f[2], line);
    e.shift_end = csv::parse_double(f[3], line);
    const auto managed = csv::parse_int(f[4], line);
    if (managed != 0 && managed != 1) throw InputError(where + "managed must be 0 or 1");
    e.managed = managed == 1;
    if (!grid.contains(e.start_cell)) throw InputError(where + "start cell outside the grid");
    if (e.shift_end < e.shift_start) throw InputError(where + "shift ends before it starts");
    out.push_back(e);
  }
  std::sort(out.begin(), out.end(), [](const RosterEntry& a, const RosterEntry& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].id == out[i - 1].id) throw InputError(path.string() + ": duplicate driver id");
  }
  return out;
}

void write_roster_csv(const std::filesystem::path& path, std::span<const RosterEntry> roster) {
  auto out = csv::open_output(path);
  csv::write_row(out, {"driver_id", "start_cell", "shift_start_s", "shift_end_s", "managed"});
  for (const auto& e : roster) {
    csv::write_row(out, {std::to_string(e.id), std::to_string(e.start_cell), csv::format_double(e.shift_start),
                         csv::format_double(e.shift_end), e.managed ? "1" : "0"});
  }
}

}  // namespace v1d3
