#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "support.hpp"
#include "v1d3/reposition.hpp"
#include "v1d3/rng.hpp"

using namespace v1d3;

namespace {

std::vector<Driver> idle_fleet(int n, CellId cell, Seconds idle_since = 0.0) {
  std::vector<Driver> out;
  for (int i = 0; i < n; ++i) {
    Driver d;
    d.id = i;
    d.state = {cell, 0.0, std::nullopt};
    d.status = DriverStatus::idle;
    d.idle_since = idle_since;
    out.push_back(d);
  }
  return out;
}

constexpr Seconds kLate = 10000.0;  // well past the idle threshold

}  // namespace

TEST_CASE("candidate sets") {
  EngineConfig cfg;
  GridMap grid;
  const auto mid = reposition_candidates({grid.cell_at(10, 10), 50.0, std::nullopt}, cfg, grid);
  REQUIRE(mid.candidates.size() == 25);
  CHECK(mid.includes_origin);
  CHECK(mid.candidates[0].cell == grid.cell_at(10, 10));
  CHECK(mid.candidates[0].dt == 0.0);
  for (std::size_t i = 1; i < mid.candidates.size(); ++i) {
    const auto& c = mid.candidates[i];
    CHECK(chebyshev_distance(c.cell, grid.cell_at(10, 10), grid) <= 2);
    CHECK(c.dt == travel_time(c.cell, grid.cell_at(10, 10), grid));
    if (i > 1) CHECK(c.cell > mid.candidates[i - 1].cell);
  }
  CHECK(reposition_candidates({0, 0.0, std::nullopt}, cfg, grid).candidates.size() == 9);
  CHECK_THROWS_AS(reposition_candidates({-3, 0.0, std::nullopt}, cfg, grid), InputError);
}

TEST_CASE("softmax examples") {
  CHECK(softmax(std::vector<double>{1.5, 1.5}) == std::vector<double>{0.5, 0.5});
  const auto p = softmax(std::vector<double>{std::log(2.0), 0.0});
  CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto big = softmax(std::vector<double>{1000.0, 0.0, -1000.0});
  CHECK(big[0] == 1.0);
  for (double x : big) CHECK(std::isfinite(x));
  CHECK_THROWS_AS(softmax(std::vector<double>{}), InputError);
}

TEST_CASE("distribution properties") {
  EngineConfig cfg;
  GridMap grid;
  const SpatioTemporalState origin{grid.cell_at(6, 6), 0.0, std::nullopt};
  const auto cands = reposition_candidates(origin, cfg, grid);

  SUBCASE("zero value is uniform") {
    const auto v = OnlineValue::tabular(grid.cell_count(), 0.025);
    for (double x : reposition_distribution(cands, v, cfg)) CHECK(x == doctest::Approx(1.0 / 25).epsilon(1e-14));
  }

  Rng rng(4, "values");
  auto v = OnlineValue::tabular(grid.cell_count(), 0.025);
  for (CellId c = 0; c < grid.cell_count(); ++c) v.table().set(c, 0, rng.uniform(-2.0, 2.0));
  const auto base = reposition_distribution(cands, v, cfg);

  SUBCASE("sums to one") {
    double s = 0.0;
    for (double x : base) s += x;
    CHECK(std::fabs(s - 1.0) <= 1e-9);
  }
  SUBCASE("shift invariance of the logits") {
    auto logits = discounted_values(cands, v, cfg);
    const auto p1 = softmax(logits);
    for (auto& x : logits) x += 37.5;
    const auto p2 = softmax(logits);
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-12));
  }
  SUBCASE("raising one candidate raises only its share") {
    const CellId pick = cands.candidates[7].cell;
    auto w = v;
    w.table().set(pick, 0, v.table().at(pick) + 0.5);
    const auto p = reposition_distribution(cands, w, cfg);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (i == 7) CHECK(p[i] > base[i]);
      else CHECK(p[i] < base[i]);
    }
  }
  SUBCASE("less discounting favours valuable distant cells") {
    auto w = OnlineValue::tabular(grid.cell_count(), 0.025);
    for (const auto& c : cands.candidates) w.table().set(c.cell, 0, c.dt > 0.0 ? 3.0 : 1.0);
    EngineConfig steep = cfg, flat = cfg;
    steep.gamma = 0.5;
    flat.gamma = 0.99;
    const auto ps = reposition_distribution(cands, w, steep), pf = reposition_distribution(cands, w, flat);
    double far_s = 0.0, far_f = 0.0;
    for (std::size_t i = 1; i < ps.size(); ++i) {
      far_s += ps[i];
      far_f += pf[i];
    }
    CHECK(far_f >= far_s);
  }
  SUBCASE("value scale divides the logits") {
    EngineConfig scaled = cfg;
    scaled.reposition_value_scale = 4.0;
    const auto a = discounted_values(cands, v, cfg), b = discounted_values(cands, v, scaled);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i] / 4.0).epsilon(1e-14));
  }
}

TEST_CASE("qualifying drivers") {
  EngineConfig cfg;
  auto fleet = idle_fleet(4, 5);
  fleet[0].idle_since = 1000.0;
  fleet[1].status = DriverStatus::on_trip;
  fleet[2].idle_since = 1000.0 - 300.0;
  fleet[3].idle_since = 1000.0 - 299.0;
  const auto q = qualifying_drivers(fleet, 1000.0, cfg);
  REQUIRE(q.size() == 1);
  CHECK(q[0]->id == 2);
}

TEST_CASE("sampled repositioning") {
  EngineConfig cfg;
  GridMap grid;
  const CellId origin = grid.cell_at(8, 8);
  const auto cands = reposition_candidates({origin, 0.0, std::nullopt}, cfg, grid);
  Rng rng(2, "reposition");

  SUBCASE("nobody qualifies") {
    const auto v = OnlineValue::tabular(grid.cell_count(), 0.025);
    CHECK(sample_reposition(idle_fleet(5, origin, kLate - 10.0), kLate, v, cfg, grid, rng).empty());
  }
  SUBCASE("a value spike decides the move") {
    auto v = OnlineValue::tabular(grid.cell_count(), 0.025);
    const CellId spike = grid.cell_at(9, 9);
    v.table().set(spike, 0, 50.0);
    const auto moves = sample_reposition(idle_fleet(1000, origin), kLate, v, cfg, grid, rng);
    int hits = 0;
    for (const auto& m : moves) hits += m.to == spike;
    CHECK(hits >= 990);
  }
  SUBCASE("frequencies follow the distribution") {
    auto v = OnlineValue::tabular(grid.cell_count(), 0.025);
    Rng values(9, "values");
    for (CellId c = 0; c < grid.cell_count(); ++c) v.table().set(c, 0, values.uniform(-1.5, 1.5));
    const auto p = reposition_distribution(cands, v, cfg);
    const int n = 10000;
    const auto moves = sample_reposition(idle_fleet(n, origin), kLate, v, cfg, grid, rng);
    REQUIRE(moves.size() == static_cast<std::size_t>(n));
    std::map<CellId, int> counts;
    for (const auto& m : moves) {
      CHECK(m.from == origin);
      ++counts[m.to];
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(test::within_sigma(counts[cands.candidates[i].cell] / static_cast<double>(n), p[i], n));
    }
  }
  SUBCASE("moves come out in driver-id order") {
    auto fleet = idle_fleet(6, origin);
    std::reverse(fleet.begin(), fleet.end());
    const auto v = OnlineValue::tabular(grid.cell_count(), 0.025);
    const auto moves = sample_reposition(fleet, kLate, v, cfg, grid, rng);
    for (std::size_t i = 0; i < moves.size(); ++i) CHECK(moves[i].driver == static_cast<DriverId>(i));
  }
}

TEST_CASE("greedy repositioning") {
  EngineConfig cfg;
  GridMap grid;
  const CellId origin = grid.cell_at(8, 8);
  Rng rng(3, "greedy");

  SUBCASE("unique maximum") {
    auto v = OnlineValue::tabular(grid.cell_count(), 0.025);
    v.table().set(grid.cell_at(7, 9), 0, 1.0);
    for (const auto& m : greedy_reposition(idle_fleet(50, origin), kLate, v, cfg, grid, rng)) {
      CHECK(m.to == grid.cell_at(7, 9));
    }
  }
  SUBCASE("two tied maxima split evenly") {
    auto v = OnlineValue::tabular(grid.cell_count(), 0.025);
    v.table().set(grid.cell_at(7, 7), 0, 1.0);
    v.table().set(grid.cell_at(9, 9), 0, 1.0);
    const int n = 1000;
    int first = 0;
    for (const auto& m : greedy_reposition(idle_fleet(n, origin), kLate, v, cfg, grid, rng)) {
      CHECK((m.to == grid.cell_at(7, 7) || m.to == grid.cell_at(9, 9)));
      first += m.to == grid.cell_at(7, 7);
    }
    CHECK(test::within_sigma(first / static_cast<double>(n), 0.5, n));
  }
  SUBCASE("origin dominates") {
    auto v = OnlineValue::tabular(grid.cell_count(), 0.025);
    for (CellId c : cells_within(origin, 2, grid)) v.table().set(c, 0, 1.0);
    for (const auto& m : greedy_reposition(idle_fleet(20, origin), kLate, v, cfg, grid, rng)) {
      CHECK(m.to == origin);
    }
  }
}

TEST_CASE("expert matrix") {
  EngineConfig cfg;
  GridMap grid;
  const CellId origin = grid.cell_at(4, 4);
  const Seconds start = 8 * 3600.0;  // plus kLate puts the drivers in hour 10
  Rng rng(6, "expert");

  SUBCASE("degenerate row") {
    ExpertMatrix m;
    m.set_row(10, origin, {{grid.cell_at(5, 5), 1.0}});
    for (const auto& mv : expert_reposition(idle_fleet(100, origin), kLate, start, m, cfg, grid, rng)) {
      CHECK(mv.to == grid.cell_at(5, 5));
    }
  }
  SUBCASE("uniform over four cells") {
    ExpertMatrix m;
    const std::vector<CellId> four = {origin, origin + 1, origin + 20, origin + 21};
    ExpertMatrix::Row row;
    for (CellId c : four) row.emplace_back(c, 0.25);
    m.set_row(10, origin, row);
    const int n = 10000;
    std::map<CellId, int> counts;
    for (const auto& mv : expert_reposition(idle_fleet(n, origin), kLate, start, m, cfg, grid, rng)) ++counts[mv.to];
    for (CellId c : four) CHECK(test::within_sigma(counts[c] / static_cast<double>(n), 0.25, n));
  }
  SUBCASE("missing rows fall back to neighbours and are logged") {
    ExpertMatrix m;
    std::vector<std::string> log;
    const auto moves = expert_reposition(idle_fleet(30, origin), kLate, start, m, cfg, grid, rng, &log);
    CHECK(log.size() == 30);
    for (const auto& mv : moves) CHECK(chebyshev_distance(mv.to, origin, grid) == 1);
  }
  SUBCASE("validation") {
    ExpertMatrix m;
    CHECK_THROWS_AS(m.set_row(8, origin, {{1, 0.5}, {2, 0.48}}), InputError);
    CHECK_THROWS_AS(m.set_row(24, origin, {{1, 1.0}}), InputError);
    CHECK_THROWS_AS(m.set_row(3, origin, {{1, 1.5}, {2, -0.5}}), InputError);
    test::TempDir dir("expert");
    test::write_file(dir / "m.csv", "hour,origin_cell,destination_cell,probability\n3,0,0,0.5\n3,0,1,0.48\n");
    CHECK_THROWS_AS(ExpertMatrix::load(dir / "m.csv", grid), InputError);
    test::write_file(dir / "g.csv", "hour,origin_cell,destination_cell,probability\n3,0,999,1\n");
    CHECK_THROWS_AS(ExpertMatrix::load(dir / "g.csv", grid), InputError);
  }
  SUBCASE("estimation and file round trip") {
    std::vector<ObservedMove> moves;
    for (int i = 0; i < 6; ++i) moves.push_back({8 * 3600.0 + i, origin, origin + 1});
    moves.push_back({8 * 3600.0, origin, origin + 100});  // too far, ignored
    moves.push_back({86400.0 + 9 * 3600.0, origin, origin});
    const auto m = estimate_expert_matrix(moves, grid);
    CHECK(m.row_count() == 2);
    const auto* row = m.row(8, origin);
    REQUIRE(row != nullptr);
    CHECK(row->size() == 25);
    double total = 0.0, top = 0.0;
    for (const auto& [c, p] : *row) {
      total += p;
      if (c == origin + 1) top = p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(top == doctest::Approx(7.0 / 31.0).epsilon(1e-14));
    CHECK(m.row(9, origin) != nullptr);

    test::TempDir dir("expert-rt");
    m.save(dir / "m.csv");
    CHECK(ExpertMatrix::load(dir / "m.csv", grid) == m);
  }
}

TEST_CASE("reposition dump") {
  std::ostringstream out;
  write_reposition_header(out);
  const std::vector<RepositionMove> moves = {{7, 3, 4}};
  write_repositions(out, 150, moves, "v1d3");
  CHECK(out.str() == "round,driver_id,from_cell,to_cell,policy\n150,7,3,4,v1d3\n");
}
