#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "v1d3/online_engine.hpp"
#include "v1d3/rng.hpp"

using namespace v1d3;

namespace {

SpatioTemporalState at(CellId c, Seconds clock = 0.0) { return {c, clock, std::nullopt}; }

MatchedTransition matched(DriverId d, CellId from, CellId to, double r, Seconds dt) {
  return MatchedTransition{d, 100 + d, at(from), at(to, dt), r, dt};
}

IdleTransition idle(DriverId d, CellId from, CellId to, Seconds dt = 2.0) {
  return IdleTransition{d, at(from), at(to, dt), dt};
}

NetworkShape small_net_shape(bool with_time) {
  NetworkShape shape;
  shape.embedding.n_quantizers = 3;
  shape.embedding.memory_rows = 64;
  shape.embedding.embed_dim = 4;
  shape.embedding.grid_width = 4;
  shape.embedding.tile_cells = 1.0;
  shape.embedding.time_tile_s = with_time ? 1800.0 : 0.0;
  shape.hidden = {3, 3};
  shape.uses_time_input = with_time;
  return shape;
}

// Offline net that evaluates to `c` everywhere.
ValueNetwork constant_offline(double c) {
  ValueNetwork net(small_net_shape(true));
  net.dense()[net.layers().back().b_offset] = c;
  return net;
}

}  // namespace

TEST_CASE("td error examples") {
  EngineConfig cfg;
  SUBCASE("zero value, matched reward 10") {
    auto v = OnlineValue::tabular(16, 0.025);
    DispatchRoundOutcome o;
    o.matched.push_back(matched(1, 0, 5, 10.0, 600.0));
    const auto d = td_errors(o, v, cfg);
    CHECK(d.matched == std::vector<double>{10.0});
  }
  SUBCASE("idle driver leaving value behind") {
    auto v = OnlineValue::tabular(16, 0.025);
    v.table().set(3, 0, 1.0);
    DispatchRoundOutcome o;
    o.idle.push_back(idle(1, 3, 4));
    CHECK(td_errors(o, v, cfg).idle[0] == -1.0);
  }
  SUBCASE("one discount unit") {
    auto v = OnlineValue::tabular(16, 0.025);
    v.table().set(5, 0, 5.0);
    v.table().set(0, 0, 3.0);
    DispatchRoundOutcome o;
    o.matched.push_back(matched(1, 0, 5, 10.0, 600.0));
    CHECK(td_errors(o, v, cfg).matched[0] == doctest::Approx(11.5).epsilon(1e-15));
  }
}

TEST_CASE("td errors decompose over outcomes") {
  EngineConfig cfg;
  Rng rng(3, "decomp");
  auto v = OnlineValue::tabular(16, 0.025);
  for (CellId c = 0; c < 16; ++c) v.table().set(c, 0, rng.uniform(-3.0, 3.0));
  DispatchRoundOutcome a, b, ab;
  for (int i = 0; i < 10; ++i) {
    auto& dst = i % 2 ? a : b;
    const auto m = matched(i, static_cast<CellId>(rng.below(16)), static_cast<CellId>(rng.below(16)),
                           rng.uniform(0.0, 5.0), rng.uniform(60.0, 1800.0));
    const auto id = idle(100 + i, static_cast<CellId>(rng.below(16)), static_cast<CellId>(rng.below(16)));
    dst.matched.push_back(m);
    dst.idle.push_back(id);
  }
  ab = a;
  ab.matched.insert(ab.matched.end(), b.matched.begin(), b.matched.end());
  ab.idle.insert(ab.idle.end(), b.idle.begin(), b.idle.end());
  const auto da = td_errors(a, v, cfg), db = td_errors(b, v, cfg), dab = td_errors(ab, v, cfg);
  auto cat = da.matched;
  cat.insert(cat.end(), db.matched.begin(), db.matched.end());
  CHECK(dab.matched == cat);
  cat = da.idle;
  cat.insert(cat.end(), db.idle.begin(), db.idle.end());
  CHECK(dab.idle == cat);
}

TEST_CASE("tabular online update") {
  EngineConfig cfg;
  SUBCASE("hand gradient") {
    auto v = OnlineValue::tabular(16, 0.025);
    v.table().set(3, 0, 1.0);
    DispatchRoundOutcome o;
    o.idle.push_back(idle(1, 3, 4));
    const double loss = online_update(o, v, cfg);
    CHECK(loss == 1.0);
    CHECK(v.table().at(3) == doctest::Approx(0.95).epsilon(1e-15));
    CHECK(v.table().at(4) == 0.0);
  }
  SUBCASE("zero errors leave the table alone") {
    auto v = OnlineValue::tabular(16, 0.025);
    DispatchRoundOutcome o;
    o.idle.push_back(idle(1, 3, 4));
    o.idle.push_back(idle(2, 7, 7));
    const auto before = v;
    CHECK(online_update(o, v, cfg) == 0.0);
    CHECK(v == before);
  }
  SUBCASE("empty outcome is a no-op") {
    auto v = OnlineValue::tabular(16, 0.025);
    v.table().set(1, 0, 2.0);
    const auto before = v;
    CHECK(online_update(DispatchRoundOutcome{}, v, cfg) == 0.0);
    CHECK(v == before);
  }
  SUBCASE("returned loss is the sum of squared errors") {
    Rng rng(9, "loss");
    auto v = OnlineValue::tabular(16, 0.025);
    for (CellId c = 0; c < 16; ++c) v.table().set(c, 0, rng.uniform(-2.0, 2.0));
    DispatchRoundOutcome o;
    for (int i = 0; i < 12; ++i) {
      o.matched.push_back(matched(i, static_cast<CellId>(rng.below(16)), static_cast<CellId>(rng.below(16)), 3.0, 900.0));
      o.idle.push_back(idle(50 + i, static_cast<CellId>(rng.below(16)), static_cast<CellId>(rng.below(16))));
    }
    const double expect = td_errors(o, v, cfg).sum_squares();
    CHECK(std::fabs(online_update(o, v, cfg) - expect) <= 1e-12 * std::max(1.0, expect));
  }
  SUBCASE("a rich cell gains value") {
    auto v = OnlineValue::tabular(16, 0.025);
    DispatchRoundOutcome o;
    for (int i = 0; i < 5; ++i) o.matched.push_back(matched(i, 6, 9, 20.0, 600.0));
    online_update(o, v, cfg);
    CHECK(v.table().at(6) > 0.0);
  }
}

TEST_CASE("one tabular step lowers the loss under frozen targets") {
  EngineConfig cfg;
  Rng rng(17, "descent");
  for (int trial = 0; trial < 200; ++trial) {
    auto v = OnlineValue::tabular(9, cfg.online_lr_alpha);
    for (CellId c = 0; c < 9; ++c) v.table().set(c, 0, rng.uniform(-5.0, 5.0));
    DispatchRoundOutcome o;
    const int n = 1 + static_cast<int>(rng.below(30));  // at most 30 drivers per key, below 1 / alpha
    for (int i = 0; i < n; ++i) {
      const auto from = static_cast<CellId>(rng.below(9)), to = static_cast<CellId>(rng.below(9));
      if (rng.bernoulli(0.5)) {
        o.matched.push_back(matched(i, from, to, rng.uniform(0.0, 10.0), rng.uniform(100.0, 2000.0)));
      } else {
        o.idle.push_back(idle(i, from, to));
      }
    }
    const auto old = v;
    const double before = online_update(o, v, cfg);
    double after = 0.0;
    for (const auto& m : o.matched) {
      const double d = m.reward + discount_factor(m.dt, cfg) * old.value(m.s_order) - v.value(m.s_driver);
      after += d * d;
    }
    for (const auto& i : o.idle) {
      const double d = discount_factor(i.dt, cfg) * old.value(i.s_idle) - v.value(i.s_driver);
      after += d * d;
    }
    if (before > 1e-12) CHECK(after < before);
  }
}

TEST_CASE("network online update") {
  EngineConfig cfg;
  ValueNetwork net(small_net_shape(false));
  net.randomize(4);
  auto v = OnlineValue::network(net, 0.01);
  DispatchRoundOutcome o;
  o.matched.push_back(matched(1, 2, 9, 4.0, 700.0));
  o.idle.push_back(idle(2, 5, 5));

  SUBCASE("gradient against central differences") {
    NetworkGradient g;
    online_loss_and_gradient(o, v, cfg, g);
    const auto analytic = flatten(g, v.net());
    const double h = 1e-6;
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      auto up = v, down = v;
      up.net().set_param(i, v.net().param(i) + h);
      down.net().set_param(i, v.net().param(i) - h);
      const double fd = (td_errors(o, up, cfg).sum_squares() - td_errors(o, down, cfg).sum_squares()) / (2 * h);
      diff += (fd - analytic[i]) * (fd - analytic[i]);
      norm += analytic[i] * analytic[i];
    }
    CHECK(std::sqrt(diff) <= 1e-4 * std::sqrt(norm));
  }
  SUBCASE("a step syncs the shadow and lowers the loss") {
    const double before = td_errors(o, v, cfg).sum_squares();
    const auto frozen = v.target().frozen();
    CHECK(online_update(o, v, cfg) == before);
    CHECK(v.target().frozen() == v.net());
    CHECK_FALSE(frozen == v.net());
    // Re-evaluate with the pre-step targets.
    double after = 0.0;
    for (const auto& m : o.matched) {
      const double d = m.reward + discount_factor(m.dt, cfg) * frozen.value(m.s_order) - v.value(m.s_driver);
      after += d * d;
    }
    for (const auto& i : o.idle) {
      const double d = discount_factor(i.dt, cfg) * frozen.value(i.s_idle) - v.value(i.s_driver);
      after += d * d;
    }
    CHECK(after < before);
  }
  CHECK_THROWS_AS(OnlineValue::network(ValueNetwork(small_net_shape(true)), 0.01), ConfigError);
}

TEST_CASE("outcome validation") {
  DispatchRoundOutcome o;
  o.matched.push_back(matched(1, 0, 1, 1.0, 100.0));
  o.idle.push_back(idle(2, 0, 0));
  CHECK_NOTHROW(o.validate());
  const std::vector<DriverId> avail = {1, 2};
  CHECK_NOTHROW(o.validate(avail));
  const std::vector<DriverId> other = {1, 3};
  CHECK_THROWS_AS(o.validate(other), InputError);
  auto dup = o;
  dup.idle.push_back(idle(1, 0, 0));
  CHECK_THROWS_AS(dup.validate(), InputError);
  auto bad = o;
  bad.idle[0].dt = 0.0;
  CHECK_THROWS_AS(bad.validate(), InputError);
}

TEST_CASE("segmentation examples") {
  const std::vector<double> step = {0, 0, 0, 10, 10, 10};
  const auto s = segment_series(step, 1);
  CHECK(s.breakpoints == std::vector<int>{3});
  CHECK(s.cost == 0.0);
  const auto oracle = test::exhaustive_segmentation(step, 1);
  CHECK(oracle.breakpoints == std::vector<int>{3});

  const std::vector<double> flat(7, 4.0);
  CHECK(segment_series(flat, 1).breakpoints == std::vector<int>{1});
  CHECK(segment_series(flat, 3).breakpoints == std::vector<int>{1, 2, 3});
  CHECK(segment_series(flat, 0).breakpoints.empty());

  CHECK_THROWS_AS(segment_series(step, 6), InputError);
  CHECK_THROWS_AS(segment_series(step, -1), InputError);
  CHECK_THROWS_AS(segment_series(std::vector<double>{1.0, NAN}, 1), InputError);
}

TEST_CASE("segmentation matches exhaustive search") {
  Rng rng(23, "segments");
  for (int trial = 0; trial < 150; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(9));
    std::vector<double> x(n);
    for (auto& v : x) v = std::floor(rng.uniform(0.0, 20.0));
    const int K = static_cast<int>(rng.below(std::min(3, n - 1) + 1));
    const auto dp = segment_series(x, K);
    const auto ex = test::exhaustive_segmentation(x, K);
    CHECK(dp.cost == doctest::Approx(ex.cost).epsilon(1e-9));
    CHECK(static_cast<int>(dp.breakpoints.size()) == K);
    if (ex.optimal_count == 1) CHECK(dp.breakpoints == ex.breakpoints);

    // Reversal mirrors the optimum.
    std::vector<double> rev(x.rbegin(), x.rend());
    const auto dr = segment_series(rev, K);
    CHECK(dr.cost == doctest::Approx(dp.cost).epsilon(1e-9));
    if (ex.optimal_count == 1) {
      std::vector<int> mirrored;
      for (auto it = dp.breakpoints.rbegin(); it != dp.breakpoints.rend(); ++it) mirrored.push_back(n - *it);
      CHECK(dr.breakpoints == mirrored);
    }
  }
}

TEST_CASE("schedules") {
  const std::vector<double> series = {1, 1, 9, 9, 9, 2, 2, 2};
  const auto with = segment_orders(series, 2, 1800.0, true);
  CHECK(with.points == std::vector<Seconds>{0.0, 3600.0, 9000.0});
  CHECK(with.K == 2);
  const auto without = segment_orders(series, 2, 1800.0, false);
  CHECK(without.points == std::vector<Seconds>{3600.0, 9000.0});
  CHECK(std::is_sorted(with.points.begin(), with.points.end()));

  CHECK(with.fires_in(3600.0, 2.0));
  CHECK(with.fires_in(3599.0, 2.0));
  CHECK_FALSE(with.fires_in(3598.0, 2.0));
  CHECK_FALSE(with.fires_in(3601.0, 2.0));

  const std::vector<Seconds> created = {-5.0, 0.0, 10.0, 1800.0, 3599.0, 3600.0, 99999.0};
  CHECK(bin_order_counts(created, 1800.0, 2) == std::vector<double>{2.0, 2.0});
}

TEST_CASE("schedule file round trip") {
  test::TempDir dir("sched");
  ScheduleTable t;
  t.bin_s = 1800.0;
  t.counts = {3, 4, 40, 41, 5};
  t.breakpoints = segment_series(t.counts, 2).breakpoints;
  write_schedule_csv(dir / "s.csv", t);
  const auto back = read_schedule_csv(dir / "s.csv");
  CHECK(back.bin_s == t.bin_s);
  CHECK(back.counts == t.counts);
  CHECK(back.breakpoints == t.breakpoints);
  CHECK(schedule_from_table(back, true).points == segment_orders(t.counts, 2, 1800.0, true).points);

  test::write_file(dir / "bad.csv", "bin_start_s,order_count,is_changepoint\n0,1,0\n1800,2,7\n");
  CHECK_THROWS_AS(read_schedule_csv(dir / "bad.csv"), InputError);
  test::write_file(dir / "first.csv", "bin_start_s,order_count,is_changepoint\n0,1,1\n");
  CHECK_THROWS_AS(read_schedule_csv(dir / "first.csv"), InputError);
}

TEST_CASE("changepoint ensemble") {
  EngineConfig cfg;
  const auto offline_net = constant_offline(5.0);
  const OfflineModel offline{&offline_net, 28800.0};
  ChangepointSchedule schedule;
  schedule.points = {0.0, 3600.0};

  SUBCASE("outside the schedule nothing changes") {
    auto v = OnlineValue::tabular(16, 0.025);
    v.table().set(2, 0, 1.25);
    const auto before = v;
    CHECK_FALSE(maybe_ensemble(100.0, v, offline, schedule, cfg));
    CHECK(v == before);
  }
  SUBCASE("omega 0 copies the slice") {
    cfg.omega = 0.0;
    auto v = OnlineValue::tabular(16, 0.025);
    v.table().set(2, 0, 1.25);
    CHECK(maybe_ensemble(3600.0, v, offline, schedule, cfg));
    for (CellId c = 0; c < 16; ++c) CHECK(v.table().at(c) == 5.0);
  }
  SUBCASE("omega 0.2 blends") {
    auto v = OnlineValue::tabular(16, 0.025);
    v.table().set(2, 0, 10.0);
    CHECK(maybe_ensemble(3599.0, v, offline, schedule, cfg));
    CHECK(v.table().at(2) == doctest::Approx(6.0).epsilon(1e-15));
    CHECK(v.table().at(3) == doctest::Approx(4.0).epsilon(1e-15));
  }
  SUBCASE("omega 1 is a no-op") {
    cfg.omega = 1.0;
    auto v = OnlineValue::tabular(16, 0.025);
    v.table().set(2, 0, 10.0);
    const auto before = v;
    CHECK(maybe_ensemble(0.0, v, offline, schedule, cfg));
    CHECK(v == before);
  }
  SUBCASE("network mode distills toward the blend") {
    ValueNetwork net(small_net_shape(false));
    net.randomize(3);
    auto v = OnlineValue::network(net, 0.01);
    EnsembleContext ctx;
    ctx.cell_count = 16;
    for (CellId c = 0; c < 16; c += 3) ctx.episode_states.push_back(at(c, 50.0));
    ctx.historical_states.push_back(at(15));
    cfg.distill_steps = 100;
    cfg.distill_lr = 1e-2;
    auto gap = [&](const OnlineValue& val) {
      double s = 0.0;
      for (CellId c = 0; c < 16; ++c) {
        const double target = cfg.omega * net.value(at(c)) + (1.0 - cfg.omega) * 5.0;
        s += (val.value(at(c)) - target) * (val.value(at(c)) - target);
      }
      return s;
    };
    const double before = gap(v);
    CHECK(maybe_ensemble(0.0, v, offline, schedule, cfg, &ctx));
    CHECK(gap(v) < before);
    CHECK(v.target().frozen() == v.net());
    CHECK_THROWS_AS(maybe_ensemble(0.0, v, offline, schedule, cfg), ConfigError);
  }
}
