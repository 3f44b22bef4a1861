#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "v1d3/csv.hpp"
#include "v1d3/offline_ope.hpp"
#include "v1d3/pipeline.hpp"
#include "v1d3/rng.hpp"

using namespace v1d3;

namespace {

NetworkShape toy_shape() {
  NetworkShape shape;
  shape.embedding.n_quantizers = 3;
  shape.embedding.memory_rows = 512;
  shape.embedding.embed_dim = 8;
  shape.embedding.grid_width = 5;
  shape.embedding.tile_cells = 1.0;
  shape.embedding.time_tile_s = 3600.0;
  shape.hidden = {16, 16};
  shape.uses_time_input = true;
  return shape;
}

TrajectoryRecord rec(const std::string& ep, DriverId d, CellId from, Seconds t, OptionKind kind, double r,
                     CellId to, Seconds dur) {
  return TrajectoryRecord{ep, d, from, t, kind, r, to, dur};
}

OpeTransition tr(CellId from, Seconds t, double reward, CellId to, int k) {
  const Seconds end = t + 600.0 * k;
  return OpeTransition{SpatioTemporalState{from, t, t}, reward, SpatioTemporalState{to, end, end}, k, false};
}

// Trips paying 10 from cell 0 and empty idling at cell 24, at times spread over the day.
TrajectoryDataset toy_city(bool evening_only) {
  TrajectoryDataset d;
  for (int h = 6; h < 22; ++h) {
    const Seconds t = h * 3600.0;
    const bool pays = !evening_only || h >= 18;
    d.transitions.push_back(tr(0, t, pays ? 10.0 : 0.0, 0, 1));
    d.transitions.push_back(tr(24, t, 0.0, 24, 1));
  }
  return d;
}

OpeSettings toy_settings(int iters, double lambda = 0.0) {
  OpeSettings s;
  s.lr = 3e-3;
  s.lambda = lambda;
  s.batch_size = 16;
  s.max_iters = iters;
  s.target_sync = 20;
  s.gamma = 0.5;
  s.seed = 4;
  return s;
}

ValueNetwork init_net(std::uint64_t seed) {
  ValueNetwork net(toy_shape());
  net.randomize(seed);
  return net;
}

}  // namespace

TEST_CASE("trajectory log round trip") {
  test::TempDir dir("traj");
  const std::vector<TrajectoryRecord> recs = {
      rec("day-0", 1, 3, 100.5, OptionKind::trip, 2.75, 9, 400.0),
      rec("day-0", 1, 9, 500.5, OptionKind::idle, 0.0, 9, 30.0),
      rec("day-1", 2, 0, 7.0, OptionKind::trip, 1.0 / 3.0, 4, 1.0),
  };
  write_trajectory_log(dir / "t.csv", recs);
  const auto back = read_trajectory_log(dir / "t.csv");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].episode_id == recs[i].episode_id);
    CHECK(back[i].driver_id == recs[i].driver_id);
    CHECK(back[i].abs_time == recs[i].abs_time);
    CHECK(back[i].reward == recs[i].reward);
    CHECK(back[i].kind == recs[i].kind);
    CHECK(back[i].duration == recs[i].duration);
  }
}

TEST_CASE("malformed trajectory lines name their line") {
  test::TempDir dir("bad");
  const std::string header = "episode_id,driver_id,from_cell,abs_time_s,kind,reward,to_cell,duration_s\n";
  const std::string good = "e,1,2,10,trip,1.5,3,60\n";
  auto expect_line = [&](const std::string& body, const std::string& line) {
    test::write_file(dir / "x.csv", header + good + body);
    try {
      read_trajectory_log(dir / "x.csv");
      FAIL("expected an error");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find("line " + line) != std::string::npos);
    }
  };
  expect_line("e,1,2,10,trip,abc,3,60\n", "3");
  expect_line("e,1,2,10,walk,1,3,60\n", "3");
  expect_line("e,1,2,10,trip,1,3\n", "3");
  expect_line("e,1,2,10,idle,5,3,60\n", "3");
  expect_line("e,1,2,10,trip,1,3,0\n", "3");
  test::write_file(dir / "h.csv", "episode,driver\n");
  CHECK_THROWS_AS(read_trajectory_log(dir / "h.csv"), InputError);
}

TEST_CASE("transition extraction") {
  EngineConfig cfg;
  SUBCASE("one trip, one transition") {
    const std::vector<TrajectoryRecord> r = {rec("a", 1, 0, 100.0, OptionKind::trip, 3.0, 5, 700.0)};
    const auto d = extract_transitions(group_episodes(r), cfg);
    REQUIRE(d.transitions.size() == 1);
    CHECK(d.transitions[0].k == 2);
    CHECK(d.transitions[0].reward == 3.0);
    CHECK(d.transitions[0].to.cell == 5);
    CHECK(d.transitions[0].to.abs_time.value() == 800.0);
    CHECK(d.source_episodes == std::vector<std::string>{"a"});
  }
  SUBCASE("three trips and two idle gaps") {
    std::vector<TrajectoryRecord> r;
    Seconds t = 1000.0;
    for (int i = 0; i < 3; ++i) {
      r.push_back(rec("a", 7, i, t, OptionKind::trip, 1.0 + i, i + 1, 300.0));
      t += 300.0;
      if (i < 2) {
        r.push_back(rec("a", 7, i + 1, t, OptionKind::idle, 0.0, i + 1, 50.0));
        t += 50.0;
      }
    }
    const auto d = extract_transitions(group_episodes(r), cfg);
    CHECK(d.transitions.size() == 5);
    for (const auto& x : d.transitions) {
      CHECK(x.k >= 1);
      CHECK(x.from.abs_time.has_value());
      CHECK(x.to.abs_time.has_value());
    }
  }
  SUBCASE("empty input") {
    const auto d = extract_transitions({}, cfg);
    CHECK(d.transitions.empty());
    CHECK(d.rejected.empty());
  }
  SUBCASE("decreasing timestamps reject that driver-episode only") {
    const std::vector<TrajectoryRecord> r = {
        rec("a", 1, 0, 500.0, OptionKind::trip, 1.0, 1, 60.0),
        rec("a", 1, 1, 400.0, OptionKind::trip, 1.0, 2, 60.0),
        rec("a", 2, 0, 100.0, OptionKind::trip, 1.0, 1, 60.0),
    };
    const auto d = extract_transitions(group_episodes(r), cfg);
    CHECK(d.transitions.size() == 1);
    REQUIRE(d.rejected.size() == 1);
    CHECK(d.rejected[0].find("driver 1") != std::string::npos);
  }
  SUBCASE("options reaching the day end are terminal") {
    const std::vector<TrajectoryRecord> r = {rec("a", 1, 0, 900.0, OptionKind::trip, 1.0, 1, 100.0),
                                             rec("a", 1, 1, 1000.0, OptionKind::idle, 0.0, 1, 50.0)};
    const auto d = extract_transitions(group_episodes(r), cfg, 1000.0);
    CHECK(d.transitions[0].terminal);
    CHECK(d.transitions[1].terminal);
    const auto open = extract_transitions(group_episodes(r), cfg, 2000.0);
    CHECK_FALSE(open.transitions[1].terminal);
  }
  SUBCASE("grouping keeps first-appearance order") {
    const std::vector<TrajectoryRecord> r = {rec("b", 2, 0, 1.0, OptionKind::idle, 0.0, 0, 1.0),
                                             rec("a", 1, 0, 1.0, OptionKind::idle, 0.0, 0, 1.0),
                                             rec("b", 2, 0, 2.0, OptionKind::idle, 0.0, 0, 1.0)};
    const auto g = group_episodes(r);
    REQUIRE(g.size() == 2);
    CHECK(g[0].episode_id == "b");
    CHECK(g[0].options.size() == 2);
  }
}

TEST_CASE("discount units") {
  EngineConfig cfg;
  CHECK(discount_units(1.0, cfg) == 1);
  CHECK(discount_units(600.0, cfg) == 1);
  CHECK(discount_units(601.0, cfg) == 2);
  CHECK(discount_units(1800.0, cfg) == 3);
}

TEST_CASE("smdp reward") {
  CHECK(smdp_reward(7.0, 1, 0.9) == 7.0);
  CHECK(smdp_reward(10.0, 2, 0.9) == doctest::Approx(9.5).epsilon(1e-15));
  CHECK(smdp_reward(10.0, 8, 1.0) == 10.0);
  CHECK_THROWS_AS(smdp_reward(1.0, 0, 0.9), InputError);
  for (double R : {0.1, 1.0, 10.0, 123.0}) {
    double prev = INFINITY;
    for (int k = 1; k <= 50; ++k) {
      const double got = smdp_reward(R, k, 0.9);
      const double want = test::geometric_reward(R, k, 0.9);
      CHECK(std::fabs(got - want) <= 1e-12 * std::fabs(want));
      CHECK(got < prev);
      prev = got;
    }
  }
}

TEST_CASE("ope step examples") {
  SUBCASE("zero net, single transition") {
    ValueNetwork net(toy_shape());
    OpeTrainer trainer(net, toy_settings(1));
    const std::vector<OpeTransition> batch = {tr(3, 30000.0, 10.0, 4, 1)};
    NetworkGradient g;
    CHECK(trainer.loss_and_gradient(batch, g) == 100.0);
    CHECK(trainer.step(batch) == 100.0);
    CHECK(trainer.iterations() == 1);
  }
  SUBCASE("targets already met") {
    auto settings = toy_settings(1);
    settings.gamma = 0.9;
    OpeTrainer trainer(init_net(3), settings);
    std::vector<OpeTransition> batch;
    Rng rng(8, "fixed");
    for (int i = 0; i < 8; ++i) {
      const int k = 1 + static_cast<int>(rng.below(4));
      auto t = tr(static_cast<CellId>(rng.below(25)), 30000.0 + 1000.0 * i, 0.0,
                  static_cast<CellId>(rng.below(25)), k);
      const double needed = trainer.net().value(t.from) - std::pow(0.9, k) * trainer.target().value(t.to);
      t.reward = needed / smdp_reward(1.0, k, 0.9);
      batch.push_back(t);
    }
    NetworkGradient g;
    const double loss = trainer.loss_and_gradient(batch, g);
    CHECK(loss < 1e-24);
    for (double x : flatten(g, trainer.net())) CHECK(std::fabs(x) < 1e-11);
  }
  SUBCASE("non-finite loss aborts") {
    OpeTrainer trainer(init_net(3), toy_settings(1));
    const std::vector<OpeTransition> batch = {tr(3, 30000.0, 1e300, 4, 1)};
    CHECK_THROWS_AS(trainer.step(batch), DivergenceError);
    CHECK_THROWS_AS(trainer.step(std::span<const OpeTransition>{}), InputError);
  }
  SUBCASE("time-free networks are refused") {
    auto shape = toy_shape();
    shape.uses_time_input = false;
    shape.embedding.time_tile_s = 0.0;
    CHECK_THROWS_AS(OpeTrainer(ValueNetwork(shape), toy_settings(1)), ConfigError);
  }
}

TEST_CASE("ope loss gradient matches central differences") {
  Rng rng(12, "fd");
  for (double lambda : {0.0, 1e-2}) {
    auto settings = toy_settings(1, lambda);
    settings.gamma = 0.9;
    OpeTrainer trainer(init_net(21), settings);
    for (auto& w : trainer.net().dense()) w += 0.05 * rng.normal();
    std::vector<OpeTransition> batch;
    for (int i = 0; i < 6; ++i) {
      batch.push_back(tr(static_cast<CellId>(rng.below(25)), rng.uniform(20000.0, 80000.0), rng.uniform(0.0, 5.0),
                         static_cast<CellId>(rng.below(25)), 1 + static_cast<int>(rng.below(3))));
    }
    NetworkGradient g;
    trainer.loss_and_gradient(batch, g);
    const auto analytic = flatten(g, trainer.net());
    const double h = 1e-6;
    double diff = 0.0, norm = 0.0;
    NetworkGradient scratch;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double p0 = trainer.net().param(i);
      trainer.net().set_param(i, p0 + h);
      const double up = trainer.loss_and_gradient(batch, scratch);
      trainer.net().set_param(i, p0 - h);
      const double down = trainer.loss_and_gradient(batch, scratch);
      trainer.net().set_param(i, p0);
      const double fd = (up - down) / (2 * h);
      diff += (fd - analytic[i]) * (fd - analytic[i]);
      norm += analytic[i] * analytic[i];
    }
    CHECK(std::sqrt(diff) <= 1e-4 * std::sqrt(norm));
  }
}

TEST_CASE("training on a toy city") {
  const auto data = toy_city(false);
  OpeTrainer trainer(init_net(5), toy_settings(1500));
  std::vector<double> curve;
  train_ope(data, trainer, &curve);
  REQUIRE(curve.size() == 1500);
  for (double l : curve) CHECK(std::isfinite(l));
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 150; ++i) {
    head += curve[i];
    tail += curve[1350 + i];
  }
  CHECK(tail < head);
  const auto& net = trainer.net();
  for (int h = 7; h < 12; ++h) {
    const Seconds t = h * 3600.0;
    CHECK(net.value({1, t, t}) > net.value({24, t, t}));
  }

  SUBCASE("same seed, same parameters") {
    OpeTrainer again(init_net(5), toy_settings(1500));
    train_ope(data, again);
    CHECK(again.net() == trainer.net());
  }
}

TEST_CASE("slices") {
  const auto data = toy_city(true);
  OpeTrainer trainer(init_net(6), toy_settings(1500));
  train_ope(data, trainer);
  const auto& net = trainer.net();
  const auto a = slice(net, 70000.0, 25), b = slice(net, 70000.0, 25);
  CHECK(a.by_cell == b.by_cell);
  for (CellId c = 0; c < 25; ++c) CHECK(a.at(c) == net.value({c, 0.0, 70000.0}));
  const auto morning = slice(net, 8 * 3600.0, 25), evening = slice(net, 19 * 3600.0, 25);
  CHECK(morning.by_cell != evening.by_cell);
  CHECK(evening.at(0) > morning.at(0));
  CHECK(slice(net, 86400.0 + 5.0, 25).abs_time == 5.0);

  auto shape = toy_shape();
  shape.uses_time_input = false;
  CHECK_THROWS_AS(slice(ValueNetwork(shape), 0.0, 25), InputError);
}

TEST_CASE("lipschitz regularization shrinks the penalty") {
  const auto data = toy_city(false);
  OpeTrainer plain(init_net(9), toy_settings(800, 0.0));
  OpeTrainer reg(init_net(9), toy_settings(800, 1e-2));
  train_ope(data, plain);
  train_ope(data, reg);
  CHECK(lipschitz_penalty(reg.net()) < lipschitz_penalty(plain.net()));
}

TEST_CASE("zero iterations keep the initial network") {
  const auto scenario = test::small_scenario();
  EngineConfig cfg;
  cfg.ope_iters = 0;
  std::vector<double> curve;
  const auto net = train_offline_value({}, scenario, cfg, 13, &curve);
  ValueNetwork expect(default_ope_shape(scenario.grid));
  expect.randomize(derive_seed(13, "init"));
  CHECK(net == expect);
  CHECK(curve.empty());

  OpeTrainer trainer(init_net(1), toy_settings(5));
  CHECK_THROWS_AS(train_ope(TrajectoryDataset{}, trainer), InputError);
}

TEST_CASE("loss curve file") {
  test::TempDir dir("loss");
  const std::vector<double> losses = {3.5, 2.25, 1.0 / 3.0};
  write_loss_curve(dir / "l.csv", losses);
  CHECK(test::read_file(dir / "l.csv") == "step,loss\n1,3.5\n2,2.25\n3," + csv::format_double(1.0 / 3.0) + "\n");
}
