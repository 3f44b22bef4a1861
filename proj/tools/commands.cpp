#include "commands.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <array>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "v1d3/config.hpp"
#include "v1d3/csv.hpp"
#include "v1d3/dispatch.hpp"
#include "v1d3/offline_ope.hpp"
#include "v1d3/pipeline.hpp"
#include "v1d3/snapshot.hpp"

namespace v1d3::cli {

EngineConfig resolve_config(const GlobalOptions& g) {
  EngineConfig cfg = g.config ? load_engine_config(*g.config) : EngineConfig{};
  apply_env_overrides(cfg);
  if (g.strict_paper) apply_strict_paper(cfg);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

std::string git_blob_sha1(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream body;
  body << in.rdbuf();
  const std::string bytes = body.str();
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';

  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest.data(), &len);
  EVP_MD_CTX_free(ctx);

  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

namespace {

std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

void prepare_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !force) throw InputError(dir.string() + " already exists (use --force to overwrite)");
  fs::create_directories(dir);
}

void prepare_file(const fs::path& file, bool force) {
  if (fs::exists(file) && !force) throw InputError(file.string() + " already exists (use --force to overwrite)");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

fs::path manifest_for(const fs::path& file) { return fs::path(file.string() + ".manifest.json"); }

struct LoadedResources {
  std::optional<ValueSnapshot> snapshot;
  std::optional<ChangepointSchedule> schedule;
  std::optional<ExpertMatrix> expert;
  std::vector<SpatioTemporalState> historical;

  EpisodeResources view() const {
    EpisodeResources r;
    if (snapshot) r.offline = &snapshot->net;
    if (schedule) r.schedule = &*schedule;
    if (expert) r.expert = &*expert;
    r.historical_states = historical;
    return r;
  }
};

void load_resources(LoadedResources& out, const ResourceArgs& a, const Scenario& scenario, const EngineConfig& cfg,
                    RunManifest& manifest) {
  if (a.snapshot) {
    out.snapshot = load_snapshot(*a.snapshot);
    if (out.snapshot->gamma != cfg.gamma || out.snapshot->discount_time_unit_s != cfg.discount_time_unit_s) {
      throw ConfigError("snapshot " + a.snapshot->string() + " was trained with gamma " +
                        csv::format_double(out.snapshot->gamma) + " and time unit " +
                        csv::format_double(out.snapshot->discount_time_unit_s) + " s; the config disagrees");
    }
    manifest.input(*a.snapshot);
  }
  if (a.schedule) {
    out.schedule = schedule_from_table(read_schedule_csv(*a.schedule), cfg.ensemble_at_start);
    manifest.input(*a.schedule);
  }
  if (a.expert) {
    out.expert = ExpertMatrix::load(*a.expert, scenario.grid);
    manifest.input(*a.expert);
  }
  if (a.trajectories) {
    const auto records = read_trajectory_log(*a.trajectories);
    out.historical = sample_historical_states(records, cfg.distill_subsample, cfg.seed);
    manifest.input(*a.trajectories);
  }
}

void require_resources(const PolicyBundle& p, const ResourceArgs& a, const EngineConfig& cfg) {
  if (p.ensemble && (!a.snapshot || !a.schedule)) {
    throw ConfigError("the ensemble needs --snapshot and --schedule (or pass --no-ensemble)");
  }
  if (p.ensemble && cfg.online_representation == "network" && !a.trajectories) {
    throw ConfigError("a network-mode ensemble needs --trajectories for distillation states");
  }
  if (p.reposition == RepositionPolicy::expert && !a.expert) {
    throw ConfigError("expert repositioning needs --expert");
  }
}

Scenario read_scenario(const fs::path& path, RunManifest& manifest) {
  auto s = load_scenario(path);
  manifest.input(path);
  if (s.orders_file) manifest.input(*s.orders_file);
  if (s.roster_file) manifest.input(*s.roster_file);
  return s;
}

}  // namespace

RunManifest::RunManifest(std::string command, const GlobalOptions& g, const EngineConfig& cfg)
    : start_(std::chrono::system_clock::now()) {
  doc_["command"] = std::move(command);
  doc_["config_path"] = g.config ? nlohmann::ordered_json(g.config->string()) : nlohmann::ordered_json(nullptr);
  doc_["seed"] = cfg.seed;
  doc_["strict_paper"] = g.strict_paper;
  doc_["config"] = engine_config_to_json(cfg);
  doc_["inputs"] = nlohmann::ordered_json::array();
  doc_["outputs"] = nlohmann::ordered_json::array();
  if (g.config) input(*g.config);
}

void RunManifest::input(const fs::path& path) {
  doc_["inputs"].push_back({{"path", path.string()}, {"git_blob_sha1", git_blob_sha1(path)}});
}

void RunManifest::output(const fs::path& path) { doc_["outputs"].push_back(path.string()); }

void RunManifest::note(const std::string& key, nlohmann::json value) { doc_[key] = std::move(value); }

void RunManifest::write(const fs::path& path) {
  const auto end = std::chrono::system_clock::now();
  doc_["started_at"] = utc_timestamp(start_);
  doc_["finished_at"] = utc_timestamp(end);
  doc_["wall_seconds"] = std::chrono::duration<double>(end - start_).count();
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << doc_.dump(2) << "\n";
}

// ---------------------------------------------------------------- commands

void cmd_gen_data(const GlobalOptions& g, const GenDataArgs& a) {
  const auto cfg = resolve_config(g);
  RunManifest manifest("gen-data", g, cfg);
  const auto scenario = read_scenario(a.scenario, manifest);
  if (a.history_days < 0) throw InputError("--history-days must be >= 0");
  prepare_dir(a.out, a.force);

  const auto inputs = load_inputs(scenario, cfg.seed);
  const auto history = simulate_history(scenario, cfg, cfg.seed, a.history_days);
  const auto expert = estimate_expert_matrix(history.moves, scenario.grid);

  write_orders_csv(a.out / "orders.csv", inputs.orders);
  write_roster_csv(a.out / "roster.csv", inputs.roster);
  write_orders_csv(a.out / "history_orders.csv", history.orders);
  write_trajectory_log(a.out / "trajectories.csv", history.trajectories);
  expert.save(a.out / "expert_matrix.csv");
  for (const char* name : {"orders.csv", "roster.csv", "history_orders.csv", "trajectories.csv", "expert_matrix.csv"}) {
    manifest.output(a.out / name);
  }
  manifest.note("history_days", a.history_days);
  manifest.note("orders", inputs.orders.size());
  manifest.write(a.out / "manifest.json");
}

void cmd_train_ope(const GlobalOptions& g, const TrainOpeArgs& a) {
  auto cfg = resolve_config(g);
  if (a.iters) cfg.ope_iters = *a.iters;
  cfg.validate();
  RunManifest manifest("train-ope", g, cfg);
  const auto scenario = read_scenario(a.scenario, manifest);
  const auto records = read_trajectory_log(a.trajectories);
  manifest.input(a.trajectories);
  const fs::path loss_path = fs::path(a.out.string() + ".loss.csv");
  prepare_file(a.out, a.force);
  prepare_file(loss_path, a.force);

  std::vector<double> losses;
  ValueSnapshot snap;
  snap.net = train_offline_value(records, scenario, cfg, cfg.seed, &losses);
  snap.gamma = cfg.gamma;
  snap.discount_time_unit_s = cfg.discount_time_unit_s;
  save_snapshot(snap, a.out);
  write_loss_curve(loss_path, losses);
  manifest.output(a.out);
  manifest.output(loss_path);
  manifest.note("iterations", cfg.ope_iters);
  if (!losses.empty()) manifest.note("final_loss", losses.back());
  manifest.write(manifest_for(a.out));
}

void cmd_segment(const GlobalOptions& g, const SegmentArgs& a) {
  auto cfg = resolve_config(g);
  if (a.K) cfg.K_changepoints = *a.K;
  cfg.validate();
  RunManifest manifest("segment", g, cfg);
  GridMap grid;
  Seconds horizon = cfg.episode_horizon_s;
  if (a.scenario) {
    const auto scenario = read_scenario(*a.scenario, manifest);
    grid = scenario.grid;
    horizon = scenario.episode_horizon_s;
  }
  const auto orders = read_orders_csv(a.orders, grid);
  manifest.input(a.orders);
  prepare_file(a.out, a.force);

  ScheduleTable table;
  table.bin_s = cfg.segment_bin_s;
  table.counts = history_order_series(orders, cfg.segment_bin_s, horizon);
  if (cfg.K_changepoints >= static_cast<int>(table.counts.size())) {
    throw InputError("K = " + std::to_string(cfg.K_changepoints) + " needs more than " +
                     std::to_string(table.counts.size()) + " bins");
  }
  const auto seg = segment_series(table.counts, cfg.K_changepoints);
  table.breakpoints = seg.breakpoints;
  write_schedule_csv(a.out, table);
  manifest.output(a.out);
  manifest.note("segmentation_cost", seg.cost);
  manifest.write(manifest_for(a.out));
}

SimulationMetrics cmd_simulate(const GlobalOptions& g, const SimulateArgs& a) {
  const auto cfg = resolve_config(g);
  RunManifest manifest("simulate", g, cfg);
  const auto scenario = read_scenario(a.scenario, manifest);
  require_resources(a.policy, a.resources, cfg);
  LoadedResources res;
  load_resources(res, a.resources, scenario, cfg, manifest);
  const auto inputs = load_inputs(scenario, cfg.seed);
  prepare_dir(a.out, a.force);

  auto trace = csv::open_output(a.out / "trace.csv");
  csv::write_row(trace, {"round", "cell", "value"});
  auto repositions = csv::open_output(a.out / "repositions.csv");
  write_reposition_header(repositions);
  std::ofstream assignments;
  std::vector<std::string> log;
  EpisodeOutputs outputs;
  outputs.trace = &trace;
  outputs.trace_every = a.trace_every;
  outputs.repositions = &repositions;
  outputs.log = &log;
  if (a.assignments) {
    assignments = csv::open_output(a.out / "assignments.csv");
    write_assignment_header(assignments);
    outputs.assignments = &assignments;
  }

  const auto m = run_episode(scenario, inputs, a.policy, cfg, cfg.seed, res.view(), &outputs);
  for (std::size_t i = 0; i < log.size() && i < 5; ++i) std::cerr << "note: " << log[i] << "\n";
  if (log.size() > 5) std::cerr << "note: " << log.size() - 5 << " more like these\n";

  auto metrics = csv::open_output(a.out / "metrics.csv");
  write_metrics_header(metrics);
  write_metrics_row(metrics, scenario.name, a.policy, cfg.seed, m);
  for (const char* name : {"metrics.csv", "trace.csv", "repositions.csv"}) manifest.output(a.out / name);
  if (a.assignments) manifest.output(a.out / "assignments.csv");
  manifest.note("policy", {{"dispatch", to_string(a.policy.dispatch)},
                           {"reposition", to_string(a.policy.reposition)},
                           {"learner", a.policy.learner},
                           {"ensemble", a.policy.ensemble}});
  manifest.write(a.out / "manifest.json");
  return m;
}

void cmd_experiment(const GlobalOptions& g, const ExperimentArgs& a) {
  const auto cfg = resolve_config(g);
  RunManifest manifest("experiment " + a.kind, g, cfg);
  const auto scenario = read_scenario(a.scenario, manifest);
  const auto seeds = a.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : a.seeds;

  if (a.kind == "ablation") {
    PolicyBundle needs{DispatchPolicy::v1d3, RepositionPolicy::expert, true, true, std::nullopt, ""};
    require_resources(needs, a.resources, cfg);
    if (seeds.size() < 3) throw ConfigError("the ablation needs at least 3 seeds (--seeds)");
    LoadedResources res;
    load_resources(res, a.resources, scenario, cfg, manifest);
    prepare_dir(a.out, a.force);
    const auto rows = run_ablation_suite(
        scenario, [&](std::uint64_t seed) { return load_inputs(scenario, seed); }, cfg, seeds, res.view());
    write_ablation_csv(a.out / "ablation.csv", rows);
    auto runs = csv::open_output(a.out / "metrics.csv");
    write_metrics_header(runs);
    for (const auto& row : rows) {
      PolicyBundle label;
      for (const auto& v : ablation_dispatch_variants()) {
        if (v.label == row.dispatch_variant) label = v;
      }
      label.reposition = row.reposition;
      for (std::size_t i = 0; i < row.runs.size(); ++i) write_metrics_row(runs, scenario.name, label, seeds[i], row.runs[i]);
    }
    manifest.output(a.out / "ablation.csv");
    manifest.output(a.out / "metrics.csv");
  } else if (a.kind == "perturb-drivers" || a.kind == "perturb-orders") {
    const auto kind = a.kind == "perturb-drivers" ? PerturbationKind::add_drivers : PerturbationKind::add_orders;
    PerturbationSpec spec;
    if (scenario.perturbation && scenario.perturbation->kind == kind) {
      spec = *scenario.perturbation;
    } else {
      spec.kind = kind;
      spec.cell = scenario.grid.center();
      spec.start_round = 1800;
    }
    if (a.start_round) spec.start_round = *a.start_round;
    if (a.cell) spec.cell = *a.cell;
    spec.validate(scenario.grid);
    if (!a.policy.learner) throw ConfigError("perturbation experiments need the online learner (drop --no-online)");
    require_resources(a.policy, a.resources, cfg);
    LoadedResources res;
    load_resources(res, a.resources, scenario, cfg, manifest);
    prepare_dir(a.out, a.force);

    PerturbationTraces mean;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const auto tr = run_perturbation_experiment(scenario, load_inputs(scenario, seeds[i]), spec, a.policy, cfg,
                                                  seeds[i], res.view());
      const auto file = a.out / ("perturbation_seed" + std::to_string(seeds[i]) + ".csv");
      write_perturbation_csv(file, tr, cfg.dispatch_round_s);
      manifest.output(file);
      if (i == 0) {
        mean = tr;
        for (auto& d : mean.delta_2min) d = {0.0, 0.0, 0.0};
        for (auto& d : mean.delta) d = {0.0, 0.0, 0.0};
      }
      for (std::size_t s = 0; s < tr.delta_2min.size(); ++s) {
        for (int k = 0; k < 3; ++k) mean.delta_2min[s][k] += tr.delta_2min[s][k] / seeds.size();
      }
    }
    write_perturbation_csv(a.out / "perturbation.csv", mean, cfg.dispatch_round_s);
    manifest.output(a.out / "perturbation.csv");
    manifest.note("perturbation", {{"kind", a.kind}, {"cell", spec.cell}, {"start_round", spec.start_round}});
  } else {
    throw InputError("unknown experiment '" + a.kind + "' (expected ablation, perturb-drivers or perturb-orders)");
  }
  manifest.note("seeds", seeds);
  manifest.write(a.out / "manifest.json");
}

void apply_policy_flag(PolicyBundle& p, const std::string& flag) {
  const auto eq = flag.find('=');
  if (eq == std::string::npos) throw InputError("--policy expects key=value, got '" + flag + "'");
  const auto key = flag.substr(0, eq);
  const auto value = flag.substr(eq + 1);
  if (key == "dispatch") {
    p.dispatch = dispatch_policy_from_string(value);
  } else if (key == "reposition") {
    p.reposition = reposition_policy_from_string(value);
  } else {
    throw InputError("--policy key must be dispatch or reposition, got '" + key + "'");
  }
  p.label = std::string(to_string(p.dispatch)) + "/" + to_string(p.reposition);
}

// ---------------------------------------------------------------- argv

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& part : csv::split(text)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw InputError("bad seed '" + part + "' in --seeds");
    }
  }
  return out;
}

void add_resource_flags(CLI::App* cmd, ResourceArgs& r) {
  cmd->add_option("--snapshot", r.snapshot, "Offline value snapshot")->check(CLI::ExistingFile);
  cmd->add_option("--schedule", r.schedule, "Changepoint schedule CSV")->check(CLI::ExistingFile);
  cmd->add_option("--expert", r.expert, "Expert transition matrix CSV")->check(CLI::ExistingFile);
  cmd->add_option("--trajectories", r.trajectories, "Trajectory log (network-mode distillation states)")
      ->check(CLI::ExistingFile);
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Value-based order dispatch and fleet repositioning on a grid city"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "Engine config JSON")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Run seed (all randomness derives from it)");
  app.add_flag("--strict-paper", g.strict_paper, "Unlimited pickup radius, no start ensemble, trip-only durations");

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "Synthetic orders, roster, history and expert matrix");
  c_gen->add_option("--scenario", gen.scenario)->required()->check(CLI::ExistingFile);
  c_gen->add_option("--out", gen.out, "Output directory")->required();
  c_gen->add_flag("--force", gen.force);
  c_gen->add_option("--history-days", gen.history_days, "Simulated history days")->capture_default_str();

  TrainOpeArgs ope;
  auto* c_ope = app.add_subcommand("train-ope", "Fit the offline value on logged trajectories");
  c_ope->add_option("--trajectories", ope.trajectories)->required()->check(CLI::ExistingFile);
  c_ope->add_option("--scenario", ope.scenario)->required()->check(CLI::ExistingFile);
  c_ope->add_option("--out", ope.out, "Snapshot path (loss curve goes to <out>.loss.csv)")->required();
  c_ope->add_option("--iters", ope.iters, "Overrides ope_iters");
  c_ope->add_flag("--force", ope.force);

  SegmentArgs seg;
  auto* c_seg = app.add_subcommand("segment", "Changepoint schedule from historical orders");
  c_seg->add_option("--orders", seg.orders)->required()->check(CLI::ExistingFile);
  c_seg->add_option("--scenario", seg.scenario, "Supplies the grid and episode horizon")->check(CLI::ExistingFile);
  c_seg->add_option("--k", seg.K, "Overrides K_changepoints");
  c_seg->add_option("--out", seg.out)->required();
  c_seg->add_flag("--force", seg.force);

  SimulateArgs sim;
  std::vector<std::string> sim_policy;
  bool sim_no_online = false, sim_no_ensemble = false;
  auto* c_sim = app.add_subcommand("simulate", "Run one episode");
  c_sim->add_option("--scenario", sim.scenario)->required()->check(CLI::ExistingFile);
  add_resource_flags(c_sim, sim.resources);
  c_sim->add_option("--policy", sim_policy, "dispatch=<v1d3|baseline|greedy> or reposition=<v1d3|v1d3g|expert|none>");
  c_sim->add_flag("--no-online", sim_no_online);
  c_sim->add_flag("--no-ensemble", sim_no_ensemble);
  c_sim->add_option("--trace-every", sim.trace_every, "Rounds between value-trace rows")->capture_default_str();
  c_sim->add_flag("--assignments", sim.assignments, "Also write every round's matching");
  c_sim->add_option("--out", sim.out, "Output directory")->required();
  c_sim->add_flag("--force", sim.force);

  ExperimentArgs exp;
  std::vector<std::string> exp_policy;
  std::string exp_seeds;
  bool exp_no_online = false, exp_no_ensemble = false;
  auto* c_exp = app.add_subcommand("experiment", "Ablation table or perturbation traces");
  c_exp->add_option("kind", exp.kind, "ablation, perturb-drivers or perturb-orders")->required();
  c_exp->add_option("--scenario", exp.scenario)->required()->check(CLI::ExistingFile);
  add_resource_flags(c_exp, exp.resources);
  c_exp->add_option("--seeds", exp_seeds, "Comma-separated seeds (default: --seed)");
  c_exp->add_option("--policy", exp_policy, "Policy for perturbation runs");
  c_exp->add_flag("--no-online", exp_no_online);
  c_exp->add_flag("--no-ensemble", exp_no_ensemble);
  c_exp->add_option("--start-round", exp.start_round, "Injection round");
  c_exp->add_option("--cell", exp.cell, "Injection cell");
  c_exp->add_option("--out", exp.out, "Output directory")->required();
  c_exp->add_flag("--force", exp.force);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (c_gen->parsed()) {
      cmd_gen_data(g, gen);
    } else if (c_ope->parsed()) {
      cmd_train_ope(g, ope);
    } else if (c_seg->parsed()) {
      cmd_segment(g, seg);
    } else if (c_sim->parsed()) {
      sim.policy.label = "v1d3/v1d3";
      for (const auto& f : sim_policy) apply_policy_flag(sim.policy, f);
      sim.policy.learner = !sim_no_online;
      sim.policy.ensemble = !sim_no_ensemble;
      const auto m = cmd_simulate(g, sim);
      std::cout << "dispatch_score " << csv::format_double(m.dispatch_score) << " answer_rate "
                << csv::format_double(m.answer_rate) << " completion_rate " << csv::format_double(m.completion_rate)
                << " reposition_score " << csv::format_double(m.reposition_score) << "\n";
    } else if (c_exp->parsed()) {
      for (const auto& f : exp_policy) apply_policy_flag(exp.policy, f);
      exp.policy.learner = !exp_no_online;
      exp.policy.ensemble = !exp_no_ensemble;
      if (!exp_seeds.empty()) exp.seeds = parse_seeds(exp_seeds);
      cmd_experiment(g, exp);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace v1d3::cli
