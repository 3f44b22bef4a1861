#include "v1d3/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>

#include "v1d3/csv.hpp"

namespace v1d3 {
namespace {

// Visits every EngineConfig field with its document key, in declaration order.
template <class Config, class Fn>
void for_each_field(Config& cfg, Fn&& fn) {
  fn("gamma", cfg.gamma);
  fn("discount_time_unit_s", cfg.discount_time_unit_s);
  fn("omega", cfg.omega);
  fn("reposition_threshold_C", cfg.reposition_threshold_C);
  fn("dispatch_round_s", cfg.dispatch_round_s);
  fn("online_lr_alpha", cfg.online_lr_alpha);
  fn("ope_lr", cfg.ope_lr);
  fn("lipschitz_lambda", cfg.lipschitz_lambda);
  fn("K_changepoints", cfg.K_changepoints);
  fn("segment_bin_s", cfg.segment_bin_s);
  fn("pickup_radius_cells", cfg.pickup_radius_cells);
  fn("reposition_radius_cells", cfg.reposition_radius_cells);
  fn("episode_horizon_s", cfg.episode_horizon_s);
  fn("seed", cfg.seed);
  fn("ensemble_at_start", cfg.ensemble_at_start);
  fn("pickup_in_order_duration", cfg.pickup_in_order_duration);
  fn("reposition_value_scale", cfg.reposition_value_scale);
  fn("order_patience_rounds", cfg.order_patience_rounds);
  fn("online_representation", cfg.online_representation);
  fn("ope_batch_size", cfg.ope_batch_size);
  fn("ope_iters", cfg.ope_iters);
  fn("ope_target_sync", cfg.ope_target_sync);
  fn("distill_subsample", cfg.distill_subsample);
  fn("distill_steps", cfg.distill_steps);
  fn("distill_lr", cfg.distill_lr);
}

template <class T>
void read_typed(const nlohmann::json& value, const std::string& key, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!value.is_boolean()) throw ConfigError("config key '" + key + "' must be a boolean");
    out = value.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!value.is_string()) throw ConfigError("config key '" + key + "' must be a string");
    out = value.get<std::string>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!value.is_number_integer()) throw ConfigError("config key '" + key + "' must be an integer");
    out = value.get<T>();
  } else {
    if (!value.is_number()) throw ConfigError("config key '" + key + "' must be a number");
    out = value.get<T>();
  }
}

template <class T>
void parse_text(const std::string& key, const std::string& text, T& out) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1") {
        out = true;
      } else if (text == "false" || text == "0") {
        out = false;
      } else {
        throw ConfigError("");
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      out = text;
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      std::size_t used = 0;
      out = std::stoull(text, &used);
      if (used != text.size()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      out = static_cast<T>(csv::parse_int(text, 0));
    } else {
      out = csv::parse_double(text, 0);
    }
  } catch (const std::exception&) {
    throw ConfigError("cannot parse value '" + text + "' for config key '" + key + "'");
  }
}

}  // namespace

const std::vector<std::string>& engine_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    EngineConfig cfg;
    for_each_field(cfg, [&](const char* name, auto&) { out.emplace_back(name); });
    return out;
  }();
  return keys;
}

EngineConfig engine_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config document must be a flat object");
  const auto& keys = engine_config_keys();
  for (const auto& item : doc.items()) {
    if (std::find(keys.begin(), keys.end(), item.key()) == keys.end()) {
      throw ConfigError("unknown config key '" + item.key() + "'");
    }
  }
  EngineConfig cfg;
  for_each_field(cfg, [&](const char* name, auto& field) {
    auto it = doc.find(name);
    if (it != doc.end()) read_typed(*it, name, field);
  });
  cfg.validate();
  return cfg;
}

nlohmann::json engine_config_to_json(const EngineConfig& cfg) {
  nlohmann::ordered_json ordered = nlohmann::ordered_json::object();
  for_each_field(cfg, [&](const char* name, const auto& field) { ordered[name] = field; });
  return nlohmann::json::parse(ordered.dump());
}

EngineConfig load_engine_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return engine_config_from_json(doc);
}

void save_engine_config(const EngineConfig& cfg, const std::filesystem::path& path) {
  nlohmann::ordered_json ordered = nlohmann::ordered_json::object();
  for_each_field(cfg, [&](const char* name, const auto& field) { ordered[name] = field; });
  auto out = csv::open_output(path);
  out << ordered.dump(2) << '\n';
}

void set_engine_config_field(EngineConfig& cfg, const std::string& key, const std::string& text) {
  bool found = false;
  for_each_field(cfg, [&](const char* name, auto& field) {
    if (key == name) {
      parse_text(key, text, field);
      found = true;
    }
  });
  if (!found) throw ConfigError("unknown config key '" + key + "'");
}

int apply_env_overrides(EngineConfig& cfg, const std::string& prefix) {
  int applied = 0;
  for (const auto& key : engine_config_keys()) {
    std::string var = prefix;
    for (char c : key) var += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (const char* value = std::getenv(var.c_str())) {
      set_engine_config_field(cfg, key, value);
      ++applied;
    }
  }
  if (applied) cfg.validate();
  return applied;
}

}  // namespace v1d3
