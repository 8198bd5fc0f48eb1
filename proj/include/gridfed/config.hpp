#pragma once

// JSON experiment configuration. Every key is optional and overrides the built-in default;
// unknown keys are rejected so typos do not silently fall back to defaults.
//
// {
//   "experiment": {"variant", "seeds", "rounds", "eval_every", "eval_episodes", "local_updates", "out_dir"},
//   "scenario": {
//     "buildings": [{"building_id", "solar_scale", "ac_efficiency", "load_base": [24],
//                    "alpha_t", "alpha_h", "battery_capacity"}],
//     "train" / "test": {"temperature": [lo, hi], "humidity": [lo, hi]},
//     "grid": {"price": [24], "emission_rate": [24]},
//     "weather": {"temp_mean", "temp_amplitude", "temp_peak_hour", "humidity_mean", "humidity_amplitude",
//                 "temp_min", "temp_max"},
//     "solar": {"peak_kwh", "t_ref", "h_ref", "g_min", "g_max"},
//     "load": {"comfort_setpoint", "exponent", "humidity_gain"}
//   },
//   "env": {"penalty_weight", "initial_soc"},
//   "fed": {"episodes_per_update", "gamma", "lambda"},
//   "trpo": {"kl_bound", "cg_iters", "cg_damping", "cg_tol", "backtrack_coeff", "max_backtracks",
//            "value_epochs", "value_lr", "block_diagonal_fisher"},
//   "model": {"encoding_dim", "encoder_hidden", "trunk_hidden", "trunk_out", "processor_hidden",
//             "processor_out", "head_hidden", "sigma_min", "sigma_max", "log_std_init"}
// }

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include <json.hpp>

#include "gridfed/error.hpp"
#include "gridfed/experiment.hpp"

namespace gridfed {

namespace config_detail {

using json = nlohmann::json;

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError("unknown key '" + where + "." + it.key() + "'");
  }
}

template <class T>
void opt(const json& j, const char* key, T& field, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + where + "." + key + "': " + e.what());
  }
}

inline void opt_hours(const json& j, const char* key, HourArray& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& a = j.at(key);
  if (!a.is_array() || a.size() != static_cast<std::size_t>(kHoursPerDay)) {
    throw ConfigError("'" + where + "." + key + "' must be an array of 24 numbers");
  }
  for (int t = 0; t < kHoursPerDay; ++t) {
    if (!a[t].is_number()) throw ConfigError("'" + where + "." + key + "' must be an array of 24 numbers");
    out[t] = a[t].get<double>();
  }
}

inline void opt_range(const json& j, const char* key, NoiseRange& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& a = j.at(key);
  if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number()) {
    throw ConfigError("'" + where + "." + key + "' must be [lo, hi]");
  }
  out.lo = a[0].get<double>();
  out.hi = a[1].get<double>();
}

inline void read_noise(const json& j, NoiseSpec& spec, const std::string& where) {
  check_keys(j, where, {"temperature", "humidity"});
  opt_range(j, "temperature", spec.temperature, where);
  opt_range(j, "humidity", spec.humidity, where);
}

inline BuildingConfig read_building(const json& j, const BuildingConfig& base, const std::string& where) {
  check_keys(j, where,
             {"building_id", "solar_scale", "ac_efficiency", "load_base", "alpha_t", "alpha_h", "battery_capacity"});
  BuildingConfig b = base;
  opt(j, "building_id", b.building_id, where);
  opt(j, "solar_scale", b.solar_scale, where);
  opt(j, "ac_efficiency", b.ac_efficiency, where);
  opt_hours(j, "load_base", b.load_base, where);
  opt(j, "alpha_t", b.solar_coeffs.alpha_t, where);
  opt(j, "alpha_h", b.solar_coeffs.alpha_h, where);
  opt(j, "battery_capacity", b.battery_capacity, where);
  return b;
}

inline void read_scenario(const json& j, ScenarioConfig& sc) {
  check_keys(j, "scenario", {"buildings", "train", "test", "grid", "weather", "solar", "load"});
  if (j.contains("buildings")) {
    const json& arr = j.at("buildings");
    if (!arr.is_array() || arr.empty()) throw ConfigError("'scenario.buildings' must be a non-empty array");
    std::vector<BuildingConfig> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      // Entries override the default building with the same index when there is one.
      BuildingConfig base = i < sc.buildings.size() ? sc.buildings[i] : BuildingConfig{};
      base.building_id = static_cast<int>(i);
      out.push_back(read_building(arr[i], base, "scenario.buildings[" + std::to_string(i) + "]"));
    }
    sc.buildings = std::move(out);
  }
  if (j.contains("train")) read_noise(j.at("train"), sc.train, "scenario.train");
  if (j.contains("test")) read_noise(j.at("test"), sc.test, "scenario.test");
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    check_keys(g, "scenario.grid", {"price", "emission_rate"});
    opt_hours(g, "price", sc.grid.price, "scenario.grid");
    opt_hours(g, "emission_rate", sc.grid.emission_rate, "scenario.grid");
  }
  if (j.contains("weather")) {
    const json& w = j.at("weather");
    const std::string where = "scenario.weather";
    check_keys(w, where,
               {"temp_mean", "temp_amplitude", "temp_peak_hour", "humidity_mean", "humidity_amplitude", "temp_min",
                "temp_max"});
    opt(w, "temp_mean", sc.weather.temp_mean, where);
    opt(w, "temp_amplitude", sc.weather.temp_amplitude, where);
    opt(w, "temp_peak_hour", sc.weather.temp_peak_hour, where);
    opt(w, "humidity_mean", sc.weather.humidity_mean, where);
    opt(w, "humidity_amplitude", sc.weather.humidity_amplitude, where);
    opt(w, "temp_min", sc.weather.temp_min, where);
    opt(w, "temp_max", sc.weather.temp_max, where);
  }
  if (j.contains("solar")) {
    const json& s = j.at("solar");
    const std::string where = "scenario.solar";
    check_keys(s, where, {"peak_kwh", "t_ref", "h_ref", "g_min", "g_max"});
    opt(s, "peak_kwh", sc.solar.peak_kwh, where);
    opt(s, "t_ref", sc.solar.t_ref, where);
    opt(s, "h_ref", sc.solar.h_ref, where);
    opt(s, "g_min", sc.solar.g_min, where);
    opt(s, "g_max", sc.solar.g_max, where);
  }
  if (j.contains("load")) {
    const json& l = j.at("load");
    const std::string where = "scenario.load";
    check_keys(l, where, {"comfort_setpoint", "exponent", "humidity_gain"});
    opt(l, "comfort_setpoint", sc.load.comfort_setpoint, where);
    opt(l, "exponent", sc.load.exponent, where);
    opt(l, "humidity_gain", sc.load.humidity_gain, where);
  }
}

}  // namespace config_detail

// Overlays a parsed JSON document onto `cfg`.
inline void apply_config(const nlohmann::json& root, ExperimentConfig& cfg) {
  using namespace config_detail;
  check_keys(root, "config", {"experiment", "scenario", "env", "fed", "trpo", "model"});
  if (root.contains("experiment")) {
    const json& e = root.at("experiment");
    const std::string where = "experiment";
    check_keys(e, where, {"variant", "seeds", "rounds", "eval_every", "eval_episodes", "local_updates", "out_dir"});
    if (e.contains("variant")) {
      std::string v;
      opt(e, "variant", v, where);
      cfg.variant = parse_variant(v);
    }
    opt(e, "seeds", cfg.seeds, where);
    opt(e, "rounds", cfg.rounds, where);
    opt(e, "eval_every", cfg.eval_every, where);
    opt(e, "eval_episodes", cfg.eval_episodes, where);
    opt(e, "local_updates", cfg.local_updates, where);
    if (e.contains("out_dir")) {
      std::string p;
      opt(e, "out_dir", p, where);
      cfg.out_dir = p;
    }
  }
  if (root.contains("scenario")) read_scenario(root.at("scenario"), cfg.scenario);
  if (root.contains("env")) {
    const json& e = root.at("env");
    check_keys(e, "env", {"penalty_weight", "initial_soc"});
    opt(e, "penalty_weight", cfg.client.env.penalty_weight, "env");
    opt(e, "initial_soc", cfg.client.env.initial_soc, "env");
  }
  if (root.contains("fed")) {
    const json& f = root.at("fed");
    check_keys(f, "fed", {"episodes_per_update", "gamma", "lambda"});
    opt(f, "episodes_per_update", cfg.client.episodes_per_update, "fed");
    opt(f, "gamma", cfg.client.gamma, "fed");
    opt(f, "lambda", cfg.client.lambda, "fed");
  }
  if (root.contains("trpo")) {
    const json& t = root.at("trpo");
    auto& tc = cfg.client.trpo;
    check_keys(t, "trpo",
               {"kl_bound", "cg_iters", "cg_damping", "cg_tol", "backtrack_coeff", "max_backtracks", "value_epochs",
                "value_lr", "block_diagonal_fisher"});
    opt(t, "kl_bound", tc.kl_bound, "trpo");
    opt(t, "cg_iters", tc.cg_iters, "trpo");
    opt(t, "cg_damping", tc.cg_damping, "trpo");
    opt(t, "cg_tol", tc.cg_tol, "trpo");
    opt(t, "backtrack_coeff", tc.backtrack_coeff, "trpo");
    opt(t, "max_backtracks", tc.max_backtracks, "trpo");
    opt(t, "value_epochs", tc.value_epochs, "trpo");
    opt(t, "value_lr", tc.value_lr, "trpo");
    opt(t, "block_diagonal_fisher", tc.block_diagonal_fisher, "trpo");
  }
  if (root.contains("model")) {
    const json& m = root.at("model");
    auto& mc = cfg.client.model;
    check_keys(m, "model",
               {"encoding_dim", "encoder_hidden", "trunk_hidden", "trunk_out", "processor_hidden", "processor_out",
                "head_hidden", "sigma_min", "sigma_max", "log_std_init"});
    opt(m, "encoding_dim", mc.encoding_dim, "model");
    opt(m, "encoder_hidden", mc.encoder_hidden, "model");
    opt(m, "trunk_hidden", mc.trunk_hidden, "model");
    opt(m, "trunk_out", mc.trunk_out, "model");
    opt(m, "processor_hidden", mc.processor_hidden, "model");
    opt(m, "processor_out", mc.processor_out, "model");
    opt(m, "head_hidden", mc.head_hidden, "model");
    opt(m, "sigma_min", mc.sigma_min, "model");
    opt(m, "sigma_max", mc.sigma_max, "model");
    opt(m, "log_std_init", mc.log_std_init, "model");
  }
}

inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  apply_config(root, cfg);
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// Full configuration as JSON, suitable as a starting point for edits.
inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  using nlohmann::json;
  auto range = [](const NoiseRange& r) { return json::array({r.lo, r.hi}); };
  auto hours = [](const HourArray& a) { return json(std::vector<double>(a.begin(), a.end())); };
  json buildings = json::array();
  for (const auto& b : cfg.scenario.buildings) {
    buildings.push_back({{"building_id", b.building_id},
                         {"solar_scale", b.solar_scale},
                         {"ac_efficiency", b.ac_efficiency},
                         {"load_base", hours(b.load_base)},
                         {"alpha_t", b.solar_coeffs.alpha_t},
                         {"alpha_h", b.solar_coeffs.alpha_h},
                         {"battery_capacity", b.battery_capacity}});
  }
  const auto& sc = cfg.scenario;
  const auto& tc = cfg.client.trpo;
  const auto& mc = cfg.client.model;
  return json{
      {"experiment",
       {{"variant", to_string(cfg.variant)},
        {"seeds", cfg.seeds},
        {"rounds", cfg.rounds},
        {"eval_every", cfg.eval_every},
        {"eval_episodes", cfg.eval_episodes},
        {"local_updates", cfg.local_updates},
        {"out_dir", cfg.out_dir.string()}}},
      {"scenario",
       {{"buildings", buildings},
        {"train", {{"temperature", range(sc.train.temperature)}, {"humidity", range(sc.train.humidity)}}},
        {"test", {{"temperature", range(sc.test.temperature)}, {"humidity", range(sc.test.humidity)}}},
        {"grid", {{"price", hours(sc.grid.price)}, {"emission_rate", hours(sc.grid.emission_rate)}}},
        {"weather",
         {{"temp_mean", sc.weather.temp_mean},
          {"temp_amplitude", sc.weather.temp_amplitude},
          {"temp_peak_hour", sc.weather.temp_peak_hour},
          {"humidity_mean", sc.weather.humidity_mean},
          {"humidity_amplitude", sc.weather.humidity_amplitude},
          {"temp_min", sc.weather.temp_min},
          {"temp_max", sc.weather.temp_max}}},
        {"solar",
         {{"peak_kwh", sc.solar.peak_kwh},
          {"t_ref", sc.solar.t_ref},
          {"h_ref", sc.solar.h_ref},
          {"g_min", sc.solar.g_min},
          {"g_max", sc.solar.g_max}}},
        {"load",
         {{"comfort_setpoint", sc.load.comfort_setpoint},
          {"exponent", sc.load.exponent},
          {"humidity_gain", sc.load.humidity_gain}}}}},
      {"env", {{"penalty_weight", cfg.client.env.penalty_weight}, {"initial_soc", cfg.client.env.initial_soc}}},
      {"fed",
       {{"episodes_per_update", cfg.client.episodes_per_update},
        {"gamma", cfg.client.gamma},
        {"lambda", cfg.client.lambda}}},
      {"trpo",
       {{"kl_bound", tc.kl_bound},
        {"cg_iters", tc.cg_iters},
        {"cg_damping", tc.cg_damping},
        {"cg_tol", tc.cg_tol},
        {"backtrack_coeff", tc.backtrack_coeff},
        {"max_backtracks", tc.max_backtracks},
        {"value_epochs", tc.value_epochs},
        {"value_lr", tc.value_lr},
        {"block_diagonal_fisher", tc.block_diagonal_fisher}}},
      {"model",
       {{"encoding_dim", mc.encoding_dim},
        {"encoder_hidden", mc.encoder_hidden},
        {"trunk_hidden", mc.trunk_hidden},
        {"trunk_out", mc.trunk_out},
        {"processor_hidden", mc.processor_hidden},
        {"processor_out", mc.processor_out},
        {"head_hidden", mc.head_hidden},
        {"sigma_min", mc.sigma_min},
        {"sigma_max", mc.sigma_max},
        {"log_std_init", mc.log_std_init}}}};
}

}  // namespace gridfed
