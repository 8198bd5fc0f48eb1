#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <vector>

#include "gridfed/batch.hpp"
#include "gridfed/error.hpp"
#include "gridfed/scenario.hpp"

namespace gridfed {

struct EnvParams {
  double penalty_weight = 0.1;
  double initial_soc = 0.5;  // fraction of capacity at reset
  SolarModel solar{};
  LoadModel load{};
};

struct StepRecord {
  int hour = 0;
  double e_load = 0.0;
  double e_solar = 0.0;
  double e_batt = 0.0;  // realized, + charge / - discharge
  double e_grid = 0.0;
  double soc_kwh = 0.0;  // after the step
  double reward = 0.0;
  double penalty = 0.0;
  double cost = 0.0;
  double emission = 0.0;
  double overflow = 0.0;
};

struct EnvState {
  BuildingConfig config;
  WeatherSeries weather;
  GridSeries grid;
  EnvParams params;
  double soc_kwh = 0.0;
  int hour = 0;
  double last_net = 0.0;

  bool done() const noexcept { return hour >= kHoursPerDay; }

  Observation observe() const {
    const int h = std::min(hour, kHoursPerDay - 1);
    return {weather.temperature[h], weather.humidity[h], soc_kwh / config.battery_capacity, last_net, grid.price[h],
            hour};
  }
};

struct StepResult {
  EnvState state;
  Observation observation;
  StepRecord record;
  bool done = false;
};

inline EnvState reset(const BuildingConfig& config, const WeatherSeries& weather, const GridSeries& grid,
                      const EnvParams& params = {}) {
  config.validate();
  EnvState s{config, weather, grid, params, params.initial_soc * config.battery_capacity, 0, 0.0};
  return s;
}

// Ideal battery: no losses, power limited only by the [-1, 1] capacity fraction. Surplus solar
// beyond load and charging is curtailed (no export credit).
inline StepResult step(EnvState state, double action) {
  require(!state.done(), "step called on a finished episode");
  require(std::isfinite(action), "action must be finite");
  const double a = std::clamp(action, -1.0, 1.0);
  const int t = state.hour;
  const BuildingConfig& cfg = state.config;

  StepRecord rec;
  rec.hour = t;
  rec.e_load = nonshiftable_load(cfg, state.weather, t, state.params.load);
  rec.e_solar = solar_generation(cfg, state.weather, t, state.params.solar);

  const double requested = a * cfg.battery_capacity;
  rec.e_batt = std::clamp(requested, -state.soc_kwh, cfg.battery_capacity - state.soc_kwh);
  rec.overflow = std::abs(requested - rec.e_batt);
  state.soc_kwh = std::clamp(state.soc_kwh + rec.e_batt, 0.0, cfg.battery_capacity);
  rec.soc_kwh = state.soc_kwh;

  rec.e_grid = std::max(rec.e_load + rec.e_batt - rec.e_solar, 0.0);
  rec.penalty = state.params.penalty_weight * rec.overflow;
  rec.reward = 0.0 - rec.e_grid - rec.penalty;  // +0 rather than -0 on idle hours
  rec.cost = rec.e_grid * state.grid.price[t];
  rec.emission = rec.e_grid * state.grid.emission_rate[t];

  state.last_net = rec.e_grid;
  state.hour = t + 1;
  const bool done = state.done();
  Observation obs = state.observe();
  return {std::move(state), obs, rec, done};
}

// One action decision from a stochastic policy: the raw sample (whose clamp is what the env sees),
// its log-density, and the critic's value estimate.
struct PolicyStep {
  double raw_action = 0.0;
  double log_prob = 0.0;
  double value = 0.0;
};

template <class P>
concept RolloutPolicy = requires(P p, const Observation& obs) {
  { p(obs) } -> std::convertible_to<PolicyStep>;
};

struct EpisodeTotals {
  double reward = 0.0;
  double cost = 0.0;
  double emission = 0.0;
};

struct Episode {
  EpisodeBatch batch;
  std::vector<StepRecord> records;
  EpisodeTotals totals;
};

inline EpisodeTotals sum_records(const std::vector<StepRecord>& records) {
  EpisodeTotals t;
  for (const auto& r : records) {
    t.reward += r.reward;
    t.cost += r.cost;
    t.emission += r.emission;
  }
  return t;
}

// Runs one full 24-step episode. The policy callable owns whatever randomness it needs.
template <RolloutPolicy Policy>
Episode episode_rollout(Policy&& policy, const BuildingConfig& config, const WeatherSeries& weather,
                        const GridSeries& grid, const EnvParams& params = {}) {
  Episode ep;
  EnvState state = reset(config, weather, grid, params);
  Observation obs = state.observe();
  ep.batch.observations.reserve(kHoursPerDay);
  ep.records.reserve(kHoursPerDay);
  bool done = false;
  while (!done) {
    const PolicyStep ps = policy(obs);
    StepResult r = step(std::move(state), ps.raw_action);
    ep.batch.observations.push_back(obs);
    ep.batch.actions.push_back(ps.raw_action);
    ep.batch.log_probs_old.push_back(ps.log_prob);
    ep.batch.values.push_back(ps.value);
    ep.batch.rewards.push_back(r.record.reward);
    ep.batch.dones.push_back(r.done);
    ep.records.push_back(r.record);
    state = std::move(r.state);
    obs = r.observation;
    done = r.done;
  }
  ep.totals = sum_records(ep.records);
  return ep;
}

}  // namespace gridfed
