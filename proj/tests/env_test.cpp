#include "gridfed/env.hpp"

#include <numeric>

#include <gtest/gtest.h>

namespace gridfed {
namespace {

// Reference weather (25 C, 50 %) with the comfort setpoint moved above it: load is load_base exactly
// and noon solar is solar_scale * 5.
struct Fixture {
  BuildingConfig building;
  WeatherSeries weather;
  GridSeries grid = default_grid();

  Fixture(double load, double solar_scale, double capacity) {
    building.load_base.fill(load);
    building.solar_scale = solar_scale;
    building.ac_efficiency = 1.0;
    building.battery_capacity = capacity;
    weather.temperature.fill(25.0);
    weather.humidity.fill(0.5);
  }
};

EnvState state_at(const Fixture& f, int hour, double soc_kwh, double penalty_weight = 0.1) {
  EnvParams p;
  p.penalty_weight = penalty_weight;
  p.load.comfort_setpoint = 30.0;
  EnvState s = reset(f.building, f.weather, f.grid, p);
  s.hour = hour;
  s.soc_kwh = soc_kwh;
  return s;
}

TEST(Env, ResetContract) {
  const auto cfg = ScenarioConfig::defaults();
  const WeatherSeries w = generate_weather(1, 0, cfg.train);
  const EnvState s = reset(cfg.buildings[0], w, cfg.grid);
  const Observation o = s.observe();
  EXPECT_EQ(o.hour, 0);
  EXPECT_DOUBLE_EQ(o.soc, 0.5);
  EXPECT_EQ(o.net_consumption, 0.0);
  EXPECT_EQ(o.t_out, w.temperature[0]);
  EXPECT_EQ(o.price, cfg.grid.price[0]);
  EXPECT_EQ(reset(cfg.buildings[0], w, cfg.grid).observe(), o);
}

TEST(Env, GridDrawWithChargingAndSolar) {
  Fixture f(2.0, 0.2, 5.0);  // noon solar = 0.2 * 5 * g(25, 0.5) = 1.0
  const EnvState s = state_at(f, 12, 1.0);
  const StepResult r = step(s, 0.1);  // requested 0.5 kWh
  EXPECT_DOUBLE_EQ(r.record.e_load, 2.0);
  EXPECT_DOUBLE_EQ(r.record.e_solar, 1.0);
  EXPECT_DOUBLE_EQ(r.record.e_batt, 0.5);
  EXPECT_DOUBLE_EQ(r.record.e_grid, 1.5);
  EXPECT_DOUBLE_EQ(r.record.reward, -1.5);
  EXPECT_EQ(r.record.penalty, 0.0);
  EXPECT_DOUBLE_EQ(r.observation.net_consumption, 1.5);
  EXPECT_EQ(r.observation.hour, 13);
}

TEST(Env, DischargeBeyondDeficitClampsGridAtZero) {
  Fixture f(1.0, 0.1, 4.0);  // noon solar 0.5
  const EnvState s = state_at(f, 12, 3.0);
  const StepResult r = step(s, -0.5);  // requested -2.0 kWh
  EXPECT_DOUBLE_EQ(r.record.e_batt, -2.0);
  EXPECT_EQ(r.record.e_grid, 0.0);
  EXPECT_EQ(r.record.reward, 0.0);
  EXPECT_DOUBLE_EQ(r.state.soc_kwh, 1.0);
}

TEST(Env, OverchargePenalty) {
  Fixture f(1.0, 1.0, 6.4);
  EnvState s = state_at(f, 2, 6.4, 0.1);
  const StepResult r = step(s, 0.5);
  EXPECT_EQ(r.record.e_batt, 0.0);
  EXPECT_DOUBLE_EQ(r.record.overflow, 3.2);
  EXPECT_DOUBLE_EQ(r.record.penalty, 0.32);
  EXPECT_DOUBLE_EQ(r.state.soc_kwh, 6.4);
}

TEST(Env, PenaltyStrictlyIncreasesBeyondFeasibleRange) {
  Fixture f(1.0, 1.0, 6.4);
  const EnvState s = state_at(f, 2, 1.0, 0.1);
  double last = -1.0;
  for (double a = -0.2; a >= -1.0; a -= 0.1) {
    const double p = step(s, a).record.penalty;
    EXPECT_GT(p, last) << a;
    last = p;
  }
}

TEST(Env, StepAfterDoneIsContractViolation) {
  Fixture f(1.0, 1.0, 6.4);
  EnvState s = state_at(f, 23, 1.0);
  StepResult r = step(s, 0.0);
  EXPECT_TRUE(r.done);
  EXPECT_THROW(step(r.state, 0.0), ContractViolation);
}

TEST(Env, ActionsClippedAtBoundary) {
  Fixture f(1.0, 1.0, 6.4);
  const EnvState s = state_at(f, 2, 3.2);
  EXPECT_EQ(step(s, 7.0).record.e_batt, step(s, 1.0).record.e_batt);
  EXPECT_EQ(step(s, -7.0).record.e_batt, step(s, -1.0).record.e_batt);
}

TEST(Env, ZeroPolicyWithoutSolarCostsLoadTimesPrice) {
  auto cfg = ScenarioConfig::defaults();
  BuildingConfig b = cfg.buildings[3];
  b.solar_scale = 1e-300;  // effectively no solar
  const WeatherSeries w = generate_weather(4, 2, cfg.test);
  auto zero = [](const Observation&) { return PolicyStep{0.0, 0.0, 0.0}; };
  const Episode ep = episode_rollout(zero, b, w, cfg.grid);
  double load = 0.0, cost = 0.0, emission = 0.0;
  for (int t = 0; t < kHoursPerDay; ++t) {
    const double l = nonshiftable_load(b, w, t);
    load += l;
    cost += l * cfg.grid.price[t];
    emission += l * cfg.grid.emission_rate[t];
  }
  EXPECT_NEAR(ep.totals.reward, -load, 1e-9);
  EXPECT_NEAR(ep.totals.cost, cost, 1e-9);
  EXPECT_NEAR(ep.totals.emission, emission, 1e-9);
  EXPECT_EQ(ep.batch.size(), 24u);
  EXPECT_TRUE(ep.batch.dones.back());
  EXPECT_EQ(std::count(ep.batch.dones.begin(), ep.batch.dones.end(), true), 1);
}

TEST(Env, RandomActionStreamsKeepInvariants) {
  const auto cfg = ScenarioConfig::defaults();
  Rng rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const auto& b = cfg.buildings[static_cast<std::size_t>(trial % 5)];
    const WeatherSeries w = generate_weather(7, trial, trial % 2 ? cfg.train : cfg.test);
    EnvState s = reset(b, w, cfg.grid);
    while (!s.done()) {
      StepResult r = step(s, rng.uniform(-1.5, 1.5));
      const auto& rec = r.record;
      ASSERT_EQ(rec.e_grid, std::max(rec.e_load + rec.e_batt - rec.e_solar, 0.0));
      ASSERT_GE(r.state.soc_kwh, 0.0);
      ASSERT_LE(r.state.soc_kwh, b.battery_capacity);
      ASSERT_LE(rec.reward, 0.0);
      ASSERT_EQ(rec.reward == 0.0, rec.e_grid == 0.0 && rec.overflow == 0.0);
      s = r.state;
    }
  }
}

TEST(Env, RolloutDeterministic) {
  const auto cfg = ScenarioConfig::defaults();
  const WeatherSeries w = generate_weather(3, 1, cfg.train);
  auto make = [] {
    return [rng = Rng(5)](const Observation&) mutable {
      return PolicyStep{rng.uniform(-1.0, 1.0), 0.0, 0.0};
    };
  };
  const Episode a = episode_rollout(make(), cfg.buildings[1], w, cfg.grid);
  const Episode b = episode_rollout(make(), cfg.buildings[1], w, cfg.grid);
  EXPECT_EQ(a.batch.actions, b.batch.actions);
  EXPECT_EQ(a.batch.rewards, b.batch.rewards);
  EXPECT_EQ(a.totals.emission, b.totals.emission);
}

}  // namespace
}  // namespace gridfed
