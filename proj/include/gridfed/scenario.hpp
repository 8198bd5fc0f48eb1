#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "gridfed/error.hpp"
#include "gridfed/rng.hpp"

namespace gridfed {

inline constexpr int kHoursPerDay = 24;
using HourArray = std::array<double, kHoursPerDay>;

struct SolarCoeffs {
  double alpha_t = 0.3;  // sensitivity to ((T - T_ref) / 10)^2
  double alpha_h = 0.4;  // sensitivity to (H - H_ref)
};

// Per-building coefficients. Heterogeneity across clients comes entirely from here.
struct BuildingConfig {
  int building_id = 0;
  double solar_scale = 1.0;
  double ac_efficiency = 1.0;
  HourArray load_base{};
  SolarCoeffs solar_coeffs{};
  double battery_capacity = 6.4;

  void validate() const {
    require(solar_scale > 0.0, "solar_scale must be positive");
    require(ac_efficiency > 0.0, "ac_efficiency must be positive");
    require(battery_capacity > 0.0, "battery_capacity must be positive");
    for (double v : load_base) {
      require(v >= 0.0 && std::isfinite(v), "load_base entries must be finite and non-negative");
    }
  }

  bool operator==(const BuildingConfig& o) const {
    return building_id == o.building_id && solar_scale == o.solar_scale && ac_efficiency == o.ac_efficiency &&
           load_base == o.load_base && solar_coeffs.alpha_t == o.solar_coeffs.alpha_t &&
           solar_coeffs.alpha_h == o.solar_coeffs.alpha_h && battery_capacity == o.battery_capacity;
  }
};

enum class Phase : std::uint8_t { Train, Test };

inline const char* to_string(Phase p) { return p == Phase::Train ? "train" : "test"; }

struct NoiseRange {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const NoiseRange&) const = default;
};

struct NoiseSpec {
  Phase phase = Phase::Train;
  NoiseRange temperature{};
  NoiseRange humidity{};

  void validate() const {
    require(temperature.lo <= temperature.hi, "temperature noise range has lo > hi");
    require(humidity.lo <= humidity.hi, "humidity noise range has lo > hi");
  }
};

struct WeatherSeries {
  HourArray temperature{};  // degrees C
  HourArray humidity{};     // relative, [0, 1]
  bool operator==(const WeatherSeries&) const = default;
};

struct GridSeries {
  HourArray price{};          // currency / kWh
  HourArray emission_rate{};  // kgCO2e / kWh
  bool operator==(const GridSeries&) const = default;
};

// Base diurnal curves shared by all buildings:
//   T(t) = temp_mean + temp_amplitude * sin(pi (t - temp_peak_hour + 6) / 12)
//   H(t) = humidity_mean - humidity_amplitude * sin(pi (t - temp_peak_hour + 6) / 12)
struct WeatherModel {
  double temp_mean = 14.0;
  double temp_amplitude = 5.0;
  double temp_peak_hour = 15.0;
  double humidity_mean = 0.55;
  double humidity_amplitude = 0.15;
  double temp_min = -20.0;
  double temp_max = 50.0;
};

// g(T, H) = clamp(1 - alpha_T ((T - t_ref) / 10)^2 - alpha_H (H - h_ref), g_min, g_max)
struct SolarModel {
  double peak_kwh = 5.0;
  double t_ref = 25.0;
  double h_ref = 0.5;
  double g_min = 0.1;
  double g_max = 1.2;
};

// h(T, H) = max(0, T - setpoint)^exponent * (1 + humidity_gain * H)
struct LoadModel {
  double comfort_setpoint = 22.0;
  double exponent = 1.5;
  double humidity_gain = 0.5;
};

struct ScenarioConfig {
  std::vector<BuildingConfig> buildings;
  NoiseSpec train;
  NoiseSpec test;
  GridSeries grid;
  WeatherModel weather;
  SolarModel solar;
  LoadModel load;

  const NoiseSpec& noise(Phase p) const { return p == Phase::Train ? train : test; }

  void validate() const {
    require(!buildings.empty(), "scenario needs at least one building");
    for (const auto& b : buildings) {
      b.validate();
    }
    train.validate();
    test.validate();
    require(!(train.temperature == test.temperature && train.humidity == test.humidity),
            "train and test noise ranges must differ");
    for (int t = 0; t < kHoursPerDay; ++t) {
      require(grid.price[t] > 0.0, "prices must be positive");
      require(grid.emission_rate[t] > 0.0, "emission rates must be positive");
    }
    require(*std::max_element(grid.price.begin(), grid.price.end()) >
                *std::min_element(grid.price.begin(), grid.price.end()),
            "price table must have a peak above its off-peak level");
  }

  static ScenarioConfig defaults();
};

// Evening-peaked residential demand shape, kWh per hour.
inline HourArray residential_profile(double scale, double evening_peak_hour) {
  HourArray out{};
  for (int t = 0; t < kHoursPerDay; ++t) {
    const double morning = 0.5 * std::exp(-((t - 8.0) * (t - 8.0)) / 4.0);
    const double evening = 0.9 * std::exp(-((t - evening_peak_hour) * (t - evening_peak_hour)) / 6.0);
    out[t] = scale * (0.6 + morning + evening);
  }
  return out;
}

inline GridSeries default_grid() {
  GridSeries g;
  for (int t = 0; t < kHoursPerDay; ++t) {
    if (t <= 6) {
      g.price[t] = 0.10;
    } else if (t <= 16) {
      g.price[t] = 0.20;
    } else if (t <= 21) {
      g.price[t] = 0.40;
    } else {
      g.price[t] = 0.20;
    }
    g.emission_rate[t] = (t >= 17 && t <= 21) ? 0.30 + 0.15 : 0.30;
  }
  return g;
}

inline ScenarioConfig ScenarioConfig::defaults() {
  constexpr std::array<double, 5> solar_scale{0.8, 1.0, 1.2, 0.6, 1.5};
  constexpr std::array<double, 5> ac_efficiency{1.0, 1.5, 0.7, 2.0, 1.2};
  constexpr std::array<double, 5> load_scale{1.0, 1.2, 0.9, 1.4, 1.1};
  constexpr std::array<double, 5> evening_peak{19.5, 20.0, 18.5, 19.0, 21.0};
  constexpr std::array<double, 5> alpha_t{0.30, 0.25, 0.35, 0.20, 0.28};
  constexpr std::array<double, 5> alpha_h{0.40, 0.50, 0.30, 0.45, 0.35};

  ScenarioConfig cfg;
  for (int i = 0; i < 5; ++i) {
    BuildingConfig b;
    b.building_id = i;
    b.solar_scale = solar_scale[i];
    b.ac_efficiency = ac_efficiency[i];
    b.load_base = residential_profile(load_scale[i], evening_peak[i]);
    b.solar_coeffs = {alpha_t[i], alpha_h[i]};
    b.battery_capacity = 6.4;
    cfg.buildings.push_back(b);
  }
  cfg.train = {Phase::Train, {-2.0, 2.0}, {-0.05, 0.05}};
  cfg.test = {Phase::Test, {3.0, 5.0}, {0.08, 0.15}};
  cfg.grid = default_grid();
  return cfg;
}

inline double diurnal_phase(const WeatherModel& m, int hour) {
  return std::sin(std::numbers::pi * (hour - m.temp_peak_hour + 6.0) / 12.0);
}

// Noise is one uniform draw per episode (temperature, then humidity), applied as an offset to the
// base curves. The stream is keyed by (seed, episode_index) only.
inline WeatherSeries generate_weather(std::uint64_t seed, std::uint64_t episode_index, const NoiseSpec& spec,
                                      const WeatherModel& model = {}) {
  spec.validate();
  Rng rng(derive_seed(seed, {episode_index}));
  const double temp_offset = rng.uniform(spec.temperature.lo, spec.temperature.hi);
  const double humidity_offset = rng.uniform(spec.humidity.lo, spec.humidity.hi);

  WeatherSeries w;
  for (int t = 0; t < kHoursPerDay; ++t) {
    const double phase = diurnal_phase(model, t);
    const double temp = model.temp_mean + model.temp_amplitude * phase;
    const double hum = model.humidity_mean - model.humidity_amplitude * phase;
    w.temperature[t] = std::clamp(temp + temp_offset, model.temp_min, model.temp_max);
    w.humidity[t] = std::clamp(hum + humidity_offset, 0.0, 1.0);
  }
  return w;
}

inline double solar_weather_factor(const SolarCoeffs& c, const SolarModel& m, double temperature, double humidity) {
  const double dt = (temperature - m.t_ref) / 10.0;
  return std::clamp(1.0 - c.alpha_t * dt * dt - c.alpha_h * (humidity - m.h_ref), m.g_min, m.g_max);
}

inline double base_solar(const SolarModel& m, int hour) {
  return std::max(0.0, std::sin(std::numbers::pi * (hour - 6) / 12.0)) * m.peak_kwh;
}

inline double solar_generation(const BuildingConfig& b, const WeatherSeries& w, int hour, const SolarModel& m = {}) {
  require(hour >= 0 && hour < kHoursPerDay, "hour out of range");
  // sin() is not exactly zero at the horizon hours; pin the night interval.
  if (hour <= 6 || hour >= 18) {
    return 0.0;
  }
  return b.solar_scale * base_solar(m, hour) *
         solar_weather_factor(b.solar_coeffs, m, w.temperature[hour], w.humidity[hour]);
}

inline double comfort_deviation(const LoadModel& m, double temperature, double humidity) {
  const double excess = std::max(0.0, temperature - m.comfort_setpoint);
  if (excess == 0.0) {
    return 0.0;
  }
  return std::pow(excess, m.exponent) * (1.0 + m.humidity_gain * humidity);
}

inline double nonshiftable_load(const BuildingConfig& b, const WeatherSeries& w, int hour, const LoadModel& m = {}) {
  require(hour >= 0 && hour < kHoursPerDay, "hour out of range");
  return b.load_base[hour] + b.ac_efficiency * comfort_deviation(m, w.temperature[hour], w.humidity[hour]);
}

// The tariff and emission tables are fixed by configuration; `seed` is accepted so callers can treat
// every scenario input uniformly, but it does not perturb the tables.
inline GridSeries grid_series(const ScenarioConfig& cfg, std::uint64_t /*seed*/) { return cfg.grid; }

}  // namespace gridfed
