#pragma once

#include <cstddef>
#include <vector>

#include "gridfed/error.hpp"

namespace gridfed {

// Normalized view of one building state as the policy sees it.
struct Observation {
  double t_out = 0.0;            // degrees C
  double h_out = 0.0;            // relative humidity
  double soc = 0.0;              // fraction of capacity
  double net_consumption = 0.0;  // previous step's grid draw, kWh
  double price = 0.0;            // currency / kWh
  int hour = 0;

  bool operator==(const Observation&) const = default;
};

// Transitions for one or more episodes, in time order. `actions` are the raw (pre-clamp) Gaussian
// samples so that log-probabilities can be re-evaluated under new parameters.
struct EpisodeBatch {
  std::vector<Observation> observations;
  std::vector<double> actions;
  std::vector<double> log_probs_old;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<bool> dones;
  double gamma = 0.99;
  double lambda = 0.95;

  std::size_t size() const noexcept { return observations.size(); }

  void validate() const {
    const std::size_t n = observations.size();
    require(actions.size() == n && log_probs_old.size() == n && rewards.size() == n && values.size() == n &&
                dones.size() == n,
            "episode batch arrays must have equal length");
    require(n == 0 || dones.back(), "every episode in a batch must terminate");
    require(gamma >= 0.0 && gamma <= 1.0 && lambda >= 0.0 && lambda <= 1.0, "gamma and lambda must lie in [0, 1]");
  }

  void append(const EpisodeBatch& other) {
    observations.insert(observations.end(), other.observations.begin(), other.observations.end());
    actions.insert(actions.end(), other.actions.begin(), other.actions.end());
    log_probs_old.insert(log_probs_old.end(), other.log_probs_old.begin(), other.log_probs_old.end());
    rewards.insert(rewards.end(), other.rewards.begin(), other.rewards.end());
    values.insert(values.end(), other.values.begin(), other.values.end());
    dones.insert(dones.end(), other.dones.begin(), other.dones.end());
  }
};

}  // namespace gridfed
