#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gridfed/env.hpp"
#include "gridfed/error.hpp"
#include "gridfed/policy.hpp"
#include "gridfed/rng.hpp"
#include "gridfed/scenario.hpp"
#include "gridfed/trpo.hpp"

namespace gridfed {

struct ClientUpdate {
  int client_id = 0;
  std::uint64_t n_k = 0;
  std::vector<double> shared_params;
  std::uint32_t round = 0;
};

// Process-wide count of aggregate() calls, for instrumentation.
inline std::atomic<std::uint64_t>& aggregation_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

// Sample-weighted mean of the clients' shared parameters: sum_k (n_k / n) theta_k.
inline std::vector<double> aggregate(std::span<const ClientUpdate> updates) {
  require(!updates.empty(), "aggregate needs at least one client update");
  const std::size_t len = updates.front().shared_params.size();
  const std::uint32_t round = updates.front().round;
  std::uint64_t total = 0;
  for (const auto& u : updates) {
    require(u.round == round, "client updates come from different rounds");
    require(u.shared_params.size() == len, "client updates have different parameter lengths");
    require(u.n_k > 0, "client sample count must be positive");
    total += u.n_k;
  }
  aggregation_counter().fetch_add(1, std::memory_order_relaxed);
  // theta_0 + sum_k w_k (theta_k - theta_0): algebraically the weighted mean, and exactly theta when
  // every client sends the same vector.
  const std::vector<double>& base = updates.front().shared_params;
  std::vector<double> acc(len, 0.0);
  const double n = static_cast<double>(total);
  for (const auto& u : updates) {
    const double w = static_cast<double>(u.n_k) / n;
    for (std::size_t i = 0; i < len; ++i) acc[i] += w * (u.shared_params[i] - base[i]);
  }
  std::vector<double> out(len);
  for (std::size_t i = 0; i < len; ++i) out[i] = base[i] + acc[i];
  return out;
}

struct RoundState {
  std::uint32_t round = 0;
  std::vector<double> global_shared;
  double eta = 1.0;  // server step on the averaged displacement; 1 means plain parameter averaging
};

struct ClientSettings {
  int episodes_per_update = 16;
  double gamma = 0.99;
  double lambda = 0.95;
  Phase training_phase = Phase::Train;
  EnvParams env{};
  ModelConfig model{};
  TrpoConfig trpo{};
};

// Reference initialization every client starts from, personal segments included. Personal
// segments then diverge only through local training; starting them apart makes the averaged shared
// updates conflict.
inline PersonalizedActorCritic initial_model(std::uint64_t seed, const ModelConfig& model_cfg) {
  PersonalizedActorCritic model(model_cfg);
  Rng shared_rng(derive_seed(seed, {stream::kSharedInit}));
  Rng personal_rng(derive_seed(seed, {stream::kPersonalInit}));
  model.initialize(shared_rng, personal_rng);
  return model;
}

inline std::vector<double> initial_shared(std::uint64_t seed, const ModelConfig& model_cfg) {
  return initial_model(seed, model_cfg).get_flat().gather(Partition::Shared);
}

struct ClientRoundResult {
  ClientUpdate update;
  std::vector<UpdateReport> reports;
};

// One building: its environment, private model copy and random streams. Everything a client does
// is a deterministic function of (seed, building id, messages received).
class BuildingClient {
 public:
  BuildingClient(const ScenarioConfig& scenario, int building, std::uint64_t seed, const ClientSettings& settings)
      : scenario_(scenario),
        building_(building),
        seed_(seed),
        settings_(settings),
        model_(initial_model(seed, settings.model)),
        action_rng_(derive_seed(seed, {stream::kActions, static_cast<std::uint64_t>(building)})),
        weather_seed_(derive_seed(seed, {settings.training_phase == Phase::Train ? stream::kTrainWeather
                                                                                 : stream::kTestWeather,
                                         static_cast<std::uint64_t>(building)})) {
    require(building >= 0 && static_cast<std::size_t>(building) < scenario.buildings.size(), "unknown building");
    for (const auto& seg : model_.layout()) {
      block_ids_.insert(block_ids_.end(), seg.length, static_cast<std::uint8_t>(seg.partition));
    }
  }

  int id() const noexcept { return building_; }
  const BuildingConfig& building() const { return scenario_.buildings[static_cast<std::size_t>(building_)]; }
  PersonalizedActorCritic& model() noexcept { return model_; }
  const PersonalizedActorCritic& model() const noexcept { return model_; }
  const ClientSettings& settings() const noexcept { return settings_; }

  std::vector<double> shared_params() const { return model_.get_flat().gather(Partition::Shared); }
  std::vector<double> personal_params() const { return model_.get_flat().gather(Partition::Personal); }

  void set_shared(std::span<const double> shared) {
    ParamVector pv = model_.get_flat();
    pv.scatter(Partition::Shared, shared);
    model_.set_params(pv.values);
  }

  // Stochastic rollouts on the client's training distribution with the current parameters.
  EpisodeBatch collect(int episodes) {
    EpisodeBatch batch;
    batch.gamma = settings_.gamma;
    batch.lambda = settings_.lambda;
    PersonalizedActorCritic::Cache cache;
    auto policy = [&](const Observation& obs) {
      const PolicyOutput po = model_.forward(obs, cache);
      const SampledAction s = sample_action(po.dist, action_rng_);
      return PolicyStep{s.raw, s.log_prob, po.value};
    };
    const GridSeries grid = grid_series(scenario_, seed_);
    const NoiseSpec& noise = scenario_.noise(settings_.training_phase);
    for (int e = 0; e < episodes; ++e) {
      const WeatherSeries w = generate_weather(weather_seed_, episode_counter_++, noise, scenario_.weather);
      Episode ep = episode_rollout(policy, building(), w, grid, settings_.env);
      batch.append(ep.batch);
    }
    return batch;
  }

  // `local_updates` TRPO updates on fresh rollouts. Returns the post-training shared segments.
  ClientRoundResult local_train(std::uint32_t round, int local_updates, const PolicyStepObserver& observer = {}) {
    require(local_updates >= 0, "local_updates must be non-negative");
    ClientRoundResult res;
    std::uint64_t steps = 0;
    for (int u = 0; u < local_updates; ++u) {
      const EpisodeBatch batch = collect(settings_.episodes_per_update);
      steps += batch.size();
      res.reports.push_back(trpo_update(model_, batch, settings_.trpo, observer, block_ids_));
    }
    // A client that consumed no samples still echoes the broadcast with unit weight.
    res.update = {building_, steps > 0 ? steps : 1, shared_params(), round};
    return res;
  }

 private:
  ScenarioConfig scenario_;
  int building_;
  std::uint64_t seed_;
  ClientSettings settings_;
  PersonalizedActorCritic model_;
  Rng action_rng_;
  std::uint64_t weather_seed_;
  std::uint64_t episode_counter_ = 0;
  std::vector<std::uint8_t> block_ids_;  // partition of each parameter
};

// Handle through which the round driver reaches a client, in-process or remote.
struct ClientHandle {
  std::function<ClientRoundResult(std::uint32_t round, std::span<const double> global_shared, int local_updates)>
      train;
};

inline ClientHandle in_process_handle(BuildingClient& client, PolicyStepObserver observer = {}) {
  return {[&client, observer](std::uint32_t round, std::span<const double> global, int local_updates) {
    client.set_shared(global);
    return client.local_train(round, local_updates, observer);
  }};
}

struct RoundOutcome {
  RoundState state;
  std::vector<ClientRoundResult> results;
};

// Server step shared by the in-process and networked drivers.
inline RoundState advance_round(const RoundState& state, std::span<const ClientUpdate> updates) {
  const std::vector<double> averaged = aggregate(updates);
  RoundState next;
  next.round = state.round + 1;
  next.eta = state.eta;
  next.global_shared.resize(averaged.size());
  for (std::size_t i = 0; i < averaged.size(); ++i) {
    // theta + eta * (avg - theta); eta == 1 yields the average exactly.
    next.global_shared[i] =
        state.eta == 1.0 ? averaged[i] : state.global_shared[i] + state.eta * (averaged[i] - state.global_shared[i]);
  }
  return next;
}

// Broadcast, local training, aggregation. Any client failure propagates and leaves `state` untouched.
inline RoundOutcome run_round(const RoundState& state, std::span<ClientHandle> clients, int local_updates) {
  require(!clients.empty(), "a round needs at least one client");
  require(all_finite(state.global_shared), "global parameters must be finite");
  RoundOutcome out;
  out.results.reserve(clients.size());
  for (auto& c : clients) {
    out.results.push_back(c.train(state.round, state.global_shared, local_updates));
  }
  std::vector<ClientUpdate> updates;
  updates.reserve(out.results.size());
  for (const auto& r : out.results) updates.push_back(r.update);
  out.state = advance_round(state, updates);
  return out;
}

}  // namespace gridfed
