#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gridfed/checkpoint.hpp"
#include "gridfed/csv.hpp"
#include "gridfed/env.hpp"
#include "gridfed/error.hpp"
#include "gridfed/fed.hpp"
#include "gridfed/policy.hpp"
#include "gridfed/scenario.hpp"

namespace gridfed {

enum class Variant : std::uint8_t { Upperbound, IndAgent, FL, FLPersonalization };

// Legend order used in plots.
inline constexpr std::array<Variant, 4> kAllVariants{Variant::Upperbound, Variant::FL, Variant::IndAgent,
                                                    Variant::FLPersonalization};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::Upperbound:
      return "Upperbound";
    case Variant::IndAgent:
      return "IndAgent";
    case Variant::FL:
      return "FL";
    case Variant::FLPersonalization:
      return "FLPersonalization";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown variant '" + s + "' (expected Upperbound, IndAgent, FL or FLPersonalization)");
}

inline bool is_federated(Variant v) { return v == Variant::FL || v == Variant::FLPersonalization; }

struct ExperimentConfig {
  Variant variant = Variant::FLPersonalization;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int rounds = 200;
  int eval_every = 10;
  int eval_episodes = 20;
  int local_updates = 1;
  std::filesystem::path out_dir = "runs";
  ScenarioConfig scenario = ScenarioConfig::defaults();
  ClientSettings client{};

  void validate() const {
    require(!seeds.empty(), "at least one seed is required");
    require(rounds > 0, "rounds must be positive");
    require(eval_every >= 1 && eval_every <= rounds, "eval_every must lie in [1, rounds]");
    require(eval_episodes > 0, "eval_episodes must be positive");
    require(local_updates >= 0, "local_updates must be non-negative");
    require(client.episodes_per_update > 0, "episodes_per_update must be positive");
    client.trpo.validate();
    scenario.validate();
  }

  // Client settings specialised for this variant.
  ClientSettings client_settings() const {
    ClientSettings s = client;
    s.training_phase = variant == Variant::Upperbound ? Phase::Test : Phase::Train;
    s.model.personalized = variant != Variant::FL;
    s.env.solar = scenario.solar;
    s.env.load = scenario.load;
    return s;
  }
};

struct EvalMetrics {
  double reward = 0.0;
  double emission = 0.0;
  double cost = 0.0;
};

struct TraceRow {
  int building = 0;
  int episode = 0;
  StepRecord record;
};

// Mean episodic totals over `episodes` test-distribution days, acting with the policy mean.
// Uses only its own weather stream, so it never disturbs training randomness.
inline EvalMetrics evaluate(const PersonalizedActorCritic& model, const ScenarioConfig& scenario, int building,
                            const EnvParams& env, std::uint64_t seed, int episodes,
                            std::vector<TraceRow>* trace = nullptr) {
  require(episodes > 0, "evaluation needs at least one episode");
  const auto& cfg = scenario.buildings.at(static_cast<std::size_t>(building));
  const std::uint64_t weather_seed = derive_seed(seed, {stream::kEvalWeather});
  const GridSeries grid = grid_series(scenario, seed);
  PersonalizedActorCritic::Cache cache;
  auto policy = [&](const Observation& obs) {
    const PolicyOutput po = model.forward(obs, cache);
    return PolicyStep{po.dist.mean, po.dist.log_prob(po.dist.mean), po.value};
  };
  EvalMetrics m;
  for (int e = 0; e < episodes; ++e) {
    const WeatherSeries w =
        generate_weather(weather_seed, static_cast<std::uint64_t>(e), scenario.test, scenario.weather);
    const Episode ep = episode_rollout(policy, cfg, w, grid, env);
    m.reward += ep.totals.reward;
    m.emission += ep.totals.emission;
    m.cost += ep.totals.cost;
    if (trace) {
      for (const auto& r : ep.records) trace->push_back({building, e, r});
    }
  }
  const double n = static_cast<double>(episodes);
  return {m.reward / n, m.emission / n, m.cost / n};
}

struct MetricsRow {
  Variant variant = Variant::FLPersonalization;
  std::uint64_t seed = 0;
  int round = 0;
  int building = 0;
  EvalMetrics metrics;
};

struct UpdateLogRow {
  int round = 0;
  int client = 0;
  UpdateReport report;
};

inline const char* kMetricsHeader = "variant,seed,round,building,reward,emission,cost";
inline const char* kUpdateLogHeader =
    "round,client,accepted,kl,surrogate_gain,backtracks,value_loss_before,value_loss_after";
inline const char* kTraceHeader = "building,hour,load,solar,batt,grid,soc,reward,penalty,cost,emission";

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    os << to_string(r.variant) << ',' << r.seed << ',' << r.round << ',' << r.building << ','
       << fmt_double(r.metrics.reward) << ',' << fmt_double(r.metrics.emission) << ',' << fmt_double(r.metrics.cost)
       << '\n';
  }
  return os.str();
}

inline std::string update_log_csv(const std::vector<UpdateLogRow>& rows) {
  std::ostringstream os;
  os << kUpdateLogHeader << '\n';
  for (const auto& r : rows) {
    os << r.round << ',' << r.client << ',' << (r.report.accepted ? 1 : 0) << ',' << fmt_double(r.report.kl) << ','
       << fmt_double(r.report.surrogate_gain) << ',' << r.report.backtracks << ','
       << fmt_double(r.report.value_loss_before) << ',' << fmt_double(r.report.value_loss_after) << '\n';
  }
  return os.str();
}

inline std::string trace_csv(const std::vector<TraceRow>& rows) {
  std::ostringstream os;
  os << kTraceHeader << '\n';
  for (const auto& t : rows) {
    const auto& r = t.record;
    os << t.building << ',' << r.hour << ',' << fmt_double(r.e_load) << ',' << fmt_double(r.e_solar) << ','
       << fmt_double(r.e_batt) << ',' << fmt_double(r.e_grid) << ',' << fmt_double(r.soc_kwh) << ','
       << fmt_double(r.reward) << ',' << fmt_double(r.penalty) << ',' << fmt_double(r.cost) << ','
       << fmt_double(r.emission) << '\n';
  }
  return os.str();
}

struct RunResult {
  std::vector<MetricsRow> metrics;
  std::vector<UpdateLogRow> updates;
  std::vector<std::vector<double>> global_history;  // global shared params after each round (federated only)
  std::vector<ParamVector> final_params;            // per building
  std::uint64_t aggregation_calls = 0;
};

struct RunHooks {
  PolicyStepObserver on_policy_step;
  bool record_global_history = false;
  std::function<void(int round)> on_round_end;
};

inline bool eval_due(const ExperimentConfig& cfg, int completed_rounds) {
  return completed_rounds == 0 || completed_rounds % cfg.eval_every == 0 || completed_rounds == cfg.rounds;
}

// In-process training of one (variant, seed). Federated variants aggregate every round; the two
// baselines train each building in isolation.
inline RunResult run_variant_in_process(const ExperimentConfig& cfg, std::uint64_t seed, const RunHooks& hooks = {}) {
  cfg.validate();
  const ClientSettings settings = cfg.client_settings();
  const std::size_t n_buildings = cfg.scenario.buildings.size();
  std::vector<BuildingClient> clients;
  clients.reserve(n_buildings);
  for (std::size_t b = 0; b < n_buildings; ++b) {
    clients.emplace_back(cfg.scenario, static_cast<int>(b), seed, settings);
  }

  RunResult res;
  auto record_eval = [&](int completed) {
    if (!eval_due(cfg, completed)) return;
    for (auto& c : clients) {
      const EvalMetrics m =
          evaluate(c.model(), cfg.scenario, c.id(), settings.env, seed, cfg.eval_episodes);
      res.metrics.push_back({cfg.variant, seed, completed, c.id(), m});
    }
  };

  const std::uint64_t agg_before = aggregation_counter().load();
  if (is_federated(cfg.variant)) {
    std::vector<ClientHandle> handles;
    for (auto& c : clients) handles.push_back(in_process_handle(c, hooks.on_policy_step));
    RoundState state{0, initial_shared(seed, settings.model), 1.0};
    for (auto& c : clients) c.set_shared(state.global_shared);
    record_eval(0);
    for (int r = 0; r < cfg.rounds; ++r) {
      RoundOutcome out = run_round(state, handles, cfg.local_updates);
      for (const auto& cr : out.results) {
        for (const auto& rep : cr.reports) res.updates.push_back({r, cr.update.client_id, rep});
      }
      state = std::move(out.state);
      for (auto& c : clients) c.set_shared(state.global_shared);
      if (hooks.record_global_history) res.global_history.push_back(state.global_shared);
      record_eval(r + 1);
      if (hooks.on_round_end) hooks.on_round_end(r + 1);
    }
  } else {
    record_eval(0);
    for (int r = 0; r < cfg.rounds; ++r) {
      for (auto& c : clients) {
        auto cr = c.local_train(static_cast<std::uint32_t>(r), cfg.local_updates, hooks.on_policy_step);
        for (const auto& rep : cr.reports) res.updates.push_back({r, c.id(), rep});
      }
      record_eval(r + 1);
      if (hooks.on_round_end) hooks.on_round_end(r + 1);
    }
  }
  res.aggregation_calls = aggregation_counter().load() - agg_before;
  for (auto& c : clients) res.final_params.push_back(c.model().get_flat());
  return res;
}

inline std::filesystem::path run_stem(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.out_dir / (to_string(cfg.variant) + "_seed" + std::to_string(seed));
}

// Writes <variant>_seed<S>_metrics.csv, <variant>_seed<S>_updates.csv and one checkpoint per building.
inline void write_run_outputs(const ExperimentConfig& cfg, std::uint64_t seed, const RunResult& res) {
  const auto stem = run_stem(cfg, seed).string();
  write_text_atomic(stem + "_metrics.csv", metrics_csv(res.metrics));
  write_text_atomic(stem + "_updates.csv", update_log_csv(res.updates));
  for (std::size_t b = 0; b < res.final_params.size(); ++b) {
    save_checkpoint(stem + "_building" + std::to_string(b) + ".gfnn", res.final_params[b]);
  }
}

inline RunResult run_variant(const ExperimentConfig& cfg, std::uint64_t seed, const RunHooks& hooks = {}) {
  RunResult res = run_variant_in_process(cfg, seed, hooks);
  write_run_outputs(cfg, seed, res);
  return res;
}

}  // namespace gridfed
