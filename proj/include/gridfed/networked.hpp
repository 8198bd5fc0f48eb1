#pragma once

// Federated training with the server and each building client talking GFED frames over TCP.
//
// Conversation (server S, client C):
//   C->S Hello(client=b, [])
//   S->C RoundDone(0, [eval_flag, global...])           initial parameters
//   per round r:
//     S->C Broadcast(r, [local_updates, global...])
//     C->S Update(r, b, [n_k, R, R x report(6), shared...])
//     S->C RoundDone(r+1, [eval_flag, global...])
//     C->S RoundDone(r+1, b, [reward, emission, cost])  only when eval_flag is 1
//   S->C Shutdown
//
// Only Shared segments and scalar statistics cross the wire. Personal segments stay in the client
// process, which writes its own checkpoint.

#include <exception>
#include <future>

#include "gridfed/experiment.hpp"
#include "gridfed/net.hpp"

namespace gridfed {

inline constexpr std::size_t kReportFields = 6;

namespace networked_detail {

inline void encode_report(const UpdateReport& r, std::vector<double>& out) {
  out.push_back(r.accepted ? 1.0 : 0.0);
  out.push_back(r.kl);
  out.push_back(r.surrogate_gain);
  out.push_back(static_cast<double>(r.backtracks));
  out.push_back(r.value_loss_before);
  out.push_back(r.value_loss_after);
}

inline UpdateReport decode_report(std::span<const double> v) {
  UpdateReport r;
  r.accepted = v[0] != 0.0;
  r.kl = v[1];
  r.surrogate_gain = v[2];
  r.backtracks = static_cast<int>(v[3]);
  r.value_loss_before = v[4];
  r.value_loss_after = v[5];
  return r;
}

inline Message expect(Connection& c, MessageType type, std::uint32_t round) {
  Message m = c.receive();
  if (m.type != type || m.round != round) {
    throw TransportError("protocol error: expected message type " + std::to_string(static_cast<int>(type)) +
                         " for round " + std::to_string(round) + ", got type " +
                         std::to_string(static_cast<int>(m.type)) + " round " + std::to_string(m.round));
  }
  return m;
}

}  // namespace networked_detail

using FrameTap = std::function<void(const std::vector<std::uint8_t>&)>;

struct ServerOptions {
  FrameTap tap;  // every frame the server sends or receives
};

// Server half. Accepts one connection per building, then drives cfg.rounds rounds.
// The returned RunResult has no final_params: personal parameters never reach the server.
inline RunResult run_server(const ExperimentConfig& cfg, std::uint64_t seed, Listener& listener,
                            const RunHooks& hooks = {}, const ServerOptions& opts = {}) {
  using namespace networked_detail;
  cfg.validate();
  require(is_federated(cfg.variant), "networked mode only applies to federated variants");
  const ClientSettings settings = cfg.client_settings();
  const std::size_t n = cfg.scenario.buildings.size();

  std::vector<Connection> conns(n);
  for (std::size_t i = 0; i < n; ++i) {
    Connection c = listener.accept();
    if (opts.tap) c.set_tap(opts.tap);
    const Message hello = c.receive();
    if (hello.type != MessageType::Hello || hello.client_id >= n || conns[hello.client_id].is_open()) {
      throw TransportError("bad or duplicate Hello from client " + std::to_string(hello.client_id));
    }
    conns[hello.client_id] = std::move(c);
  }

  RunResult res;
  RoundState state{0, initial_shared(seed, settings.model), 1.0};

  auto finish_round = [&](std::uint32_t completed) {
    const bool eval = eval_due(cfg, static_cast<int>(completed));
    std::vector<double> payload{eval ? 1.0 : 0.0};
    payload.insert(payload.end(), state.global_shared.begin(), state.global_shared.end());
    for (std::size_t b = 0; b < n; ++b) {
      conns[b].send({MessageType::RoundDone, completed, static_cast<std::uint16_t>(b), payload});
    }
    if (!eval) return;
    for (std::size_t b = 0; b < n; ++b) {
      const Message m = expect(conns[b], MessageType::RoundDone, completed);
      if (m.payload.size() != 3) throw TransportError("evaluation reply must carry 3 values");
      res.metrics.push_back({cfg.variant, seed, static_cast<int>(completed), static_cast<int>(b),
                             {m.payload[0], m.payload[1], m.payload[2]}});
    }
  };

  const std::uint64_t agg_before = aggregation_counter().load();
  finish_round(0);
  const std::size_t shared_len = state.global_shared.size();
  for (int r = 0; r < cfg.rounds; ++r) {
    const auto round = static_cast<std::uint32_t>(r);
    std::vector<double> payload{static_cast<double>(cfg.local_updates)};
    payload.insert(payload.end(), state.global_shared.begin(), state.global_shared.end());
    for (std::size_t b = 0; b < n; ++b) {
      conns[b].send({MessageType::Broadcast, round, static_cast<std::uint16_t>(b), payload});
    }
    std::vector<ClientUpdate> updates;
    for (std::size_t b = 0; b < n; ++b) {
      const Message m = expect(conns[b], MessageType::Update, round);
      if (m.payload.size() < 2) throw TransportError("update payload too short");
      const auto n_k = static_cast<std::uint64_t>(m.payload[0]);
      const auto n_reports = static_cast<std::size_t>(m.payload[1]);
      const std::size_t expected = 2 + n_reports * kReportFields + shared_len;
      if (m.payload.size() != expected) {
        throw TransportError("update payload has " + std::to_string(m.payload.size()) + " values, expected " +
                             std::to_string(expected));
      }
      std::span<const double> p(m.payload);
      for (std::size_t k = 0; k < n_reports; ++k) {
        res.updates.push_back({r, static_cast<int>(b), decode_report(p.subspan(2 + k * kReportFields, kReportFields))});
      }
      const auto shared = p.subspan(2 + n_reports * kReportFields);
      updates.push_back({static_cast<int>(b), n_k, std::vector<double>(shared.begin(), shared.end()), round});
    }
    state = advance_round(state, updates);
    if (hooks.record_global_history) res.global_history.push_back(state.global_shared);
    finish_round(static_cast<std::uint32_t>(r + 1));
    if (hooks.on_round_end) hooks.on_round_end(r + 1);
  }
  for (auto& c : conns) c.send({MessageType::Shutdown, static_cast<std::uint32_t>(cfg.rounds), 0, {}});
  res.aggregation_calls = aggregation_counter().load() - agg_before;
  return res;
}

inline RunResult run_server(const ExperimentConfig& cfg, std::uint64_t seed, const Endpoint& listen_at,
                            const RunHooks& hooks = {}, const ServerOptions& opts = {}) {
  Listener listener(listen_at);
  return run_server(cfg, seed, listener, hooks, opts);
}

struct ClientOptions {
  bool write_checkpoint = true;
  FrameTap tap;
  PolicyStepObserver observer;
};

// Client half for one building. Returns the final full parameter vector (kept local).
inline ParamVector run_client(const ExperimentConfig& cfg, std::uint64_t seed, int building, const Endpoint& server,
                              const ClientOptions& opts = {}) {
  using namespace networked_detail;
  cfg.validate();
  const ClientSettings settings = cfg.client_settings();
  BuildingClient client(cfg.scenario, building, seed, settings);
  Connection conn = Connection::connect(server);
  if (opts.tap) conn.set_tap(opts.tap);
  const auto id = static_cast<std::uint16_t>(building);
  conn.send({MessageType::Hello, 0, id, {}});
  const std::size_t shared_len = client.shared_params().size();

  auto take_global = [&](const Message& m) {
    if (m.payload.size() != shared_len + 1) {
      throw TransportError("expected " + std::to_string(shared_len + 1) + " values, got " +
                           std::to_string(m.payload.size()));
    }
    client.set_shared(std::span<const double>(m.payload).subspan(1));
  };

  while (true) {
    const Message m = conn.receive();
    if (m.type == MessageType::Shutdown) break;
    if (m.type == MessageType::RoundDone) {
      take_global(m);
      if (m.payload[0] != 0.0) {
        const EvalMetrics e =
            evaluate(client.model(), cfg.scenario, building, settings.env, seed, cfg.eval_episodes);
        conn.send({MessageType::RoundDone, m.round, id, {e.reward, e.emission, e.cost}});
      }
    } else if (m.type == MessageType::Broadcast) {
      take_global(m);
      const ClientRoundResult r = client.local_train(m.round, static_cast<int>(m.payload[0]), opts.observer);
      std::vector<double> payload{static_cast<double>(r.update.n_k), static_cast<double>(r.reports.size())};
      for (const auto& rep : r.reports) encode_report(rep, payload);
      payload.insert(payload.end(), r.update.shared_params.begin(), r.update.shared_params.end());
      conn.send({MessageType::Update, m.round, id, std::move(payload)});
    } else {
      throw TransportError("unexpected message type " + std::to_string(static_cast<int>(m.type)));
    }
  }
  ParamVector final_params = client.model().get_flat();
  if (opts.write_checkpoint) {
    save_checkpoint(run_stem(cfg, seed).string() + "_building" + std::to_string(building) + ".gfnn", final_params);
  }
  return final_params;
}

// Server plus one client thread per building in this process, still talking over loopback TCP.
inline RunResult run_networked_local(const ExperimentConfig& cfg, std::uint64_t seed, const RunHooks& hooks = {},
                                     const ServerOptions& server_opts = {}, const ClientOptions& client_opts = {}) {
  Listener listener(Endpoint{"127.0.0.1", 0});
  const std::uint16_t port = listener.port();
  auto server = std::async(std::launch::async, [&] { return run_server(cfg, seed, listener, hooks, server_opts); });
  const std::size_t n = cfg.scenario.buildings.size();
  std::vector<std::future<ParamVector>> clients;
  for (std::size_t b = 0; b < n; ++b) {
    clients.push_back(std::async(std::launch::async, [&, b] {
      return run_client(cfg, seed, static_cast<int>(b), Endpoint{"127.0.0.1", port}, client_opts);
    }));
  }
  std::vector<ParamVector> finals;
  std::exception_ptr failure;
  for (auto& f : clients) {
    try {
      finals.push_back(f.get());
    } catch (...) {
      if (!failure) failure = std::current_exception();
    }
  }
  RunResult res;
  try {
    res = server.get();
  } catch (...) {
    if (!failure) failure = std::current_exception();
  }
  if (failure) std::rethrow_exception(failure);
  res.final_params = std::move(finals);
  return res;
}

}  // namespace gridfed
