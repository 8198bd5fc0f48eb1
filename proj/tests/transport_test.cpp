#include "gridfed/networked.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <memory>
#include <mutex>
#include <unordered_set>

namespace gridfed {
namespace {

ExperimentConfig small_config(Variant v, int rounds) {
  ExperimentConfig cfg;
  cfg.variant = v;
  cfg.rounds = rounds;
  cfg.eval_every = 1;
  cfg.eval_episodes = 2;
  cfg.local_updates = 1;
  cfg.client.episodes_per_update = 2;
  return cfg;
}

ClientOptions no_checkpoint() {
  ClientOptions o;
  o.write_checkpoint = false;
  return o;
}

TEST(Endpoint, Parses) {
  const Endpoint a = parse_endpoint("10.0.0.2:7000");
  EXPECT_EQ(a.host, "10.0.0.2");
  EXPECT_EQ(a.port, 7000);
  const Endpoint b = parse_endpoint(":0");
  EXPECT_EQ(b.host, "127.0.0.1");
  EXPECT_EQ(b.port, 0);
  EXPECT_THROW(parse_endpoint("localhost"), ConfigError);
  EXPECT_THROW(parse_endpoint("h:70000"), ConfigError);
  EXPECT_THROW(parse_endpoint("h:12x"), ConfigError);
}

TEST(Connection, LoopbackRoundTripAndPeerClose) {
  Listener l(Endpoint{"127.0.0.1", 0});
  std::vector<double> big(10000);
  for (std::size_t i = 0; i < big.size(); ++i) big[i] = 0.5 * static_cast<double>(i) - 3.0;
  auto peer = std::async(std::launch::async, [&] {
    Connection c = Connection::connect(Endpoint{"127.0.0.1", l.port()});
    c.send({MessageType::Update, 7, 3, big});
    const Message echo = c.receive();
    EXPECT_EQ(echo.type, MessageType::Shutdown);
  });
  Connection s = l.accept();
  const Message m = s.receive();
  EXPECT_EQ(m.type, MessageType::Update);
  EXPECT_EQ(m.round, 7u);
  EXPECT_EQ(m.client_id, 3);
  EXPECT_EQ(m.payload, big);
  s.send({MessageType::Shutdown, 0, 0, {}});
  peer.get();
  EXPECT_THROW(s.receive(), TransportError);
}

class NetworkedEquivalence : public ::testing::TestWithParam<Variant> {};

TEST_P(NetworkedEquivalence, BitIdenticalToInProcess) {
  const ExperimentConfig cfg = small_config(GetParam(), 3);
  RunHooks hooks;
  hooks.record_global_history = true;
  const RunResult local = run_variant_in_process(cfg, 11, hooks);
  const RunResult net = run_networked_local(cfg, 11, hooks, {}, no_checkpoint());

  ASSERT_EQ(net.global_history.size(), 3u);
  EXPECT_EQ(net.global_history, local.global_history);
  EXPECT_EQ(metrics_csv(net.metrics), metrics_csv(local.metrics));
  EXPECT_EQ(update_log_csv(net.updates), update_log_csv(local.updates));
  ASSERT_EQ(net.final_params.size(), local.final_params.size());
  for (std::size_t b = 0; b < local.final_params.size(); ++b) {
    EXPECT_EQ(net.final_params[b].values, local.final_params[b].values) << b;
  }
  EXPECT_EQ(net.aggregation_calls, local.aggregation_calls);
}

INSTANTIATE_TEST_SUITE_P(Federated, NetworkedEquivalence,
                         ::testing::Values(Variant::FL, Variant::FLPersonalization));

TEST(Networked, RejectsNonFederatedVariants) {
  const ExperimentConfig cfg = small_config(Variant::IndAgent, 1);
  Listener l(Endpoint{"127.0.0.1", 0});
  EXPECT_THROW(run_server(cfg, 1, l), std::exception);
}

// Every personal value a client ever holds is recorded; no aligned 8-byte payload word on the wire
// may equal one of them.
TEST(Networked, PersonalParametersNeverCrossTheWire) {
  const ExperimentConfig cfg = small_config(Variant::FLPersonalization, 3);
  std::mutex mu;
  std::vector<std::vector<std::uint8_t>> frames;
  std::unordered_set<std::uint64_t> personal_bits;

  const PersonalizedActorCritic probe(cfg.client_settings().model);
  std::vector<bool> is_personal(probe.param_count(), false);
  for (const auto& seg : probe.layout()) {
    if (seg.partition != Partition::Personal) continue;
    for (std::size_t i = 0; i < seg.length; ++i) is_personal[seg.offset + i] = true;
  }
  auto remember = [&](std::span<const double> params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      // Exact integers (zero biases, flags, counts) are legitimately on the wire.
      if (!is_personal[i] || params[i] == std::round(params[i])) continue;
      std::uint64_t bits;
      std::memcpy(&bits, &params[i], sizeof bits);
      personal_bits.insert(bits);
    }
  };

  ServerOptions so;
  so.tap = [&](const std::vector<std::uint8_t>& f) {
    std::lock_guard lk(mu);
    frames.push_back(f);
  };
  ClientOptions co = no_checkpoint();
  co.tap = so.tap;
  co.observer = [&](const EpisodeBatch&, std::span<const double> before, std::span<const double> after,
                    const UpdateReport&) {
    std::lock_guard lk(mu);
    remember(before);
    remember(after);
  };
  const RunResult res = run_networked_local(cfg, 5, {}, so, co);
  for (const auto& p : res.final_params) remember(p.values);

  ASSERT_GT(personal_bits.size(), 100u);
  ASSERT_FALSE(frames.empty());
  std::size_t words = 0;
  for (const auto& f : frames) {
    ASSERT_EQ((f.size() - kFrameHeaderSize) % 8, 0u);
    for (std::size_t off = kFrameHeaderSize; off < f.size(); off += 8) {
      std::uint64_t bits;
      std::memcpy(&bits, f.data() + off, sizeof bits);
      EXPECT_EQ(personal_bits.count(bits), 0u) << "personal value found in frame type " << int(f[6]);
      ++words;
    }
  }
  EXPECT_GT(words, 0u);
}

// A client that dies during round 1 must leave the server's committed state at round 1.
TEST(Networked, ClientFailureCommitsNothing) {
  const ExperimentConfig cfg = small_config(Variant::FLPersonalization, 3);
  Listener listener(Endpoint{"127.0.0.1", 0});
  const std::uint16_t port = listener.port();
  std::vector<int> committed;
  RunHooks hooks;
  hooks.record_global_history = true;
  hooks.on_round_end = [&](int r) { committed.push_back(r); };
  auto server = std::async(std::launch::async, [&] {
    return run_server(cfg, 2, listener, hooks);
  });
  std::vector<std::future<ParamVector>> clients;
  for (int b = 0; b < 5; ++b) {
    ClientOptions o = no_checkpoint();
    if (b == 3) {
      auto calls = std::make_shared<int>(0);
      o.observer = [calls](const EpisodeBatch&, std::span<const double>, std::span<const double>,
                           const UpdateReport&) {
        if (++*calls == 2) throw std::runtime_error("client crashed");
      };
    }
    clients.push_back(std::async(std::launch::async, [&, b, o] {
      return run_client(cfg, 2, b, Endpoint{"127.0.0.1", port}, o);
    }));
  }
  EXPECT_THROW(server.get(), TransportError);
  int failures = 0;
  for (auto& c : clients) {
    try {
      c.get();
    } catch (const std::exception&) {
      ++failures;
    }
  }
  EXPECT_EQ(failures, 5);  // the crashing client and the four left waiting on a dead server
  EXPECT_EQ(committed, std::vector<int>{1});
}

TEST(Networked, DuplicateHelloRejected) {
  const ExperimentConfig cfg = small_config(Variant::FL, 1);
  Listener listener(Endpoint{"127.0.0.1", 0});
  auto server = std::async(std::launch::async, [&] { return run_server(cfg, 1, listener); });
  Connection a = Connection::connect(Endpoint{"127.0.0.1", listener.port()});
  Connection b = Connection::connect(Endpoint{"127.0.0.1", listener.port()});
  a.send({MessageType::Hello, 0, 0, {}});
  b.send({MessageType::Hello, 0, 0, {}});
  EXPECT_THROW(server.get(), TransportError);
}

}  // namespace
}  // namespace gridfed
