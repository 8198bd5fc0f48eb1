#include "gridfed/policy.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "test_support.hpp"

namespace gridfed {
namespace {

using testing::max_relative_error;
using testing::numeric_gradient;
using testing::random_model;
using testing::random_observation;

TEST(Gaussian, LogProbMatchesDensity) {
  const PolicyDistribution d{0.3, 0.7};
  const double a = -0.2;
  const double density = std::exp(-0.5 * std::pow((a - 0.3) / 0.7, 2)) / (0.7 * std::sqrt(2.0 * std::numbers::pi));
  EXPECT_NEAR(d.log_prob(a), std::log(density), 1e-14);
}

TEST(Gaussian, KlZeroForIdenticalAndPositiveOtherwise) {
  EXPECT_NEAR(gaussian_kl({0.1, 0.5}, {0.1, 0.5}), 0.0, 1e-15);
  EXPECT_GT(gaussian_kl({0.1, 0.5}, {0.2, 0.5}), 0.0);
  // Mean shift only: dm^2 / (2 s^2).
  EXPECT_NEAR(gaussian_kl({0.0, 0.5}, {0.3, 0.5}), 0.09 / 0.5, 1e-14);
}

TEST(Gaussian, KlGradientMatchesFiniteDifference) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const PolicyDistribution o{rng.uniform(-1, 1), rng.uniform(0.05, 1)};
    const std::vector<double> x{rng.uniform(-1, 1), rng.uniform(0.05, 1)};
    const auto g = gaussian_kl_grad(o, {x[0], x[1]});
    const auto num = numeric_gradient([&](std::span<const double> p) { return gaussian_kl(o, {p[0], p[1]}); }, x, 1e-6);
    const std::vector<double> an{g.d_mean, g.d_std};
    EXPECT_LT(max_relative_error(an, num), 1e-6);
  }
}

TEST(Sampling, DeterministicAndClamped) {
  Rng a(9), b(9);
  const PolicyDistribution d{0.9, 1.0};
  for (int i = 0; i < 100; ++i) {
    const auto s1 = sample_action(d, a);
    const auto s2 = sample_action(d, b);
    EXPECT_EQ(s1.raw, s2.raw);
    EXPECT_GE(s1.action, -1.0);
    EXPECT_LE(s1.action, 1.0);
    EXPECT_EQ(s1.log_prob, d.log_prob(s1.raw));
  }
}

TEST(Scaling, RoundTripAndDocumentedConstants) {
  const Observation o{40.0, 0.8, 0.5, 10.0, 0.4, 23};
  const auto x = ObservationScaling::normalize(o);
  EXPECT_DOUBLE_EQ(x[0], 1.0);
  EXPECT_DOUBLE_EQ(x[1], 1.0);
  EXPECT_DOUBLE_EQ(x[2], 0.5);
  EXPECT_DOUBLE_EQ(x[3], 1.0);
  EXPECT_DOUBLE_EQ(x[4], 1.0);
  EXPECT_DOUBLE_EQ(x[5], 1.0);
  const auto back = ObservationScaling::denormalize(x);
  EXPECT_NEAR(back[0], 40.0, 1e-12);
  EXPECT_NEAR(back[5], 23.0, 1e-12);
}

TEST(Model, ArchitectureAndPartition) {
  PersonalizedActorCritic m;
  const std::size_t enc = 6 * 32 + 32 + 32 * 8 + 8;
  const std::size_t trunk = 10 * 64 + 64 + 64 * 32 + 32;
  const std::size_t proc = 4 * 32 + 32 + 32 * 16 + 16;
  const std::size_t head = 48 * 32 + 32 + 32 * 2 + 2;
  EXPECT_EQ(m.param_count(), enc + trunk + proc + head + 1);
  const ParamVector pv = m.get_flat();
  EXPECT_EQ(pv.count(Partition::Personal), enc);
  EXPECT_EQ(pv.count(Partition::Shared), trunk + proc + head + 1);

  ModelConfig fl;
  fl.personalized = false;
  EXPECT_EQ(PersonalizedActorCritic(fl).get_flat().count(Partition::Personal), 0u);
}

TEST(Model, ForwardMatchesComposedComponents) {
  Rng rng(21);
  const auto m = random_model(rng);
  for (int i = 0; i < 20; ++i) {
    const Observation o = random_observation(rng);
    const auto x = ObservationScaling::normalize(o);
    const auto enc = m.encoder().forward(x);
    std::vector<double> tin{x[0], x[1]};
    tin.insert(tin.end(), enc.begin(), enc.end());
    const auto t = m.trunk().forward(tin);
    const auto p = m.processor().forward(std::vector<double>{x[2], x[3], x[4], x[5]});
    std::vector<double> hin = t;
    hin.insert(hin.end(), p.begin(), p.end());
    const auto h = m.head().forward(hin);
    const PolicyOutput po = m.forward(o);
    EXPECT_EQ(po.dist.mean, std::tanh(h[0]));
    EXPECT_EQ(po.value, h[1]);
    EXPECT_EQ(po.dist.std, m.std());
  }
}

TEST(Model, InitialStdAndClamp) {
  PersonalizedActorCritic m;
  EXPECT_NEAR(m.std(), 0.5, 1e-15);
  auto p = m.params();
  p.back() = std::log(0.001);
  m.set_params(p);
  EXPECT_EQ(m.std(), 0.05);
  p.back() = std::log(50.0);
  m.set_params(p);
  EXPECT_EQ(m.std(), 1.0);
}

TEST(Model, ClampedStdHasZeroGradient) {
  Rng rng(2);
  auto m = random_model(rng);
  auto p = m.params();
  p.back() = std::log(0.01);
  m.set_params(p);
  PersonalizedActorCritic::Cache c;
  m.forward(random_observation(rng), c);
  std::vector<double> g(m.param_count(), 0.0);
  m.backward(c, 0.0, 1.0, 0.0, g);
  EXPECT_EQ(g[m.log_std_offset()], 0.0);
}

TEST(Model, LogProbAndValueGradientsMatchFiniteDifference) {
  Rng rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    auto m = random_model(rng);
    const Observation o = random_observation(rng);
    const double a = rng.uniform(-1.2, 1.2);
    const double wv = rng.normal();
    // f = log pi(a|o) + wv * V(o)
    auto f = [&](std::span<const double> p) {
      PersonalizedActorCritic probe = m;
      probe.set_params(p);
      const PolicyOutput po = probe.forward(o);
      return po.dist.log_prob(a) + wv * po.value;
    };
    PersonalizedActorCritic::Cache c;
    const PolicyOutput po = m.forward(o, c);
    const double mu = po.dist.mean, s = po.dist.std;
    std::vector<double> g(m.param_count(), 0.0);
    m.backward(c, (a - mu) / (s * s), (a - mu) * (a - mu) / (s * s * s) - 1.0 / s, wv, g);
    const auto num = numeric_gradient(f, m.params());
    EXPECT_LT(max_relative_error(g, num, 1e-5), 1e-4) << "trial " << trial;
  }
}

TEST(Model, InitializationSplitsStreams) {
  PersonalizedActorCritic a, b;
  Rng s1(5), p1(6), s2(5), p2(7);
  a.initialize(s1, p1);
  b.initialize(s2, p2);
  const auto pa = a.get_flat(), pb = b.get_flat();
  EXPECT_EQ(pa.gather(Partition::Shared), pb.gather(Partition::Shared));
  EXPECT_NE(pa.gather(Partition::Personal), pb.gather(Partition::Personal));
}

}  // namespace
}  // namespace gridfed
