#include "gridfed/trpo.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace gridfed {
namespace {

using testing::brute_force_gae;
using testing::direct_solve;
using testing::max_relative_error;
using testing::random_gae_batch;
using testing::numeric_gradient;
using testing::random_batch;
using testing::random_model;
using testing::ToyGaussianPolicy;

TEST(Gae, MatchesBruteForce) {
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const EpisodeBatch b = random_gae_batch(rng);
    const AdvantageSet a = compute_gae(b, false);
    const auto ref = brute_force_gae(b);
    for (std::size_t t = 0; t < b.size(); ++t) {
      EXPECT_NEAR(a.advantages[t], ref[t], 1e-10);
      EXPECT_NEAR(a.returns[t], ref[t] + b.values[t], 1e-10);
    }
  }
}

TEST(Gae, NormalizedHasZeroMeanUnitStd) {
  Rng rng(8);
  EpisodeBatch b;
  while (b.size() < 20) b.append(random_gae_batch(rng));
  const AdvantageSet a = compute_gae(b, true);
  double mean = 0, var = 0;
  for (double x : a.advantages) mean += x;
  mean /= a.advantages.size();
  for (double x : a.advantages) var += (x - mean) * (x - mean);
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(std::sqrt(var / a.advantages.size()), 1.0, 1e-9);
}

TEST(Gae, SingleTerminalStep) {
  EpisodeBatch b;
  b.observations = {{}};
  b.actions = {0};
  b.log_probs_old = {0};
  b.rewards = {-2.0};
  b.values = {0.5};
  b.dones = {true};
  EXPECT_DOUBLE_EQ(compute_gae(b, false).advantages[0], -2.5);
}

TEST(ConjugateGradient, MatchesDirectSolveOnSpd) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> m(5, std::vector<double>(5)), a(5, std::vector<double>(5, 0.0));
    for (auto& row : m) {
      for (auto& v : row) v = rng.normal();
    }
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) {
        for (int k = 0; k < 5; ++k) a[i][j] += m[k][i] * m[k][j];
      }
      a[i][i] += 0.5;
    }
    std::vector<double> b(5);
    for (auto& v : b) v = rng.normal();
    auto apply = [&](std::span<const double> v) {
      std::vector<double> out(5, 0.0);
      for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) out[i] += a[i][j] * v[j];
      }
      return out;
    };
    const CgResult cg = conjugate_gradient(apply, b, 25, 1e-12);
    const auto ref = direct_solve(a, b);
    const auto ax = apply(cg.x);
    double res = 0;
    for (int i = 0; i < 5; ++i) res += (ax[i] - b[i]) * (ax[i] - b[i]);
    EXPECT_LE(std::sqrt(res), 1e-6);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(cg.x[i], ref[i], 1e-6 * (1 + std::abs(ref[i])));
  }
}

TEST(ConjugateGradient, ZeroRightHandSide) {
  const std::vector<double> b(3, 0.0);
  const CgResult r = conjugate_gradient([](std::span<const double> v) { return std::vector<double>(v.begin(), v.end()); },
                                        b, 10, 1e-10);
  EXPECT_EQ(r.iterations, 0);
  for (double v : r.x) EXPECT_EQ(v, 0.0);
}

TEST(Fisher, OneParameterGaussianIsInverseVariance) {
  for (double sigma : {0.1, 0.3, 0.5, 1.0}) {
    ToyGaussianPolicy pol(0.2, sigma, false);
    EpisodeBatch b;
    b.observations.assign(4, Observation{});
    const std::vector<double> v{1.7};
    const auto fv = fisher_vector_product(pol, b, v, 0.0);
    EXPECT_NEAR(fv[0] / v[0], 1.0 / (sigma * sigma), 1e-3 / (sigma * sigma));
    EXPECT_EQ(pol.params()[0], 0.2);
  }
}

TEST(Fisher, TwoParameterGaussianMatchesAnalyticMatrix) {
  // For mean m and log-std s the Fisher matrix is diag(1/sigma^2, 2).
  ToyGaussianPolicy pol(0.0, 0.4, true);
  EpisodeBatch b;
  b.observations.assign(3, Observation{});
  const std::vector<double> v{0.3, -1.1};
  const auto fv = fisher_vector_product(pol, b, v, 0.1);
  EXPECT_NEAR(fv[0], 0.3 / 0.16 + 0.03, 1e-5);
  EXPECT_NEAR(fv[1], -2.2 - 0.11, 1e-5);
}

TEST(Fisher, RestoresAnchorBitExactly) {
  Rng rng(30);
  auto m = random_model(rng);
  const auto before = m.params();
  const EpisodeBatch b = random_batch(m, rng, 1, 6);
  std::vector<double> v(m.param_count());
  for (auto& x : v) x = rng.normal();
  fisher_vector_product(m, b, v, 0.1);
  EXPECT_EQ(m.params(), before);
}

TEST(Surrogate, GradientMatchesFiniteDifference) {
  Rng rng(40);
  for (int trial = 0; trial < 3; ++trial) {
    auto m = random_model(rng);
    const EpisodeBatch b = random_batch(m, rng, 2, 4);
    const AdvantageSet adv = compute_gae(b);
    // Evaluate away from theta_old so the ratios are not all one.
    auto p = m.params();
    for (auto& x : p) x += 0.01 * rng.normal();
    m.set_params(p);
    const auto an = surrogate_loss(m, b, adv).grad;
    auto f = [&](std::span<const double> q) {
      PersonalizedActorCritic probe = m;
      probe.set_params(q);
      return surrogate_loss(probe, b, adv, false).value;
    };
    EXPECT_LT(max_relative_error(an, numeric_gradient(f, p), 1e-5), 1e-4);
  }
}

TEST(Surrogate, EqualsMeanAdvantageAtOldParameters) {
  Rng rng(41);
  auto m = random_model(rng);
  const EpisodeBatch b = random_batch(m, rng, 2, 5);
  const AdvantageSet adv = compute_gae(b, false);
  double mean = 0;
  for (double a : adv.advantages) mean += a;
  EXPECT_NEAR(surrogate_loss(m, b, adv, false).value, mean / b.size(), 1e-12);
}

TEST(MeanKl, GradientMatchesFiniteDifference) {
  Rng rng(50);
  auto m = random_model(rng);
  const EpisodeBatch b = random_batch(m, rng, 1, 5);
  const auto old = policy_distributions(m, b.observations);
  auto p = m.params();
  for (auto& x : p) x += 0.02 * rng.normal();
  m.set_params(p);
  std::vector<double> g;
  mean_kl(m, b.observations, old, &g);
  auto f = [&](std::span<const double> q) {
    PersonalizedActorCritic probe = m;
    probe.set_params(q);
    return mean_kl(probe, b.observations, old);
  };
  EXPECT_LT(max_relative_error(g, numeric_gradient(f, p), 1e-6), 1e-4);
}

TEST(TrpoUpdate, AcceptedStepsRespectTrustRegion) {
  Rng rng(60);
  TrpoConfig cfg;
  int accepted = 0;
  for (int trial = 0; trial < 5; ++trial) {
    auto m = random_model(rng);
    const EpisodeBatch b = random_batch(m, rng, 3, 8);
    const auto old = policy_distributions(m, b.observations);
    const UpdateReport r = trpo_update(m, b, cfg, [&](const EpisodeBatch&, std::span<const double>,
                                                       std::span<const double> after, const UpdateReport& rep) {
      if (!rep.accepted) return;
      PersonalizedActorCritic probe = m;
      probe.set_params(after);
      EXPECT_LE(mean_kl(probe, b.observations, old), cfg.kl_bound);
    });
    accepted += r.accepted;
    if (r.accepted) {
      EXPECT_LE(r.kl, cfg.kl_bound);
      EXPECT_GT(r.surrogate_gain, 0.0);
      EXPECT_LE(r.value_loss_after, r.value_loss_before);
    }
  }
  EXPECT_GT(accepted, 0);
}

TEST(TrpoUpdate, RejectionRestoresParametersBitExactly) {
  Rng rng(61);
  auto m = random_model(rng);
  EpisodeBatch b = random_batch(m, rng, 2, 6);
  // Constant rewards and values give zero advantages and so no improving step.
  for (auto& r : b.rewards) r = 0.0;
  for (auto& v : b.values) v = 0.0;
  const auto before = m.params();
  bool observed = false;
  TrpoConfig cfg;
  const UpdateReport r = trpo_update(m, b, cfg, [&](const EpisodeBatch&, std::span<const double> bef,
                                                     std::span<const double> after, const UpdateReport& rep) {
    observed = true;
    EXPECT_FALSE(rep.accepted);
    EXPECT_TRUE(std::equal(bef.begin(), bef.end(), after.begin()));
  });
  EXPECT_TRUE(observed);
  EXPECT_FALSE(r.accepted);
  // Policy parameters are unchanged; only the value output unit may move.
  const auto after = m.params();
  const std::size_t w0 = m.value_weight_offset(), b0 = m.value_bias_offset();
  for (std::size_t i = 0; i < before.size(); ++i) {
    if ((i >= w0 && i < w0 + m.value_feature_size()) || i == b0) continue;
    EXPECT_EQ(before[i], after[i]) << i;
  }
}

TEST(TrpoUpdate, NumericalFailureRestores) {
  Rng rng(62);
  auto m = random_model(rng);
  EpisodeBatch b = random_batch(m, rng, 1, 4);
  b.log_probs_old[0] = -1e308;  // ratio overflows to infinity
  const auto before = m.params();
  TrpoConfig cfg;
  std::vector<double> seen_after;
  const UpdateReport r = trpo_update(m, b, cfg, [&](const EpisodeBatch&, std::span<const double>,
                                                     std::span<const double> after, const UpdateReport&) {
    seen_after.assign(after.begin(), after.end());
  });
  EXPECT_TRUE(r.numerical_failure);
  EXPECT_FALSE(r.accepted);
  EXPECT_EQ(seen_after, before);
}

TEST(TrpoUpdate, ToyBanditMovesTowardOptimum) {
  ToyGaussianPolicy pol(-0.5, 0.5, true);
  Rng rng(70);
  TrpoConfig cfg;
  for (int u = 0; u < 30; ++u) {
    EpisodeBatch b;
    for (int i = 0; i < 64; ++i) {
      ToyGaussianPolicy::Cache c;
      const auto s = sample_action(pol.forward({}, c).dist, rng);
      b.observations.push_back({});
      b.actions.push_back(s.raw);
      b.log_probs_old.push_back(s.log_prob);
      b.rewards.push_back(-(s.action - 0.5) * (s.action - 0.5));
      b.values.push_back(0.0);
      b.dones.push_back(true);
    }
    trpo_update(pol, b, cfg);
  }
  EXPECT_LT(std::abs(pol.mean() - 0.5), 0.2);
}

TEST(ValueFit, ReducesLossAndTouchesOnlyValueUnit) {
  Rng rng(80);
  auto m = random_model(rng);
  const EpisodeBatch b = random_batch(m, rng, 2, 8);
  std::vector<double> targets(b.size());
  for (auto& t : targets) t = rng.uniform(-5, 0);
  const auto before = m.params();
  const ValueFit vf = fit_value(m, b.observations, targets, 50, 0.05);
  EXPECT_LT(vf.loss_after, vf.loss_before);
  const auto after = m.params();
  for (std::size_t i = 0; i < before.size(); ++i) {
    const bool value_unit = (i >= m.value_weight_offset() && i < m.value_weight_offset() + m.value_feature_size()) ||
                            i == m.value_bias_offset();
    if (!value_unit) {
      EXPECT_EQ(before[i], after[i]);
    }
  }
  // Policy outputs are unaffected by value fitting.
  for (const auto& o : b.observations) {
    PersonalizedActorCritic ref = m;
    ref.set_params(before);
    EXPECT_EQ(ref.forward(o).dist.mean, m.forward(o).dist.mean);
  }
}

}  // namespace
}  // namespace gridfed
