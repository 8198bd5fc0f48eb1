#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "gridfed/batch.hpp"
#include "gridfed/error.hpp"
#include "gridfed/policy.hpp"

namespace gridfed {

// What TRPO needs from a differentiable Gaussian policy over scalar actions.
template <class M>
concept TrpoPolicy = requires(M& m, const M& cm, const Observation& o, typename M::Cache& c, std::span<double> g,
                              std::span<const double> p) {
  { cm.param_count() } -> std::convertible_to<std::size_t>;
  { cm.params() } -> std::convertible_to<std::vector<double>>;
  m.set_params(p);
  { cm.forward(o, c) } -> std::convertible_to<PolicyOutput>;
  cm.backward(c, 1.0, 1.0, 1.0, g);
};

// Policies whose critic is a linear read-out of cached features (the value output unit).
template <class M>
concept LinearValueHead = requires(const M& cm, const typename M::Cache& c) {
  { cm.value_weight_offset() } -> std::convertible_to<std::size_t>;
  { cm.value_bias_offset() } -> std::convertible_to<std::size_t>;
  { cm.value_features(c) } -> std::convertible_to<std::span<const double>>;
};

struct TrpoConfig {
  double kl_bound = 0.01;
  int cg_iters = 10;
  double cg_damping = 0.1;
  double cg_tol = 1e-10;
  double backtrack_coeff = 0.8;
  int max_backtracks = 10;
  int value_epochs = 5;
  double value_lr = 1e-3;
  // Drop Fisher cross terms between parameter blocks (see trpo_update).
  bool block_diagonal_fisher = true;

  void validate() const {
    require(kl_bound > 0.0, "kl_bound must be positive");
    require(cg_iters > 0, "cg_iters must be positive");
    require(cg_damping > 0.0, "cg_damping must be positive");
    require(backtrack_coeff > 0.0 && backtrack_coeff < 1.0, "backtrack_coeff must lie in (0, 1)");
    require(max_backtracks > 0, "max_backtracks must be positive");
    require(value_epochs > 0 && value_lr > 0.0, "value fitting settings must be positive");
  }
};

struct AdvantageSet {
  std::vector<double> advantages;  // normalized
  std::vector<double> returns;     // value targets: raw advantage + V(s_t)
};

// GAE(gamma, lambda) by the backward recursion A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}.
inline AdvantageSet compute_gae(const EpisodeBatch& batch, bool normalize = true) {
  batch.validate();
  const std::size_t n = batch.size();
  AdvantageSet out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const bool terminal = batch.dones[i];
    const double next_value = terminal ? 0.0 : batch.values[i + 1];
    const double delta = batch.rewards[i] + batch.gamma * next_value - batch.values[i];
    const double adv = delta + (terminal ? 0.0 : batch.gamma * batch.lambda * next_adv);
    out.advantages[i] = adv;
    out.returns[i] = adv + batch.values[i];
    next_adv = adv;
  }
  if (normalize && n > 0) {
    const double mean = std::accumulate(out.advantages.begin(), out.advantages.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double& a : out.advantages) {
      a -= mean;
      var += a * a;
    }
    const double stddev = std::sqrt(var / static_cast<double>(n));
    // Re-centre after scaling so the mean is zero to rounding.
    if (stddev > 0.0) {
      for (double& a : out.advantages) a /= stddev;
    }
    const double residual = std::accumulate(out.advantages.begin(), out.advantages.end(), 0.0) / static_cast<double>(n);
    for (double& a : out.advantages) a -= residual;
  }
  return out;
}

struct SurrogateResult {
  double value = 0.0;
  std::vector<double> grad;
};

// L(theta) = mean_i exp(log pi_theta(a_i|s_i) - log pi_old(a_i|s_i)) * A_i and its gradient at the
// model's current parameters.
template <TrpoPolicy M>
SurrogateResult surrogate_loss(const M& model, const EpisodeBatch& batch, const AdvantageSet& adv,
                               bool with_grad = true) {
  const std::size_t n = batch.size();
  require(adv.advantages.size() == n, "advantage count does not match the batch");
  require(n > 0, "empty batch");
  SurrogateResult out;
  if (with_grad) out.grad.assign(model.param_count(), 0.0);
  typename M::Cache cache;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const PolicyOutput po = model.forward(batch.observations[i], cache);
    const double a = batch.actions[i];
    const double ratio = std::exp(po.dist.log_prob(a) - batch.log_probs_old[i]);
    if (!std::isfinite(ratio)) {
      throw NumericalError("non-finite importance ratio in surrogate objective");
    }
    const double w = ratio * adv.advantages[i] * inv_n;
    out.value += w;
    if (with_grad && w != 0.0) {
      const double mu = po.dist.mean;
      const double s = po.dist.std;
      const double d_mean = w * (a - mu) / (s * s);
      const double d_std = w * ((a - mu) * (a - mu) / (s * s * s) - 1.0 / s);
      model.backward(cache, d_mean, d_std, 0.0, out.grad);
    }
  }
  return out;
}

template <TrpoPolicy M>
std::vector<PolicyDistribution> policy_distributions(const M& model, const std::vector<Observation>& observations) {
  std::vector<PolicyDistribution> out;
  out.reserve(observations.size());
  typename M::Cache cache;
  for (const auto& o : observations) {
    out.push_back(model.forward(o, cache).dist);
  }
  return out;
}

// Mean KL(old_i || pi_theta(.|s_i)) at the model's current parameters, optionally with its gradient.
template <TrpoPolicy M>
double mean_kl(const M& model, const std::vector<Observation>& observations,
               const std::vector<PolicyDistribution>& old_dists, std::vector<double>* grad = nullptr) {
  require(observations.size() == old_dists.size() && !observations.empty(), "KL inputs must be non-empty and aligned");
  if (grad) grad->assign(model.param_count(), 0.0);
  typename M::Cache cache;
  const double inv_n = 1.0 / static_cast<double>(observations.size());
  double total = 0.0;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const PolicyOutput po = model.forward(observations[i], cache);
    total += gaussian_kl(old_dists[i], po.dist);
    if (grad) {
      const KlGradient kg = gaussian_kl_grad(old_dists[i], po.dist);
      model.backward(cache, kg.d_mean * inv_n, kg.d_std * inv_n, 0.0, *grad);
    }
  }
  return total * inv_n;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(std::span<const double> a) {
  for (double v : a) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// Damped Fisher-vector products at an anchor theta_k, where the Fisher matrix is the Hessian of the
// mean KL(pi_k || pi_theta). Products are central differences of the KL gradient along v:
//   F v ~= (grad KL(theta_k + eps v) - grad KL(theta_k - eps v)) / (2 eps),  eps = 1e-5 / |v|
// The model is moved to the probe points and always returned to theta_k bit-exactly.
template <TrpoPolicy M>
class FisherOperator {
 public:
  FisherOperator(M& model, std::vector<Observation> observations, double damping)
      : model_(model),
        anchor_(model.params()),
        observations_(std::move(observations)),
        old_dists_(policy_distributions(model, observations_)),
        damping_(damping) {}

  std::vector<double> operator()(std::span<const double> v) const {
    require(v.size() == anchor_.size(), "direction length does not match the parameter count");
    std::vector<double> out(v.size(), 0.0);
    const double vn = norm(v);
    if (vn == 0.0) return out;
    const double eps = 1e-5 / vn;
    std::vector<double> probe(anchor_.size());
    std::vector<double> g_plus, g_minus;
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = anchor_[i] + eps * v[i];
    model_.set_params(probe);
    mean_kl(model_, observations_, old_dists_, &g_plus);
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = anchor_[i] - eps * v[i];
    model_.set_params(probe);
    mean_kl(model_, observations_, old_dists_, &g_minus);
    model_.set_params(anchor_);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = (g_plus[i] - g_minus[i]) / (2.0 * eps) + damping_ * v[i];
    }
    if (!all_finite(out)) {
      throw NumericalError("non-finite Fisher-vector product");
    }
    return out;
  }

  const std::vector<double>& anchor() const noexcept { return anchor_; }
  const std::vector<PolicyDistribution>& old_distributions() const noexcept { return old_dists_; }
  const std::vector<Observation>& observations() const noexcept { return observations_; }

 private:
  M& model_;
  std::vector<double> anchor_;
  std::vector<Observation> observations_;
  std::vector<PolicyDistribution> old_dists_;
  double damping_;
};

template <TrpoPolicy M>
std::vector<double> fisher_vector_product(M& model, const EpisodeBatch& batch, std::span<const double> v,
                                          double damping) {
  return FisherOperator<M>(model, batch.observations, damping)(v);
}

struct CgResult {
  std::vector<double> x;
  int iterations = 0;
  double residual_norm = 0.0;  // |b - A x| as tracked by the recursion
};

// Conjugate gradient for A x = b with A symmetric positive definite, starting from x = 0.
inline CgResult conjugate_gradient(const std::function<std::vector<double>(std::span<const double>)>& apply,
                                   std::span<const double> b, int iters, double tol) {
  CgResult res;
  res.x.assign(b.size(), 0.0);
  std::vector<double> r(b.begin(), b.end());
  std::vector<double> p = r;
  double rr = dot(r, r);
  res.residual_norm = std::sqrt(rr);
  for (int k = 0; k < iters && res.residual_norm > tol; ++k) {
    const std::vector<double> ap = apply(p);
    const double pap = dot(p, ap);
    if (!(pap > 0.0)) break;
    const double alpha = rr / pap;
    for (std::size_t i = 0; i < b.size(); ++i) {
      res.x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    const double rr_new = dot(r, r);
    res.iterations = k + 1;
    res.residual_norm = std::sqrt(rr_new);
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < b.size(); ++i) p[i] = r[i] + beta * p[i];
  }
  return res;
}

struct UpdateReport {
  bool accepted = false;
  double kl = 0.0;
  double surrogate_gain = 0.0;
  int backtracks = 0;
  double value_loss_before = 0.0;
  double value_loss_after = 0.0;
  int cg_iterations = 0;
  double cg_residual = 0.0;
  bool numerical_failure = false;
};

// Called after the trust-region step and before value fitting, with the parameters on entry and
// after the step (identical when the step was rejected).
using PolicyStepObserver = std::function<void(const EpisodeBatch&, std::span<const double> before,
                                              std::span<const double> after, const UpdateReport&)>;

struct ValueFit {
  double loss_before = 0.0;
  double loss_after = 0.0;
};

// Full-batch gradient descent on mean (V(s) - target)^2, touching only the value output unit.
template <class M>
  requires TrpoPolicy<M> && LinearValueHead<M>
ValueFit fit_value(M& model, const std::vector<Observation>& observations, const std::vector<double>& targets,
                   int epochs, double lr) {
  const std::size_t n = observations.size();
  require(n == targets.size() && n > 0, "value targets must align with observations");
  std::vector<double> params = model.params();
  const std::size_t w_off = model.value_weight_offset();
  const std::size_t b_off = model.value_bias_offset();

  typename M::Cache cache;
  std::vector<double> features;
  std::size_t dim = 0;
  for (const auto& o : observations) {
    model.forward(o, cache);
    const auto f = model.value_features(cache);
    dim = f.size();
    features.insert(features.end(), f.begin(), f.end());
  }

  auto loss_and_grad = [&](std::vector<double>* gw, double* gb) {
    double loss = 0.0;
    if (gw) gw->assign(dim, 0.0);
    if (gb) *gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* f = features.data() + i * dim;
      double v = params[b_off];
      for (std::size_t j = 0; j < dim; ++j) v += params[w_off + j] * f[j];
      const double err = v - targets[i];
      loss += err * err;
      if (gw) {
        const double s = 2.0 * err / static_cast<double>(n);
        for (std::size_t j = 0; j < dim; ++j) (*gw)[j] += s * f[j];
        *gb += s;
      }
    }
    return loss / static_cast<double>(n);
  };

  ValueFit fit;
  std::vector<double> gw;
  double gb = 0.0;
  fit.loss_before = loss_and_grad(&gw, &gb);
  for (int e = 0; e < epochs; ++e) {
    if (e > 0) loss_and_grad(&gw, &gb);
    for (std::size_t j = 0; j < dim; ++j) params[w_off + j] -= lr * gw[j];
    params[b_off] -= lr * gb;
  }
  fit.loss_after = loss_and_grad(nullptr, nullptr);
  model.set_params(params);
  return fit;
}

// One trust-region policy step followed by value fitting. The batch must have been generated by the
// model's current parameters.
//
// `blocks` optionally assigns each parameter a block id. With cfg.block_diagonal_fisher the CG solve
// uses the Fisher matrix with cross-block entries zeroed, so each block's share of the step is an
// ascent direction by itself. The step length and the KL check still use the full Fisher / exact KL.
template <TrpoPolicy M>
UpdateReport trpo_update(M& model, const EpisodeBatch& batch, const TrpoConfig& cfg,
                         const PolicyStepObserver& observer = {}, std::span<const std::uint8_t> blocks = {}) {
  cfg.validate();
  batch.validate();
  require(batch.size() > 0, "empty batch");
  const AdvantageSet adv = compute_gae(batch);
  const std::vector<double> theta_k = model.params();
  UpdateReport report;

  try {
    const SurrogateResult base = surrogate_loss(model, batch, adv);
    if (!all_finite(base.grad)) throw NumericalError("non-finite surrogate gradient");
    if (norm(base.grad) > 0.0) {
      FisherOperator<M> fisher(model, batch.observations, cfg.cg_damping);
      std::function<std::vector<double>(std::span<const double>)> apply = std::cref(fisher);
      if (cfg.block_diagonal_fisher && !blocks.empty()) {
        require(blocks.size() == theta_k.size(), "block ids must cover every parameter");
        apply = [&fisher, blocks](std::span<const double> v) {
          std::vector<double> out(v.size(), 0.0), part(v.size());
          std::uint8_t max_id = 0;
          for (auto b : blocks) max_id = std::max(max_id, b);
          for (unsigned id = 0; id <= max_id; ++id) {
            bool any = false;
            for (std::size_t i = 0; i < v.size(); ++i) {
              part[i] = blocks[i] == id ? v[i] : 0.0;
              any = any || part[i] != 0.0;
            }
            if (!any) continue;
            const std::vector<double> fp = fisher(part);
            for (std::size_t i = 0; i < v.size(); ++i) {
              if (blocks[i] == id) out[i] = fp[i];
            }
          }
          return out;
        };
      }
      const CgResult cg = conjugate_gradient(apply, base.grad, cfg.cg_iters, cfg.cg_tol);
      report.cg_iterations = cg.iterations;
      report.cg_residual = cg.residual_norm;
      const std::vector<double> fx = fisher(cg.x);
      const double shs = dot(cg.x, fx);
      if (!std::isfinite(shs) || shs <= 0.0) throw NumericalError("non-positive curvature along the CG direction");
      const double step = std::sqrt(2.0 * cfg.kl_bound / shs);

      std::vector<double> candidate(theta_k.size());
      double scale = step;
      for (int j = 0; j <= cfg.max_backtracks; ++j, scale *= cfg.backtrack_coeff) {
        report.backtracks = j;
        for (std::size_t i = 0; i < candidate.size(); ++i) candidate[i] = theta_k[i] + scale * cg.x[i];
        model.set_params(candidate);
        const double kl = mean_kl(model, batch.observations, fisher.old_distributions());
        const double gain = surrogate_loss(model, batch, adv, false).value - base.value;
        if (std::isfinite(kl) && std::isfinite(gain) && gain > 0.0 && kl <= cfg.kl_bound) {
          report.accepted = true;
          report.kl = kl;
          report.surrogate_gain = gain;
          break;
        }
      }
    }
  } catch (const NumericalError&) {
    report = UpdateReport{};
    report.numerical_failure = true;
  }
  if (!report.accepted) {
    model.set_params(theta_k);
  }
  if (observer) {
    const std::vector<double> after = model.params();
    observer(batch, theta_k, after, report);
  }
  if constexpr (LinearValueHead<M>) {
    const ValueFit vf = fit_value(model, batch.observations, adv.returns, cfg.value_epochs, cfg.value_lr);
    report.value_loss_before = vf.loss_before;
    report.value_loss_after = vf.loss_after;
  }
  return report;
}

}  // namespace gridfed
