#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gridfed/batch.hpp"
#include "gridfed/error.hpp"
#include "gridfed/nn.hpp"
#include "gridfed/rng.hpp"

namespace gridfed {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

struct PolicyDistribution {
  double mean = 0.0;
  double std = 1.0;

  double log_prob(double a) const {
    const double z = (a - mean) / std;
    return -0.5 * z * z - std::log(std) - kHalfLog2Pi;
  }
};

// KL(old || new) for univariate Gaussians.
inline double gaussian_kl(const PolicyDistribution& old_d, const PolicyDistribution& new_d) {
  require(old_d.std > 0.0 && new_d.std > 0.0, "standard deviations must be positive");
  const double dm = old_d.mean - new_d.mean;
  return std::log(new_d.std / old_d.std) + (old_d.std * old_d.std + dm * dm) / (2.0 * new_d.std * new_d.std) - 0.5;
}

// Partial derivatives of KL(old || new) with respect to the new mean and new std.
struct KlGradient {
  double d_mean = 0.0;
  double d_std = 0.0;
};

inline KlGradient gaussian_kl_grad(const PolicyDistribution& old_d, const PolicyDistribution& new_d) {
  const double s2 = new_d.std * new_d.std;
  const double dm = new_d.mean - old_d.mean;
  return {dm / s2, 1.0 / new_d.std - (old_d.std * old_d.std + dm * dm) / (s2 * new_d.std)};
}

struct SampledAction {
  double action = 0.0;  // clamped to [-1, 1], what the environment receives
  double raw = 0.0;     // the Gaussian sample
  double log_prob = 0.0;
};

// log_prob is evaluated at the raw sample; the clamp is treated as an environment-side projection.
inline SampledAction sample_action(const PolicyDistribution& dist, Rng& rng) {
  const double raw = rng.normal(dist.mean, dist.std);
  return {std::clamp(raw, -1.0, 1.0), raw, dist.log_prob(raw)};
}

// Fixed affine feature scaling applied before every network.
//   T: (x - 25) / 15, H: (x - 0.5) / 0.3, soc: x, net: x / 10, price: x / 0.4, hour: x / 23
struct ObservationScaling {
  static constexpr std::array<double, 6> kShift{25.0, 0.5, 0.0, 0.0, 0.0, 0.0};
  static constexpr std::array<double, 6> kScale{15.0, 0.3, 1.0, 10.0, 0.4, 23.0};

  static std::array<double, 6> normalize(const Observation& o) {
    const std::array<double, 6> raw{o.t_out, o.h_out, o.soc, o.net_consumption, o.price, static_cast<double>(o.hour)};
    std::array<double, 6> out{};
    for (std::size_t i = 0; i < 6; ++i) {
      out[i] = (raw[i] - kShift[i]) / kScale[i];
    }
    return out;
  }

  static std::array<double, 6> denormalize(const std::array<double, 6>& x) {
    std::array<double, 6> out{};
    for (std::size_t i = 0; i < 6; ++i) {
      out[i] = x[i] * kScale[i] + kShift[i];
    }
    return out;
  }
};

struct ModelConfig {
  std::size_t encoding_dim = 8;
  std::size_t encoder_hidden = 32;
  std::size_t trunk_hidden = 64;
  std::size_t trunk_out = 32;
  std::size_t processor_hidden = 32;
  std::size_t processor_out = 16;
  std::size_t head_hidden = 32;
  double sigma_min = 0.05;
  double sigma_max = 1.0;
  double log_std_init = -0.69314718055994530942;  // log(0.5)
  // When false every parameter is tagged Shared (the fully federated ablation).
  bool personalized = true;
};

struct PolicyOutput {
  PolicyDistribution dist;
  double value = 0.0;
};

// Actor-critic with a client-private encoder:
//
//   obs(6) --> encoder --> encoding(k)                                  [Personal]
//   (T, H, encoding) --> trunk --> t(32)                                [Shared]
//   (soc, net, price, hour) --> processor --> p(16)                     [Shared]
//   (t, p) --> head --> (mean_pre, value);  mean = tanh(mean_pre)       [Shared]
//   std = clamp(exp(log_std), sigma_min, sigma_max)                     [Shared]
//
// Flat layout: encoder | trunk | processor | head | log_std.
class PersonalizedActorCritic {
 public:
  struct Cache {
    std::array<double, 6> features{};
    std::vector<double> trunk_in;
    std::vector<double> head_in;
    Tape encoder, trunk, processor, head, work;
    std::vector<double> head_in_grad, trunk_in_grad, enc_out_grad, trunk_out_grad, proc_out_grad;
    PolicyOutput out;
    double raw_std = 1.0;
  };

  PersonalizedActorCritic() : PersonalizedActorCritic(ModelConfig{}) {}

  explicit PersonalizedActorCritic(const ModelConfig& cfg)
      : cfg_(cfg),
        encoder_({{6, cfg.encoder_hidden, Activation::Tanh}, {cfg.encoder_hidden, cfg.encoding_dim, Activation::Tanh}}),
        trunk_({{2 + cfg.encoding_dim, cfg.trunk_hidden, Activation::Tanh},
                {cfg.trunk_hidden, cfg.trunk_out, Activation::Tanh}}),
        processor_({{4, cfg.processor_hidden, Activation::Tanh},
                    {cfg.processor_hidden, cfg.processor_out, Activation::Tanh}}),
        head_({{cfg.trunk_out + cfg.processor_out, cfg.head_hidden, Activation::Tanh},
               {cfg.head_hidden, 2, Activation::Identity}}),
        log_std_(cfg.log_std_init) {
    require(cfg.sigma_min > 0.0 && cfg.sigma_min <= cfg.sigma_max, "invalid sigma clamp range");
  }

  const ModelConfig& config() const noexcept { return cfg_; }

  std::size_t param_count() const noexcept {
    return encoder_.param_count() + trunk_.param_count() + processor_.param_count() + head_.param_count() + 1;
  }

  std::size_t encoder_offset() const noexcept { return 0; }
  std::size_t trunk_offset() const noexcept { return encoder_.param_count(); }
  std::size_t processor_offset() const noexcept { return trunk_offset() + trunk_.param_count(); }
  std::size_t head_offset() const noexcept { return processor_offset() + processor_.param_count(); }
  std::size_t log_std_offset() const noexcept { return head_offset() + head_.param_count(); }

  // Shared-trunk init from one stream, encoder from a per-client stream.
  void initialize(Rng& shared_rng, Rng& personal_rng) {
    trunk_.init_glorot(shared_rng);
    processor_.init_glorot(shared_rng);
    head_.init_glorot(shared_rng);
    encoder_.init_glorot(personal_rng);
    log_std_ = cfg_.log_std_init;
  }

  std::vector<Segment> layout() const {
    const Partition enc_tag = cfg_.personalized ? Partition::Personal : Partition::Shared;
    std::vector<Segment> segs = encoder_.layout("encoder", enc_tag, encoder_offset());
    auto append = [&segs](std::vector<Segment> more) { segs.insert(segs.end(), more.begin(), more.end()); };
    append(trunk_.layout("trunk", Partition::Shared, trunk_offset()));
    append(processor_.layout("processor", Partition::Shared, processor_offset()));
    append(head_.layout("head", Partition::Shared, head_offset()));
    segs.push_back({"log_std", log_std_offset(), 1, Partition::Shared});
    return segs;
  }

  std::vector<double> params() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const DenseNet* net : nets()) {
      out.insert(out.end(), net->params().begin(), net->params().end());
    }
    out.push_back(log_std_);
    return out;
  }

  void set_params(std::span<const double> values) {
    require(values.size() == param_count(), "flat parameter length mismatch");
    std::size_t offset = 0;
    for (DenseNet* net : nets()) {
      net->set_flat(values.subspan(offset, net->param_count()));
      offset += net->param_count();
    }
    log_std_ = values[offset];
  }

  ParamVector get_flat() const { return {params(), layout()}; }

  void set_flat(const ParamVector& pv) {
    require(pv.layout == layout(), "parameter layout does not match this model");
    set_params(pv.values);
  }

  double raw_std() const { return std::exp(log_std_); }
  double std() const { return std::clamp(raw_std(), cfg_.sigma_min, cfg_.sigma_max); }

  std::vector<double> encode_personal(const Observation& obs) const {
    const auto x = ObservationScaling::normalize(obs);
    auto enc = encoder_.forward(x);
    return enc;
  }

  PolicyOutput forward(const Observation& obs, Cache& c) const {
    c.features = ObservationScaling::normalize(obs);
    const auto& x = c.features;
    const auto enc = encoder_.forward(x, c.encoder);

    c.trunk_in.resize(2 + enc.size());
    c.trunk_in[0] = x[0];
    c.trunk_in[1] = x[1];
    std::copy(enc.begin(), enc.end(), c.trunk_in.begin() + 2);
    const auto t = trunk_.forward(c.trunk_in, c.trunk);

    const std::array<double, 4> rest{x[2], x[3], x[4], x[5]};
    const auto p = processor_.forward(rest, c.processor);

    c.head_in.resize(t.size() + p.size());
    std::copy(t.begin(), t.end(), c.head_in.begin());
    std::copy(p.begin(), p.end(), c.head_in.begin() + static_cast<std::ptrdiff_t>(t.size()));
    const auto h = head_.forward(c.head_in, c.head);

    c.raw_std = raw_std();
    c.out.dist = {std::tanh(h[0]), std::clamp(c.raw_std, cfg_.sigma_min, cfg_.sigma_max)};
    c.out.value = h[1];
    return c.out;
  }

  PolicyOutput forward(const Observation& obs) const {
    Cache c;
    return forward(obs, c);
  }

  // Accumulates into `grad` the gradient of d_mean * mean + d_std * std + d_value * value for the
  // forward pass held in `c`.
  void backward(Cache& c, double d_mean, double d_std, double d_value, std::span<double> grad) const {
    require(grad.size() == param_count(), "gradient buffer has the wrong length");
    if (d_std != 0.0 && c.raw_std > cfg_.sigma_min && c.raw_std < cfg_.sigma_max) {
      grad[log_std_offset()] += d_std * c.raw_std;
    }
    if (d_mean == 0.0 && d_value == 0.0) {
      return;
    }
    const double m = c.out.dist.mean;
    const std::array<double, 2> head_grad{d_mean * (1.0 - m * m), d_value};
    c.head_in_grad.assign(head_.input_size(), 0.0);
    head_.backward(c.head, head_grad, grad.subspan(head_offset(), head_.param_count()), c.head_in_grad, c.work);

    const std::size_t t_out = trunk_.output_size();
    const std::span<const double> hig(c.head_in_grad);
    c.trunk_in_grad.assign(trunk_.input_size(), 0.0);
    trunk_.backward(c.trunk, hig.first(t_out), grad.subspan(trunk_offset(), trunk_.param_count()), c.trunk_in_grad,
                    c.work);
    processor_.backward(c.processor, hig.subspan(t_out), grad.subspan(processor_offset(), processor_.param_count()),
                        {}, c.work);
    const std::span<const double> tig(c.trunk_in_grad);
    encoder_.backward(c.encoder, tig.subspan(2), grad.subspan(encoder_offset(), encoder_.param_count()), {}, c.work);
  }

  // Value output unit of the head: the weights feeding output 1 and its bias.
  std::size_t value_weight_offset() const {
    const std::size_t last = head_.layers().size() - 1;
    return head_offset() + head_.weight_offset(last) + head_.layers()[last].in;
  }
  std::size_t value_bias_offset() const {
    const std::size_t last = head_.layers().size() - 1;
    return head_offset() + head_.bias_offset(last) + 1;
  }
  std::size_t value_feature_size() const { return head_.layers().back().in; }

  // Input to the head's output layer for the forward pass in `c`.
  std::span<const double> value_features(const Cache& c) const {
    return c.head.activations[head_.layers().size() - 1];
  }

  const DenseNet& encoder() const noexcept { return encoder_; }
  const DenseNet& trunk() const noexcept { return trunk_; }
  const DenseNet& processor() const noexcept { return processor_; }
  const DenseNet& head() const noexcept { return head_; }

 private:
  std::array<const DenseNet*, 4> nets() const { return {&encoder_, &trunk_, &processor_, &head_}; }
  std::array<DenseNet*, 4> nets() { return {&encoder_, &trunk_, &processor_, &head_}; }

  ModelConfig cfg_;
  DenseNet encoder_;
  DenseNet trunk_;
  DenseNet processor_;
  DenseNet head_;
  double log_std_ = 0.0;
};

}  // namespace gridfed
