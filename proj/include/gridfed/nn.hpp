#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gridfed/error.hpp"
#include "gridfed/rng.hpp"

namespace gridfed {

enum class Activation : std::uint8_t { Identity, Tanh, Relu };

enum class Partition : std::uint8_t { Shared = 0, Personal = 1 };

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
  Partition partition = Partition::Shared;

  bool operator==(const Segment&) const = default;
};

// Flat parameter array plus the segment table that names and tags every index range.
struct ParamVector {
  std::vector<double> values;
  std::vector<Segment> layout;

  std::size_t size() const noexcept { return values.size(); }

  // Segments must tile [0, size) in order with no gaps or overlaps.
  void validate() const {
    std::size_t cursor = 0;
    for (const auto& seg : layout) {
      require(seg.offset == cursor, "segment '" + seg.name + "' does not start where the previous one ended");
      cursor += seg.length;
    }
    require(cursor == values.size(), "segment table does not cover the parameter array");
  }

  std::size_t count(Partition p) const {
    std::size_t n = 0;
    for (const auto& seg : layout) {
      if (seg.partition == p) n += seg.length;
    }
    return n;
  }

  // Concatenation of all segments tagged `p`, in layout order.
  std::vector<double> gather(Partition p) const {
    std::vector<double> out;
    out.reserve(count(p));
    for (const auto& seg : layout) {
      if (seg.partition == p) {
        out.insert(out.end(), values.begin() + static_cast<std::ptrdiff_t>(seg.offset),
                   values.begin() + static_cast<std::ptrdiff_t>(seg.offset + seg.length));
      }
    }
    return out;
  }

  void scatter(Partition p, std::span<const double> src) {
    require(src.size() == count(p), "scatter length does not match the partition size");
    std::size_t k = 0;
    for (const auto& seg : layout) {
      if (seg.partition == p) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(k), seg.length,
                    values.begin() + static_cast<std::ptrdiff_t>(seg.offset));
        k += seg.length;
      }
    }
  }

  bool operator==(const ParamVector&) const = default;
};

struct LayerSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::Tanh;
};

// Per-call forward intermediates. activations[0] is the input, activations[k+1] the output of layer k.
struct Tape {
  std::vector<std::vector<double>> activations;
  std::vector<double> scratch_a;
  std::vector<double> scratch_b;
};

// Dense feed-forward network stored as one contiguous parameter block: for each layer the
// row-major out x in weight matrix followed by the bias vector.
class DenseNet {
 public:
  DenseNet() = default;

  explicit DenseNet(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
    require(!layers_.empty(), "network needs at least one layer");
    std::size_t offset = 0;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& l = layers_[k];
      require(l.in > 0 && l.out > 0, "layer dimensions must be positive");
      require(k == 0 || l.in == layers_[k - 1].out, "layer dimensions do not chain");
      offsets_.push_back(offset);
      offset += l.out * l.in + l.out;
    }
    params_.assign(offset, 0.0);
  }

  std::size_t input_size() const { return layers_.front().in; }
  std::size_t output_size() const { return layers_.back().out; }
  std::size_t param_count() const noexcept { return params_.size(); }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  std::size_t weight_offset(std::size_t layer) const { return offsets_.at(layer); }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_.at(layer) + layers_.at(layer).out * layers_.at(layer).in;
  }

  // Glorot-uniform weights, zero biases.
  void init_glorot(Rng& rng) {
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& l = layers_[k];
      const double limit = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
      double* w = params_.data() + offsets_[k];
      for (std::size_t i = 0; i < l.out * l.in; ++i) {
        w[i] = rng.uniform(-limit, limit);
      }
      std::fill_n(params_.data() + bias_offset(k), l.out, 0.0);
    }
  }

  std::vector<Segment> layout(const std::string& prefix, Partition partition, std::size_t base = 0) const {
    std::vector<Segment> segs;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& l = layers_[k];
      const std::string name = prefix + ".l" + std::to_string(k);
      segs.push_back({name + ".weight", base + weight_offset(k), l.out * l.in, partition});
      segs.push_back({name + ".bias", base + bias_offset(k), l.out, partition});
    }
    return segs;
  }

  std::span<const double> forward(std::span<const double> input, Tape& tape) const {
    require(input.size() == input_size(), "input length does not match the first layer");
    tape.activations.resize(layers_.size() + 1);
    tape.activations[0].assign(input.begin(), input.end());
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& l = layers_[k];
      const double* w = params_.data() + offsets_[k];
      const double* b = w + l.out * l.in;
      const double* x = tape.activations[k].data();
      auto& y = tape.activations[k + 1];
      y.resize(l.out);
      for (std::size_t o = 0; o < l.out; ++o) {
        y[o] = activate(l.activation, dot_product(w + o * l.in, x, l.in) + b[o]);
      }
    }
    return tape.activations.back();
  }

  std::vector<double> forward(std::span<const double> input) const {
    Tape tape;
    auto out = forward(input, tape);
    return {out.begin(), out.end()};
  }

  // Accumulates d<output, output_grad>/d(params) into `param_grad` and, if non-empty, writes the
  // input gradient into `input_grad`. `tape` must hold the forward pass for the same input.
  void backward(const Tape& tape, std::span<const double> output_grad, std::span<double> param_grad,
                std::span<double> input_grad, Tape& work) const {
    require(output_grad.size() == output_size(), "output gradient length does not match the last layer");
    require(param_grad.size() == param_count(), "parameter gradient buffer has the wrong length");
    require(input_grad.empty() || input_grad.size() == input_size(), "input gradient buffer has the wrong length");
    require(tape.activations.size() == layers_.size() + 1, "tape does not match this network");

    auto& g = work.scratch_a;
    auto& gx = work.scratch_b;
    g.assign(output_grad.begin(), output_grad.end());
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const auto& l = layers_[k];
      const double* w = params_.data() + offsets_[k];
      const double* x = tape.activations[k].data();
      const double* y = tape.activations[k + 1].data();
      double* gw = param_grad.data() + offsets_[k];
      double* gb = gw + l.out * l.in;
      const bool need_input_grad = k > 0 || !input_grad.empty();
      if (need_input_grad) {
        gx.assign(l.in, 0.0);
      }
      for (std::size_t o = 0; o < l.out; ++o) {
        const double dz = g[o] * activation_derivative(l.activation, y[o]);
        if (dz == 0.0) continue;
        gb[o] += dz;
        double* grow = gw + o * l.in;
        if (need_input_grad) {
          const double* row = w + o * l.in;
          double* gxp = gx.data();
          for (std::size_t i = 0; i < l.in; ++i) {
            grow[i] += dz * x[i];
            gxp[i] += row[i] * dz;
          }
        } else {
          for (std::size_t i = 0; i < l.in; ++i) {
            grow[i] += dz * x[i];
          }
        }
      }
      if (need_input_grad) {
        std::swap(g, gx);
      }
    }
    if (!input_grad.empty()) {
      std::copy(g.begin(), g.end(), input_grad.begin());
    }
  }

  ParamVector get_flat(const std::string& prefix = "net", Partition partition = Partition::Shared) const {
    return {params_, layout(prefix, partition)};
  }

  void set_flat(std::span<const double> values) {
    require(values.size() == params_.size(), "flat parameter length mismatch");
    std::copy(values.begin(), values.end(), params_.begin());
  }

  void set_flat(const ParamVector& pv) { set_flat(pv.values); }

  static double activate(Activation a, double z) {
    switch (a) {
      case Activation::Tanh:
        return std::tanh(z);
      case Activation::Relu:
        return z > 0.0 ? z : 0.0;
      case Activation::Identity:
        break;
    }
    return z;
  }

  // Derivative expressed through the activation output y.
  static double activation_derivative(Activation a, double y) {
    switch (a) {
      case Activation::Tanh:
        return 1.0 - y * y;
      case Activation::Relu:
        return y > 0.0 ? 1.0 : 0.0;
      case Activation::Identity:
        break;
    }
    return 1.0;
  }

 private:
  // Four interleaved partial sums; the summation order is fixed, so results are reproducible.
  static double dot_product(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      s0 += a[i] * b[i];
      s1 += a[i + 1] * b[i + 1];
      s2 += a[i + 2] * b[i + 2];
      s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
  }

  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

}  // namespace gridfed
