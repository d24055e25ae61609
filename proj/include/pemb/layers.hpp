#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "pemb/autodiff.hpp"
#include "pemb/ops.hpp"
#include "pemb/rng.hpp"

namespace pemb {

/// Fan-in scaled uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
Tensor<T> fan_in_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(uniform(rng, -bound, bound));
  return t;
}

template <class T>
class Dense {
 public:
  Dense() = default;
  Dense(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
        bool zero_init = false)
      : in_(in), out_(out) {
    weight_ = &params.add(name + ".weight", zero_init ? Tensor<T>(Shape{out, in})
                                                      : fan_in_uniform<T>(Shape{out, in}, in, rng));
    bias_ = &params.add(name + ".bias", zero_init ? Tensor<T>(Shape{out})
                                                  : fan_in_uniform<T>(Shape{out}, in, rng));
  }

  Var<T> operator()(Var<T> x) const {
    auto& g = *x.graph;
    return linear(x, g.param(*weight_), g.param(*bias_));
  }

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Parameter<T>* weight_ = nullptr;
  Parameter<T>* bias_ = nullptr;
};

template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterSet<T>& params, const std::string& name, std::size_t in_ch, std::size_t out_ch,
         std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng, bool bias = true)
      : stride_(stride), pad_(pad), out_ch_(out_ch) {
    const std::size_t fan_in = in_ch * kernel * kernel;
    weight_ = &params.add(name + ".weight",
                          fan_in_uniform<T>(Shape{out_ch, in_ch, kernel, kernel}, fan_in, rng));
    if (bias) bias_ = &params.add(name + ".bias", fan_in_uniform<T>(Shape{out_ch}, fan_in, rng));
  }

  // Without a bias parameter a zero constant is used; a bias ahead of a
  // batch-statistics normalisation would have an identically zero gradient.
  Var<T> operator()(Var<T> x) const {
    auto& g = *x.graph;
    auto b = bias_ ? g.param(*bias_) : g.constant(Tensor<T>(Shape{out_ch_}));
    return conv2d(x, g.param(*weight_), b, stride_, pad_);
  }

 private:
  std::size_t stride_ = 1, pad_ = 0, out_ch_ = 0;
  Parameter<T>* weight_ = nullptr;
  Parameter<T>* bias_ = nullptr;
};

template <class T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterSet<T>& params, const std::string& name, std::size_t in_ch,
                  std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t pad,
                  Rng& rng)
      : stride_(stride), pad_(pad) {
    // Each output pixel receives about in_ch * (kernel/stride)^2 taps.
    const std::size_t taps = std::max<std::size_t>(1, kernel / stride);
    const std::size_t fan_in = in_ch * taps * taps;
    weight_ = &params.add(name + ".weight",
                          fan_in_uniform<T>(Shape{in_ch, out_ch, kernel, kernel}, fan_in, rng));
    bias_ = &params.add(name + ".bias", fan_in_uniform<T>(Shape{out_ch}, fan_in, rng));
  }

  Var<T> operator()(Var<T> x) const {
    auto& g = *x.graph;
    return conv_transpose2d(x, g.param(*weight_), g.param(*bias_), stride_, pad_);
  }

 private:
  std::size_t stride_ = 1, pad_ = 0;
  Parameter<T>* weight_ = nullptr;
  Parameter<T>* bias_ = nullptr;
};

/// Learnable affine batch norm plus running statistics. The statistics are
/// not parameters; they are exported separately in checkpoints.
template <class T>
class BatchNorm {
 public:
  BatchNorm() = default;
  /// Without `affine` the scale and shift are fixed at 1 and 0.
  BatchNorm(ParameterSet<T>& params, const std::string& name, std::size_t channels, bool affine = true)
      : name_(name), stats_(channels) {
    if (!affine) return;
    gamma_ = &params.add(name + ".gamma", Tensor<T>(Shape{channels}, T(1)));
    beta_ = &params.add(name + ".beta", Tensor<T>(Shape{channels}));
  }

  Var<T> operator()(Var<T> x, bool training, bool update_stats = true) {
    auto& g = *x.graph;
    const std::size_t c = stats_.running_mean.size();
    auto gamma = gamma_ ? g.param(*gamma_) : g.constant(Tensor<T>(Shape{c}, T(1)));
    auto beta = beta_ ? g.param(*beta_) : g.constant(Tensor<T>(Shape{c}));
    return batch_norm(x, gamma, beta, stats_, training, update_stats);
  }

  const std::string& name() const { return name_; }
  BatchNormStats<T>& stats() { return stats_; }
  const BatchNormStats<T>& stats() const { return stats_; }

 private:
  std::string name_;
  Parameter<T>* gamma_ = nullptr;
  Parameter<T>* beta_ = nullptr;
  BatchNormStats<T> stats_;
};

}  // namespace pemb
