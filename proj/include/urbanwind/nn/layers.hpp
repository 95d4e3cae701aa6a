// Stateful layer wrappers: own parameters and the activations their
// backward pass needs. A backward call must follow the matching forward.
#pragma once

#include <string>
#include <vector>

#include "urbanwind/nn/ops.hpp"

namespace urbanwind::nn {

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

/// Named non-trainable state (batch-norm running statistics).
template <class T>
struct Buffer {
  std::string name;
  Tensor<T>* value;
};

template <class T>
Tensor<T> normal_tensor(Shape s, double mean, double stddev, Rng& rng) {
  Tensor<T> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(mean + stddev * rng.normal());
  return t;
}

enum class LayerKind { Conv, ConvTranspose, Norm, Relu, LeakyRelu, Tanh, Sigmoid, Dropout, ConcatSkip };

/// Convolution geometry; kernel is always 4.
struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 2;
  int padding = 1;
  bool bias = true;
  static constexpr int kernel = 4;
};

template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, ConvSpec spec, Rng& rng) : spec_(spec) {
    weight_ = {name + ".weight",
               normal_tensor<T>(Shape{spec.out_channels, spec.in_channels, ConvSpec::kernel, ConvSpec::kernel}, 0.0,
                                0.02, rng),
               {}};
    weight_.zero_grad();
    if (spec.bias) {
      bias_ = {name + ".bias", Tensor<T>(Shape{spec.out_channels, 1, 1, 1}), {}};
      bias_.zero_grad();
    }
  }

  const ConvSpec& spec() const { return spec_; }

  Tensor<T> forward(const Tensor<T>& x) {
    input_ = x;
    Tensor<T> y = conv2d_forward(x, weight_.value, spec_.bias ? &bias_.value : nullptr, spec_.stride, spec_.padding);
    require_finite(y, weight_.name.c_str());
    return y;
  }

  /// Accumulates parameter gradients; returns dL/dx when `need_dx`.
  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true) {
    ConvGrads<T> g = conv2d_backward(input_, weight_.value, dy, spec_.bias, spec_.stride, spec_.padding, need_dx);
    accumulate(weight_.grad, g.dw);
    if (spec_.bias) accumulate(bias_.grad, g.db);
    return std::move(g.dx);
  }

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&weight_);
    if (spec_.bias) out.push_back(&bias_);
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  ConvSpec spec_;
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
};

template <class T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::string name, ConvSpec spec, Rng& rng) : spec_(spec) {
    weight_ = {name + ".weight",
               normal_tensor<T>(Shape{spec.in_channels, spec.out_channels, ConvSpec::kernel, ConvSpec::kernel}, 0.0,
                                0.02, rng),
               {}};
    weight_.zero_grad();
    if (spec.bias) {
      bias_ = {name + ".bias", Tensor<T>(Shape{spec.out_channels, 1, 1, 1}), {}};
      bias_.zero_grad();
    }
  }

  Tensor<T> forward(const Tensor<T>& x) {
    input_ = x;
    Tensor<T> y =
        conv_transpose2d_forward(x, weight_.value, spec_.bias ? &bias_.value : nullptr, spec_.stride, spec_.padding);
    require_finite(y, weight_.name.c_str());
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true) {
    ConvGrads<T> g =
        conv_transpose2d_backward(input_, weight_.value, dy, spec_.bias, spec_.stride, spec_.padding, need_dx);
    accumulate(weight_.grad, g.dw);
    if (spec_.bias) accumulate(bias_.grad, g.db);
    return std::move(g.dx);
  }

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&weight_);
    if (spec_.bias) out.push_back(&bias_);
  }

 private:
  ConvSpec spec_;
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
};

template <class T>
class BatchNorm2d {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

  BatchNorm2d() = default;
  BatchNorm2d(std::string name, int channels, Rng& rng) : name_(name) {
    gamma_ = {name + ".gamma", normal_tensor<T>(Shape{channels, 1, 1, 1}, 1.0, 0.02, rng), {}};
    beta_ = {name + ".beta", Tensor<T>(Shape{channels, 1, 1, 1}), {}};
    gamma_.zero_grad();
    beta_.zero_grad();
    running_mean_ = Tensor<T>(Shape{channels, 1, 1, 1}, T{0});
    running_var_ = Tensor<T>(Shape{channels, 1, 1, 1}, T{1});
  }

  /// `training` normalizes with batch statistics and updates running ones.
  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return batch_norm_forward(x, gamma_.value, beta_.value, running_mean_, running_var_, training, kMomentum, kEps,
                              &cache_);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    BatchNormGrads<T> g = batch_norm_backward(dy, gamma_.value, cache_);
    accumulate(gamma_.grad, g.dgamma);
    accumulate(beta_.grad, g.dbeta);
    return std::move(g.dx);
  }

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void collect_buffers(std::vector<Buffer<T>>& out) {
    out.push_back({name_ + ".running_mean", &running_mean_});
    out.push_back({name_ + ".running_var", &running_var_});
  }

 private:
  std::string name_;
  Param<T> gamma_;
  Param<T> beta_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  BatchNormCache<T> cache_;
};

}  // namespace urbanwind::nn
