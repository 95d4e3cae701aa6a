#pragma once

#include <cmath>
#include <vector>

#include "urbanwind/nn/layers.hpp"

namespace urbanwind::nn {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  long long t = 0;
};

/// One bias-corrected Adam update over `params` using their `grad` fields.
/// Refuses the whole step (throws NonFiniteError, nothing modified) when any
/// gradient is NaN or infinite.
template <class T>
void adam_step(const std::vector<Param<T>*>& params, AdamState<T>& state, const AdamConfig& cfg) {
  for (const Param<T>* p : params) {
    for (const T& g : p->grad.values()) {
      if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in " + p->name + "; step refused");
    }
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const Param<T>* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
    state.t = 0;
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param<T>& p = *params[k];
    Tensor<T>& m = state.m[k];
    Tensor<T>& v = state.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p.value[i] = static_cast<T>(p.value[i] - cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps));
    }
  }
}

template <class T>
void zero_grads(const std::vector<Param<T>*>& params) {
  for (Param<T>* p : params) p->grad.fill(T{0});
}

}  // namespace urbanwind::nn
