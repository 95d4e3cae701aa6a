// Monte-Carlo dropout: mean and variance over n stochastic forward passes.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "urbanwind/cgan.hpp"
#include "urbanwind/grid.hpp"
#include "urbanwind/nn/random.hpp"

namespace urbanwind {

struct UncertaintyResult {
  Grid2D<float> mean;
  Grid2D<float> variance;
  int n = 0;
  double p = 0.0;
  std::uint64_t seed = 0;

  Grid2D<float> stddev() const {
    Grid2D<float> s(variance.rows(), variance.cols());
    for (std::size_t i = 0; i < s.size(); ++i) s.values()[i] = std::sqrt(variance.values()[i]);
    return s;
  }
};

/// Running first and second moments, accumulated in double in call order.
class MomentAccumulator {
 public:
  MomentAccumulator(int rows, int cols)
      : rows_(rows), cols_(cols), mean_(static_cast<std::size_t>(rows) * cols), m2_(mean_.size()) {}

  // Welford update: identical samples leave m2 exactly zero.
  void add(std::span<const double> sample) {
    if (sample.size() != mean_.size()) throw std::invalid_argument("sample size does not match accumulator");
    ++n_;
    const double inv = 1.0 / n_;
    for (std::size_t i = 0; i < sample.size(); ++i) {
      const double delta = sample[i] - mean_[i];
      mean_[i] += delta * inv;
      m2_[i] += delta * (sample[i] - mean_[i]);
    }
  }

  int count() const { return n_; }

  /// mean = (1/n) sum f; variance = (1/n) sum (f - mean)^2.
  std::pair<Grid2D<float>, Grid2D<float>> finish() const {
    if (n_ == 0) throw std::invalid_argument("no samples accumulated");
    Grid2D<float> mean(rows_, cols_);
    Grid2D<float> var(rows_, cols_);
    const double inv = 1.0 / n_;
    for (std::size_t i = 0; i < mean_.size(); ++i) {
      mean.values()[i] = static_cast<float>(mean_[i]);
      var.values()[i] = static_cast<float>(std::max(0.0, m2_[i] * inv));
    }
    return {std::move(mean), std::move(var)};
  }

 private:
  int rows_;
  int cols_;
  int n_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

/// Aggregates already-drawn samples (each rows*cols values).
inline UncertaintyResult aggregate_samples(const std::vector<std::vector<double>>& samples, int rows, int cols) {
  MomentAccumulator acc(rows, cols);
  for (const auto& s : samples) acc.add(s);
  UncertaintyResult r;
  std::tie(r.mean, r.variance) = acc.finish();
  r.n = acc.count();
  return r;
}

/// Generic estimator: `sample(rng)` returns one rows*cols realization; pass i
/// draws from Rng::substream(seed, i).
inline UncertaintyResult mc_estimate(const std::function<std::vector<double>(nn::Rng&)>& sample, int rows, int cols,
                                     int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("mc sample count must be at least 1");
  MomentAccumulator acc(rows, cols);
  for (int i = 0; i < n; ++i) {
    nn::Rng rng = nn::Rng::substream(seed, static_cast<std::uint64_t>(i));
    acc.add(sample(rng));
  }
  UncertaintyResult r;
  std::tie(r.mean, r.variance) = acc.finish();
  r.n = n;
  r.seed = seed;
  return r;
}

/// n dropout passes through `g` on one scaled input (1, 4, S, S). Each pass
/// is decoded to wind factors before aggregation. p = 0 reduces to the
/// deterministic prediction.
inline UncertaintyResult mc_predict(Generator<float>& g, const nn::Tensor<float>& input, const Normalization& norm,
                                    int n = 30, double p = 0.5, std::uint64_t seed = 0) {
  if (n < 1) throw std::invalid_argument("mc_samples must be at least 1");
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout_p must be in [0, 1)");
  if (input.shape().n != 1) throw nn::ShapeError("mc_predict takes a single input");
  const int h = input.shape().h;
  const int w = input.shape().w;
  auto sample = [&](nn::Rng& rng) {
    ForwardMode mode{false, p > 0.0, p, &rng};
    const nn::Tensor<float> y = g.forward(input, mode);
    std::vector<double> f(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) f[i] = norm.decode_factor(y[i]);
    return f;
  };
  UncertaintyResult r = mc_estimate(sample, h, w, n, seed);
  r.p = p;
  return r;
}

/// Single deterministic pass (dropout off), decoded to wind factors.
inline Grid2D<float> predict(Generator<float>& g, const nn::Tensor<float>& input, const Normalization& norm) {
  const nn::Tensor<float> y = g.forward(input, ForwardMode{});
  Grid2D<float> out(input.shape().h, input.shape().w);
  for (std::size_t i = 0; i < y.size(); ++i) out.values()[i] = static_cast<float>(norm.decode_factor(y[i]));
  return out;
}

}  // namespace urbanwind
