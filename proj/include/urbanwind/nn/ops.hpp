// Forward and backward kernels for the closed set of layer kinds used by the
// generator and discriminator: 2D convolution, transposed convolution, batch
// normalization, pointwise activations, inverted dropout and channel concat.
//
// Convolutions lower to one GEMM per call via im2col over the whole batch.
// Weight layouts follow the usual conventions: conv (Cout, Cin, k, k),
// transposed conv (Cin, Cout, k, k).
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "urbanwind/nn/random.hpp"
#include "urbanwind/nn/tensor.hpp"

namespace urbanwind::nn {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline int conv_output_size(int in, int kernel, int stride, int padding) {
  const int span = in + 2 * padding - kernel;
  if (span < 0) throw ShapeError("convolution window larger than padded input");
  return span / stride + 1;
}

inline int conv_transpose_output_size(int in, int kernel, int stride, int padding) {
  return (in - 1) * stride - 2 * padding + kernel;
}

/// Lays out k x k windows of `x` (sampled on an oh x ow output lattice) as
/// columns: rows (c, ki, kj), columns (n, oy, ox).
template <class T>
std::vector<T> im2col(const Tensor<T>& x, int k, int stride, int pad, int oh, int ow) {
  const Shape& s = x.shape();
  const std::size_t cols = static_cast<std::size_t>(s.n) * oh * ow;
  std::vector<T> col(static_cast<std::size_t>(s.c) * k * k * cols, T{});
  for (int c = 0; c < s.c; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col.data() + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * cols;
        for (int n = 0; n < s.n; ++n) {
          const T* plane = x.data() + x.offset(n, c, 0, 0);
          T* dst = row + static_cast<std::size_t>(n) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= s.h) continue;
            const T* src = plane + static_cast<std::size_t>(iy) * s.w;
            T* drow = dst + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kj;
              if (ix >= 0 && ix < s.w) drow[ox] = src[ix];
            }
          }
        }
      }
    }
  }
  return col;
}

/// Adjoint of im2col: scatters columns back into a tensor of shape `s`.
template <class T>
Tensor<T> col2im(const T* col, Shape s, int k, int stride, int pad, int oh, int ow) {
  Tensor<T> x(s);
  const std::size_t cols = static_cast<std::size_t>(s.n) * oh * ow;
  for (int c = 0; c < s.c; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * cols;
        for (int n = 0; n < s.n; ++n) {
          T* plane = x.data() + x.offset(n, c, 0, 0);
          const T* src = row + static_cast<std::size_t>(n) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= s.h) continue;
            T* dst = plane + static_cast<std::size_t>(iy) * s.w;
            const T* srow = src + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kj;
              if (ix >= 0 && ix < s.w) dst[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
  return x;
}

namespace detail {

/// (C, N*H*W) row-major matrix from an NCHW tensor.
template <class T>
std::vector<T> channels_major(const Tensor<T>& x) {
  const Shape& s = x.shape();
  const std::size_t plane = s.plane();
  std::vector<T> out(x.size());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* src = x.data() + x.offset(n, c, 0, 0);
      std::copy(src, src + plane, out.data() + (static_cast<std::size_t>(c) * s.n + n) * plane);
    }
  }
  return out;
}

template <class T>
Tensor<T> from_channels_major(const T* m, Shape s) {
  Tensor<T> out(s);
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* src = m + (static_cast<std::size_t>(c) * s.n + n) * plane;
      std::copy(src, src + plane, out.data() + out.offset(n, c, 0, 0));
    }
  }
  return out;
}

template <class T>
void add_bias(Tensor<T>& y, const Tensor<T>* bias) {
  if (bias == nullptr) return;
  const Shape& s = y.shape();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      T* p = y.data() + y.offset(n, c, 0, 0);
      const T b = (*bias)[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] += b;
    }
  }
}

template <class T>
Tensor<T> bias_grad(const Tensor<T>& dy) {
  const Shape& s = dy.shape();
  Tensor<T> db(Shape{s.c, 1, 1, 1});
  for (int c = 0; c < s.c; ++c) {
    double acc = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const T* p = dy.data() + dy.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
    }
    db[static_cast<std::size_t>(c)] = static_cast<T>(acc);
  }
  return db;
}

}  // namespace detail

template <class T>
struct ConvGrads {
  Tensor<T> dx;  // empty when not requested
  Tensor<T> dw;
  Tensor<T> db;  // empty when the layer has no bias
};

/// Cross-correlation. `w` is (Cout, Cin, k, k); `bias` is (Cout, 1, 1, 1) or null.
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.c != xs.c) throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " + std::to_string(ws.c));
  if (ws.h != ws.w) throw ShapeError("conv2d: kernel must be square");
  if (bias != nullptr && bias->size() != static_cast<std::size_t>(ws.n)) throw ShapeError("conv2d: bias size mismatch");
  const int k = ws.h;
  const int oh = conv_output_size(xs.h, k, stride, pad);
  const int ow = conv_output_size(xs.w, k, stride, pad);
  const std::vector<T> col = im2col(x, k, stride, pad, oh, ow);
  const Eigen::Index cols = static_cast<Eigen::Index>(xs.n) * oh * ow;
  const Eigen::Index inner = static_cast<Eigen::Index>(xs.c) * k * k;
  std::vector<T> ym(static_cast<std::size_t>(ws.n) * cols);
  MatrixMap<T>(ym.data(), ws.n, cols).noalias() =
      ConstMatrixMap<T>(w.data(), ws.n, inner) * ConstMatrixMap<T>(col.data(), inner, cols);
  Tensor<T> y = detail::from_channels_major(ym.data(), Shape{xs.n, ws.n, oh, ow});
  detail::add_bias(y, bias);
  return y;
}

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, bool has_bias, int stride,
                             int pad, bool need_dx = true) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const int k = ws.h;
  const int oh = dy.shape().h;
  const int ow = dy.shape().w;
  if (dy.shape().n != xs.n || dy.shape().c != ws.n || oh != conv_output_size(xs.h, k, stride, pad) ||
      ow != conv_output_size(xs.w, k, stride, pad)) {
    throw ShapeError("conv2d_backward: gradient shape " + dy.shape().str() + " inconsistent with input " + xs.str());
  }
  const Eigen::Index cols = static_cast<Eigen::Index>(xs.n) * oh * ow;
  const Eigen::Index inner = static_cast<Eigen::Index>(xs.c) * k * k;
  const std::vector<T> dym = detail::channels_major(dy);
  const std::vector<T> col = im2col(x, k, stride, pad, oh, ow);
  ConvGrads<T> g;
  g.dw = Tensor<T>(ws);
  MatrixMap<T>(g.dw.data(), ws.n, inner).noalias() =
      ConstMatrixMap<T>(dym.data(), ws.n, cols) * ConstMatrixMap<T>(col.data(), inner, cols).transpose();
  if (has_bias) g.db = detail::bias_grad(dy);
  if (need_dx) {
    std::vector<T> dcol(static_cast<std::size_t>(inner) * cols);
    MatrixMap<T>(dcol.data(), inner, cols).noalias() =
        ConstMatrixMap<T>(w.data(), ws.n, inner).transpose() * ConstMatrixMap<T>(dym.data(), ws.n, cols);
    g.dx = col2im(dcol.data(), xs, k, stride, pad, oh, ow);
  }
  return g;
}

/// Transposed convolution (fractionally strided). `w` is (Cin, Cout, k, k).
template <class T>
Tensor<T> conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride,
                                   int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.n != xs.c) throw ShapeError("conv_transpose2d: input has " + std::to_string(xs.c) + " channels, weight expects " + std::to_string(ws.n));
  if (bias != nullptr && bias->size() != static_cast<std::size_t>(ws.c)) throw ShapeError("conv_transpose2d: bias size mismatch");
  const int k = ws.h;
  const Shape ys{xs.n, ws.c, conv_transpose_output_size(xs.h, k, stride, pad),
                 conv_transpose_output_size(xs.w, k, stride, pad)};
  if (ys.h <= 0 || ys.w <= 0) throw ShapeError("conv_transpose2d: empty output");
  const Eigen::Index cols = static_cast<Eigen::Index>(xs.n) * xs.h * xs.w;
  const Eigen::Index inner = static_cast<Eigen::Index>(ws.c) * k * k;
  const std::vector<T> xm = detail::channels_major(x);
  std::vector<T> col(static_cast<std::size_t>(inner) * cols);
  MatrixMap<T>(col.data(), inner, cols).noalias() =
      ConstMatrixMap<T>(w.data(), ws.n, inner).transpose() * ConstMatrixMap<T>(xm.data(), ws.n, cols);
  Tensor<T> y = col2im(col.data(), ys, k, stride, pad, xs.h, xs.w);
  detail::add_bias(y, bias);
  return y;
}

template <class T>
ConvGrads<T> conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, bool has_bias,
                                       int stride, int pad, bool need_dx = true) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const int k = ws.h;
  if (dy.shape().n != xs.n || dy.shape().c != ws.c || dy.shape().h != conv_transpose_output_size(xs.h, k, stride, pad) ||
      dy.shape().w != conv_transpose_output_size(xs.w, k, stride, pad)) {
    throw ShapeError("conv_transpose2d_backward: gradient shape " + dy.shape().str() + " inconsistent with input " + xs.str());
  }
  const Eigen::Index cols = static_cast<Eigen::Index>(xs.n) * xs.h * xs.w;
  const Eigen::Index inner = static_cast<Eigen::Index>(ws.c) * k * k;
  const std::vector<T> col = im2col(dy, k, stride, pad, xs.h, xs.w);
  const std::vector<T> xm = detail::channels_major(x);
  ConvGrads<T> g;
  g.dw = Tensor<T>(ws);
  MatrixMap<T>(g.dw.data(), ws.n, inner).noalias() =
      ConstMatrixMap<T>(xm.data(), ws.n, cols) * ConstMatrixMap<T>(col.data(), inner, cols).transpose();
  if (has_bias) g.db = detail::bias_grad(dy);
  if (need_dx) {
    std::vector<T> dxm(static_cast<std::size_t>(ws.n) * cols);
    MatrixMap<T>(dxm.data(), ws.n, cols).noalias() =
        ConstMatrixMap<T>(w.data(), ws.n, inner) * ConstMatrixMap<T>(col.data(), inner, cols);
    g.dx = detail::from_channels_major(dxm.data(), xs);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel.

template <class T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<double> inv_std;
  bool training = true;
};

template <class T>
Tensor<T> batch_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             Tensor<T>& running_mean, Tensor<T>& running_var, bool training, double momentum,
                             double eps, BatchNormCache<T>* cache) {
  const Shape& s = x.shape();
  if (gamma.size() != static_cast<std::size_t>(s.c)) throw ShapeError("batch_norm: channel count mismatch");
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  Tensor<T> y(s);
  if (cache != nullptr) {
    cache->xhat = Tensor<T>(s);
    cache->inv_std.assign(static_cast<std::size_t>(s.c), 0.0);
    cache->training = training;
  }
  for (int c = 0; c < s.c; ++c) {
    double mean;
    double var;
    if (training) {
      double sum = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = x.data() + x.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean = sum / count;
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = x.data() + x.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / count;
      const double unbiased = count > 1.0 ? sq / (count - 1.0) : var;
      running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mean);
      running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + eps);
    const double g = gamma[c];
    const double b = beta[c];
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = x.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (x[off + i] - mean) * inv_std;
        if (cache != nullptr) cache->xhat[off + i] = static_cast<T>(xh);
        y[off + i] = static_cast<T>(g * xh + b);
      }
    }
    if (cache != nullptr) cache->inv_std[static_cast<std::size_t>(c)] = inv_std;
  }
  return y;
}

template <class T>
struct BatchNormGrads {
  Tensor<T> dx;
  Tensor<T> dgamma;
  Tensor<T> dbeta;
};

template <class T>
BatchNormGrads<T> batch_norm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BatchNormCache<T>& cache) {
  const Shape& s = dy.shape();
  require_same_shape(dy, cache.xhat, "batch_norm_backward");
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  BatchNormGrads<T> g{Tensor<T>(s), Tensor<T>(gamma.shape()), Tensor<T>(gamma.shape())};
  for (int c = 0; c < s.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = dy.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xhat += static_cast<double>(dy[off + i]) * cache.xhat[off + i];
      }
    }
    g.dbeta[c] = static_cast<T>(sum_dy);
    g.dgamma[c] = static_cast<T>(sum_dy_xhat);
    const double scale = static_cast<double>(gamma[c]) * cache.inv_std[static_cast<std::size_t>(c)];
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = dy.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        if (cache.training) {
          g.dx[off + i] = static_cast<T>(scale / count *
                                         (count * dy[off + i] - sum_dy - cache.xhat[off + i] * sum_dy_xhat));
        } else {
          g.dx[off + i] = static_cast<T>(scale * dy[off + i]);
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Pointwise activations. Backward functions take the forward input.

template <class T>
Tensor<T> leaky_relu_forward(const Tensor<T>& x, T slope) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : slope * x[i];
  return y;
}

template <class T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& dy, T slope) {
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? dy[i] : slope * dy[i];
  return dx;
}

template <class T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  return leaky_relu_forward(x, T{0});
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  return leaky_relu_backward(x, dy, T{0});
}

template <class T>
Tensor<T> tanh_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

/// Takes the forward output y = tanh(x).
template <class T>
Tensor<T> tanh_backward_from_output(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * (T{1} - y[i] * y[i]);
  return dx;
}

template <class T>
T sigmoid(T x) {
  return x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
}

template <class T>
Tensor<T> sigmoid_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

template <class T>
Tensor<T> sigmoid_backward_from_output(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (T{1} - y[i]);
  return dx;
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted-dropout multipliers: 0 with probability p, 1/(1-p) otherwise.
template <class T>
Tensor<T> dropout_mask(Shape s, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout probability must be in [0, 1)");
  Tensor<T> m(s);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < p ? T{0} : keep_scale;
  return m;
}

/// Identity when `active` is false. `mask_out` receives the multipliers.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool active, Tensor<T>* mask_out = nullptr) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout probability must be in [0, 1)");
  if (!active || p == 0.0) {
    if (mask_out != nullptr) *mask_out = Tensor<T>(x.shape(), T{1});
    return x;
  }
  Tensor<T> m = dropout_mask<T>(x.shape(), p, rng);
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * m[i];
  if (mask_out != nullptr) *mask_out = std::move(m);
  return y;
}

template <class T>
Tensor<T> multiply(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "multiply");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
  return y;
}

// ---------------------------------------------------------------------------
// Channel concatenation for skip connections.

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) throw ShapeError("concat: " + sa.str() + " vs " + sb.str());
  Tensor<T> y(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t pa = static_cast<std::size_t>(sa.c) * sa.h * sa.w;
  const std::size_t pb = static_cast<std::size_t>(sb.c) * sb.h * sb.w;
  for (int n = 0; n < sa.n; ++n) {
    std::copy(a.data() + n * pa, a.data() + (n + 1) * pa, y.data() + n * (pa + pb));
    std::copy(b.data() + n * pb, b.data() + (n + 1) * pb, y.data() + n * (pa + pb) + pa);
  }
  return y;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& y, int first) {
  const Shape& s = y.shape();
  if (first < 0 || first > s.c) throw ShapeError("split: bad channel split");
  Tensor<T> a(Shape{s.n, first, s.h, s.w});
  Tensor<T> b(Shape{s.n, s.c - first, s.h, s.w});
  const std::size_t pa = static_cast<std::size_t>(first) * s.h * s.w;
  const std::size_t pb = static_cast<std::size_t>(s.c - first) * s.h * s.w;
  for (int n = 0; n < s.n; ++n) {
    std::copy(y.data() + n * (pa + pb), y.data() + n * (pa + pb) + pa, a.data() + n * pa);
    std::copy(y.data() + n * (pa + pb) + pa, y.data() + (n + 1) * (pa + pb), b.data() + n * pb);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace urbanwind::nn
