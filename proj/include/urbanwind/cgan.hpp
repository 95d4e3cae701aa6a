// Conditional adversarial image-to-field model: U-Net generator with skip
// connections, PatchGAN discriminator, and the adversarial + L1 objective.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "urbanwind/nn/adam.hpp"
#include "urbanwind/nn/layers.hpp"

namespace urbanwind {

// ---------------------------------------------------------------------------
// Input and target scaling

struct Normalization {
  double height_ref = 320.0;  // meters; every geometry channel is divided by this
  double factor_max = 2.5;    // wind factors are clamped to [0, factor_max]

  /// Wind factor -> tanh range [-1, 1].
  double encode_factor(double f) const { return std::clamp(f, 0.0, factor_max) * 2.0 / factor_max - 1.0; }
  /// tanh range -> wind factor in [0, factor_max].
  double decode_factor(double y) const { return std::clamp((y + 1.0) * 0.5 * factor_max, 0.0, factor_max); }
};

// ---------------------------------------------------------------------------
// Configurations

struct GeneratorConfig {
  int input_size = 64;
  int in_channels = 4;
  int out_channels = 1;
  int base_width = 16;
  double dropout_p = 0.5;
  int dropout_blocks = 3;  // innermost decoder blocks carrying dropout

  int depth() const {
    int d = 0;
    for (int s = input_size; s > 1; s /= 2) ++d;
    return d;
  }
  int width_at(int level) const { return base_width * std::min(1 << std::min(level, 3), 8); }

  void validate() const {
    if (input_size != 64 && input_size != 128 && input_size != 256 && input_size != 512) {
      throw std::invalid_argument("generator input_size must be 64, 128, 256 or 512");
    }
    if (in_channels != 4 || out_channels != 1) throw std::invalid_argument("generator maps 4 channels to 1");
    if (base_width < 1) throw std::invalid_argument("base_width must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("dropout_p must be in [0, 1)");
  }
};

/// Receptive fields of the shipped PatchGAN stacks. 286 is the closest
/// kernel-4 stack to the 284 configuration: with kernel 4 every receptive
/// field is 1 mod 3, so 284 itself is unreachable.
enum class ReceptiveField : int { RF70 = 70, RF142 = 142, RF286 = 286 };

inline ReceptiveField parse_receptive_field(int pixels) {
  switch (pixels) {
    case 70: return ReceptiveField::RF70;
    case 140:
    case 142: return ReceptiveField::RF142;
    case 284:
    case 286: return ReceptiveField::RF286;
    default: throw std::invalid_argument("receptive field must be one of 70, 142 (140), 286 (284)");
  }
}

struct DiscriminatorConfig {
  ReceptiveField receptive_field = ReceptiveField::RF142;
  int in_channels = 5;  // 4 condition channels + 1 candidate field
  int base_width = 16;

  int downsampling_layers() const {
    switch (receptive_field) {
      case ReceptiveField::RF70: return 3;
      case ReceptiveField::RF142: return 4;
      case ReceptiveField::RF286: return 5;
    }
    return 3;
  }
};

/// Convolution stack of the PatchGAN: n stride-2 layers, then two stride-1
/// layers. The last layer pads by 2 so the logit map is input / 2^n.
inline std::vector<nn::ConvSpec> discriminator_stack(const DiscriminatorConfig& cfg) {
  const int n = cfg.downsampling_layers();
  auto width = [&](int level) { return cfg.base_width * std::min(1 << level, 8); };
  std::vector<nn::ConvSpec> stack;
  stack.push_back({cfg.in_channels, width(0), 2, 1, true});
  for (int k = 1; k < n; ++k) stack.push_back({width(k - 1), width(k), 2, 1, false});
  stack.push_back({width(n - 1), width(n), 1, 1, false});
  stack.push_back({width(n), 1, 1, 2, true});
  return stack;
}

/// Receptive field in pixels via RF <- RF + (k - 1) * prod(previous strides).
inline int compute_receptive_field(std::span<const nn::ConvSpec> stack) {
  int rf = 1;
  int jump = 1;
  for (const nn::ConvSpec& s : stack) {
    rf += (nn::ConvSpec::kernel - 1) * jump;
    jump *= s.stride;
  }
  return rf;
}

/// Output extent of the stack for a square input of side `input`.
inline int stack_output_size(std::span<const nn::ConvSpec> stack, int input) {
  int size = input;
  for (const nn::ConvSpec& s : stack) size = nn::conv_output_size(size, nn::ConvSpec::kernel, s.stride, s.padding);
  return size;
}

/// Inclusive range of input coordinates (possibly outside the image) that
/// influence output coordinate `out` along one axis.
inline std::pair<int, int> stack_input_window(std::span<const nn::ConvSpec> stack, int out) {
  int lo = out;
  int hi = out;
  for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
    lo = lo * it->stride - it->padding;
    hi = hi * it->stride - it->padding + nn::ConvSpec::kernel - 1;
  }
  return {lo, hi};
}

// ---------------------------------------------------------------------------
// Networks

struct ForwardMode {
  bool training = false;  // batch statistics in normalization layers
  bool dropout = false;   // sample dropout masks
  double dropout_p = 0.5;
  nn::Rng* rng = nullptr;  // required when dropout is on
};

template <class T>
class Generator {
 public:
  Generator() = default;
  Generator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    nn::Rng rng(seed);
    const int d = cfg.depth();
    enc_.resize(static_cast<std::size_t>(d));
    enc_bn_.resize(static_cast<std::size_t>(d));
    dec_.resize(static_cast<std::size_t>(d));
    dec_bn_.resize(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
      const int in = i == 0 ? cfg.in_channels : cfg.width_at(i - 1);
      const bool norm = i > 0 && i < d - 1;
      enc_[i] = nn::Conv2d<T>("g.enc" + std::to_string(i), {in, cfg.width_at(i), 2, 1, !norm}, rng);
      if (norm) enc_bn_[i] = nn::BatchNorm2d<T>("g.enc" + std::to_string(i) + ".bn", cfg.width_at(i), rng);
    }
    for (int i = d - 1; i >= 0; --i) {
      const int in = i == d - 1 ? cfg.width_at(i) : 2 * cfg.width_at(i);
      const int out = i == 0 ? cfg.out_channels : cfg.width_at(i - 1);
      const bool norm = i > 0;
      dec_[i] = nn::ConvTranspose2d<T>("g.dec" + std::to_string(i), {in, out, 2, 1, !norm}, rng);
      if (norm) dec_bn_[i] = nn::BatchNorm2d<T>("g.dec" + std::to_string(i) + ".bn", out, rng);
    }
  }

  const GeneratorConfig& config() const { return cfg_; }

  bool has_dropout(int level) const {
    const int d = cfg_.depth();
    return level >= 1 && level >= d - cfg_.dropout_blocks;
  }

  /// x: (N, 4, S, S) -> (N, 1, S, S) in [-1, 1].
  nn::Tensor<T> forward(const nn::Tensor<T>& x, const ForwardMode& mode) {
    const int d = cfg_.depth();
    const nn::Shape& s = x.shape();
    if (s.c != cfg_.in_channels || s.h != cfg_.input_size || s.w != cfg_.input_size) {
      throw nn::ShapeError("generator expects (N, " + std::to_string(cfg_.in_channels) + ", " +
                           std::to_string(cfg_.input_size) + ", " + std::to_string(cfg_.input_size) + "), got " +
                           s.str());
    }
    if (mode.dropout && mode.rng == nullptr) throw std::invalid_argument("dropout requires an rng");
    skips_.assign(static_cast<std::size_t>(d), {});
    z_.assign(static_cast<std::size_t>(d), {});
    masks_.assign(static_cast<std::size_t>(d), {});

    skips_[0] = enc_[0].forward(x);
    for (int i = 1; i < d; ++i) {
      nn::Tensor<T> h = enc_[i].forward(nn::leaky_relu_forward(skips_[i - 1], T(0.2)));
      if (i < d - 1) h = enc_bn_[i].forward(h, mode.training);
      skips_[i] = std::move(h);
    }
    z_[d - 1] = skips_[d - 1];
    for (int i = d - 1; i >= 1; --i) {
      nn::Tensor<T> h = dec_bn_[i].forward(dec_[i].forward(nn::relu_forward(z_[i])), mode.training);
      if (has_dropout(i)) {
        nn::Rng dummy(0);
        h = nn::dropout(h, mode.dropout_p, mode.rng != nullptr ? *mode.rng : dummy, mode.dropout, &masks_[i]);
      }
      z_[i - 1] = nn::concat_channels(h, skips_[i - 1]);
    }
    pre_tanh_ = dec_[0].forward(nn::relu_forward(z_[0]));
    out_ = nn::tanh_forward(pre_tanh_);
    return out_;
  }

  const nn::Tensor<T>& pre_activation() const { return pre_tanh_; }

  /// Backpropagates dL/d(output); accumulates parameter gradients.
  nn::Tensor<T> backward(const nn::Tensor<T>& dout, bool need_dx = false) {
    const int d = cfg_.depth();
    std::vector<nn::Tensor<T>> dskip(static_cast<std::size_t>(d));
    nn::Tensor<T> dz = nn::relu_backward(z_[0], dec_[0].backward(nn::tanh_backward_from_output(out_, dout)));
    for (int i = 0; i < d - 1; ++i) {
      auto [dh, ds] = nn::split_channels(dz, cfg_.width_at(i));
      dskip[i] = std::move(ds);
      if (has_dropout(i + 1)) dh = nn::multiply(dh, masks_[i + 1]);
      dh = dec_bn_[i + 1].backward(dh);
      dz = nn::relu_backward(z_[i + 1], dec_[i + 1].backward(dh));
    }
    dskip[d - 1] = std::move(dz);
    for (int i = d - 1; i >= 1; --i) {
      nn::Tensor<T> g = std::move(dskip[i]);
      if (i < d - 1) g = enc_bn_[i].backward(g);
      g = nn::leaky_relu_backward(skips_[i - 1], enc_[i].backward(g), T(0.2));
      nn::accumulate(dskip[i - 1], g);
    }
    return enc_[0].backward(dskip[0], need_dx);
  }

  std::vector<nn::Param<T>*> parameters() {
    std::vector<nn::Param<T>*> out;
    const int d = cfg_.depth();
    for (int i = 0; i < d; ++i) {
      enc_[i].collect(out);
      if (i > 0 && i < d - 1) enc_bn_[i].collect(out);
    }
    for (int i = d - 1; i >= 0; --i) {
      dec_[i].collect(out);
      if (i > 0) dec_bn_[i].collect(out);
    }
    return out;
  }

  std::vector<nn::Buffer<T>> buffers() {
    std::vector<nn::Buffer<T>> out;
    const int d = cfg_.depth();
    for (int i = 1; i < d - 1; ++i) enc_bn_[i].collect_buffers(out);
    for (int i = d - 1; i >= 1; --i) dec_bn_[i].collect_buffers(out);
    return out;
  }

 private:
  GeneratorConfig cfg_;
  std::vector<nn::Conv2d<T>> enc_;
  std::vector<nn::BatchNorm2d<T>> enc_bn_;
  std::vector<nn::ConvTranspose2d<T>> dec_;
  std::vector<nn::BatchNorm2d<T>> dec_bn_;
  std::vector<nn::Tensor<T>> skips_;
  std::vector<nn::Tensor<T>> z_;
  std::vector<nn::Tensor<T>> masks_;
  nn::Tensor<T> pre_tanh_;
  nn::Tensor<T> out_;
};

template <class T>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg), stack_(discriminator_stack(cfg)) {
    nn::Rng rng(seed);
    for (std::size_t i = 0; i < stack_.size(); ++i) {
      convs_.emplace_back("d.conv" + std::to_string(i), stack_[i], rng);
      if (has_norm(i)) {
        norms_.emplace_back("d.conv" + std::to_string(i) + ".bn", stack_[i].out_channels, rng);
      } else {
        norms_.emplace_back();
      }
    }
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  std::span<const nn::ConvSpec> stack() const { return stack_; }

  /// Patch logits for (condition, candidate field) pairs.
  nn::Tensor<T> forward(const nn::Tensor<T>& condition, const nn::Tensor<T>& field, bool training) {
    if (condition.shape().c + field.shape().c != cfg_.in_channels) {
      throw nn::ShapeError("discriminator expects " + std::to_string(cfg_.in_channels) + " input channels");
    }
    cond_channels_ = condition.shape().c;
    const std::size_t last = stack_.size() - 1;
    acts_.assign(stack_.size(), {});
    nn::Tensor<T> h = nn::concat_channels(condition, field);
    for (std::size_t i = 0; i < stack_.size(); ++i) {
      h = convs_[i].forward(h);
      if (has_norm(i)) h = norms_[i].forward(h, training);
      if (i < last) {
        acts_[i] = std::move(h);
        h = nn::leaky_relu_forward(acts_[i], T(0.2));
      }
    }
    return h;
  }

  /// Returns (d condition, d field); accumulates parameter gradients.
  std::pair<nn::Tensor<T>, nn::Tensor<T>> backward(const nn::Tensor<T>& dlogits, bool need_dx = true) {
    nn::Tensor<T> g = dlogits;
    for (std::size_t i = stack_.size(); i-- > 0;) {
      if (i + 1 < stack_.size()) g = nn::leaky_relu_backward(acts_[i], g, T(0.2));
      if (has_norm(i)) g = norms_[i].backward(g);
      g = convs_[i].backward(g, need_dx || i > 0);
    }
    if (!need_dx) return {};
    return nn::split_channels(g, cond_channels_);
  }

  std::vector<nn::Param<T>*> parameters() {
    std::vector<nn::Param<T>*> out;
    for (std::size_t i = 0; i < stack_.size(); ++i) {
      convs_[i].collect(out);
      if (has_norm(i)) norms_[i].collect(out);
    }
    return out;
  }

  std::vector<nn::Buffer<T>> buffers() {
    std::vector<nn::Buffer<T>> out;
    for (std::size_t i = 0; i < stack_.size(); ++i) {
      if (has_norm(i)) norms_[i].collect_buffers(out);
    }
    return out;
  }

 private:
  bool has_norm(std::size_t i) const { return i > 0 && i + 1 < stack_.size(); }

  DiscriminatorConfig cfg_;
  std::vector<nn::ConvSpec> stack_;
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::BatchNorm2d<T>> norms_;
  std::vector<nn::Tensor<T>> acts_;
  int cond_channels_ = 4;
};

// ---------------------------------------------------------------------------
// Objective

/// Mean sigmoid cross-entropy of `logits` against a constant target.
template <class T>
double bce_with_logits(const nn::Tensor<T>& logits, double target, nn::Tensor<T>* grad = nullptr) {
  const auto n = static_cast<double>(logits.size());
  double sum = 0.0;
  if (grad != nullptr) *grad = nn::Tensor<T>(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    sum += std::max(x, 0.0) - x * target + std::log1p(std::exp(-std::abs(x)));
    if (grad != nullptr) (*grad)[i] = static_cast<T>((nn::sigmoid(x) - target) / n);
  }
  return sum / n;
}

/// mean |a - b|; `grad_a` receives d/da.
template <class T>
double l1_loss(const nn::Tensor<T>& a, const nn::Tensor<T>& b, nn::Tensor<T>* grad_a = nullptr) {
  nn::require_same_shape(a, b, "l1_loss");
  const auto n = static_cast<double>(a.size());
  double sum = 0.0;
  if (grad_a != nullptr) *grad_a = nn::Tensor<T>(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += std::abs(d);
    if (grad_a != nullptr) (*grad_a)[i] = static_cast<T>((d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n);
  }
  return sum / n;
}

struct LossTerms {
  double adv_g = 0.0;  // fake judged real
  double adv_d = 0.0;  // real -> 1 plus fake -> 0
  double l1 = 0.0;

  double generator_total(double lambda_l1) const { return adv_g + lambda_l1 * l1; }
};

template <class T>
LossTerms loss_terms(const nn::Tensor<T>& real_field, const nn::Tensor<T>& fake_field, const nn::Tensor<T>& d_real,
                     const nn::Tensor<T>& d_fake) {
  LossTerms t;
  t.adv_g = bce_with_logits(d_fake, 1.0);
  t.adv_d = bce_with_logits(d_real, 1.0) + bce_with_logits(d_fake, 0.0);
  t.l1 = l1_loss(fake_field, real_field);
  return t;
}

struct GeneratorLoss {
  double adv_g = 0.0;
  double l1 = 0.0;
};

/// Fills the generator's parameter gradients for adv_G + lambda * L1 given
/// the `fake` it just produced for `condition`. The discriminator is only
/// differentiated through: its gradients are left zeroed.
template <class T>
GeneratorLoss generator_gradients(Generator<T>& g, Discriminator<T>& d, const nn::Tensor<T>& condition,
                                  const nn::Tensor<T>& fake, const nn::Tensor<T>& real, double lambda_l1) {
  auto g_params = g.parameters();
  auto d_params = d.parameters();
  nn::zero_grads(g_params);
  GeneratorLoss loss;
  nn::Tensor<T> grad;
  loss.adv_g = bce_with_logits(d.forward(condition, fake, true), 1.0, &grad);
  nn::Tensor<T> dfake = d.backward(grad, true).second;
  nn::zero_grads(d_params);
  nn::Tensor<T> dl1;
  loss.l1 = l1_loss(fake, real, &dl1);
  for (std::size_t i = 0; i < dfake.size(); ++i) dfake[i] += static_cast<T>(lambda_l1) * dl1[i];
  g.backward(dfake, false);
  return loss;
}

}  // namespace urbanwind
