// Sample loading and the alternating discriminator/generator training loop.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbanwind/cgan.hpp"
#include "urbanwind/checkpoint.hpp"
#include "urbanwind/dataset.hpp"

namespace urbanwind {

/// Scaled network input (1, 4, S, S) for one encoded stack.
inline nn::Tensor<float> input_tensor(const EncodedInput& enc, const Normalization& norm) {
  const int h = enc.rows();
  const int w = enc.cols();
  nn::Tensor<float> t(nn::Shape{1, kInputChannels, h, w});
  const double scale = 1.0 / norm.height_ref;
  for (int c = 0; c < kInputChannels; ++c) {
    const auto src = enc.channels[static_cast<std::size_t>(c)].values();
    for (std::size_t i = 0; i < src.size(); ++i) t[c * src.size() + i] = static_cast<float>(src[i] * scale);
  }
  return t;
}

struct SampleSet {
  nn::Tensor<float> inputs;   // (N, 4, S, S) scaled
  nn::Tensor<float> targets;  // (N, 1, S, S) encoded factors
  std::vector<ManifestEntry> entries;
  std::vector<WindField> truths;

  std::size_t size() const { return entries.size(); }
};

inline SampleSet load_samples(const DatasetManifest& m, const std::filesystem::path& dir, Split split,
                              const Normalization& norm) {
  SampleSet set;
  for (const ManifestEntry* e : m.select(split)) set.entries.push_back(*e);
  const int n = static_cast<int>(set.entries.size());
  const int s = m.grid;
  set.inputs = nn::Tensor<float>(nn::Shape{n, kInputChannels, s, s});
  set.targets = nn::Tensor<float>(nn::Shape{n, 1, s, s});
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  for (int i = 0; i < n; ++i) {
    const ManifestEntry& e = set.entries[static_cast<std::size_t>(i)];
    EncodedInput enc = encoded_input_from(read_field((dir / e.input_path).string()));
    WindField truth = wind_field_from(read_field((dir / e.truth_path).string()));
    if (enc.rows() != s || enc.cols() != s || truth.rows() != s || truth.cols() != s) {
      throw FormatError(FormatError::Kind::BadHeader, "sample " + e.input_path + " does not match manifest grid");
    }
    truth.direction = e.direction;
    truth.slice_height = e.slice_height;
    truth.scene_id = e.scene_id;
    const nn::Tensor<float> x = input_tensor(enc, norm);
    std::copy(x.values().begin(), x.values().end(), set.inputs.data() + static_cast<std::size_t>(i) * 4 * plane);
    for (std::size_t k = 0; k < plane; ++k) {
      set.targets[i * plane + k] = static_cast<float>(norm.encode_factor(truth.factors.values()[k]));
    }
    set.truths.push_back(std::move(truth));
  }
  return set;
}

/// Rows `idx` of a batch-major tensor.
template <class T>
nn::Tensor<T> gather(const nn::Tensor<T>& src, std::span<const std::size_t> idx) {
  nn::Shape s = src.shape();
  const std::size_t stride = static_cast<std::size_t>(s.c) * s.plane();
  s.n = static_cast<int>(idx.size());
  nn::Tensor<T> out(s);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(src.data() + idx[i] * stride, stride, out.data() + i * stride);
  }
  return out;
}

struct TrainConfig {
  double lr = 2e-4;
  double lambda_l1 = 100.0;
  int epochs = 200;
  int batch = 4;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (!(lambda_l1 >= 0.0)) throw std::invalid_argument("lambda_l1 must be non-negative");
    if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (batch < 1) throw std::invalid_argument("batch must be at least 1");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be non-negative");
  }
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double l1 = 0.0;
  double adv_g = 0.0;
  double adv_d = 0.0;
  long long d_steps = 0;
  long long g_steps = 0;
  double seconds = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainState {
  Generator<float> generator;
  Discriminator<float> discriminator;
  nn::AdamState<float> g_opt;
  nn::AdamState<float> d_opt;
};

inline ModelCheckpoint make_checkpoint(TrainState& st, const Normalization& norm, const TrainConfig& tc, int epoch) {
  ModelCheckpoint ck;
  ck.metadata = {{"format_version", kCheckpointVersion},
                 {"generator", to_json(st.generator.config())},
                 {"discriminator", to_json(st.discriminator.config())},
                 {"normalization", to_json(norm)},
                 {"epoch", epoch},
                 {"seed", tc.seed},
                 {"train", {{"lr", tc.lr}, {"lambda_l1", tc.lambda_l1}, {"batch", tc.batch}, {"epochs", tc.epochs}}}};
  append_tensors(st.generator, ck);
  append_tensors(st.discriminator, ck);
  return ck;
}

struct TrainResult {
  ModelCheckpoint checkpoint;
  std::vector<EpochLog> log;
};

namespace detail {

inline void require_finite_loss(double v, const char* what, int epoch, std::size_t batch) {
  if (!std::isfinite(v)) {
    throw TrainingError(std::string("non-finite ") + what + " at epoch " + std::to_string(epoch) + ", batch " +
                        std::to_string(batch));
  }
}

}  // namespace detail

/// Alternating updates per batch: one discriminator step on (real, fake),
/// then one generator step on adversarial + lambda * L1. Deterministic in
/// (data, seed). `on_checkpoint` is called at the configured cadence and
/// after the final epoch; `on_epoch` after each logged epoch.
inline TrainResult train(const SampleSet& data, const TrainConfig& tc, const GeneratorConfig& gc,
                         const DiscriminatorConfig& dc, const Normalization& norm = {},
                         const std::function<void(const ModelCheckpoint&, int)>& on_checkpoint = {},
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  tc.validate();
  gc.validate();
  if (data.size() == 0) throw TrainingError("training set is empty");
  if (data.inputs.shape().h != gc.input_size) {
    throw TrainingError("samples are " + std::to_string(data.inputs.shape().h) + " cells, generator expects " +
                        std::to_string(gc.input_size));
  }
  TrainState st{Generator<float>(gc, nn::splitmix64(tc.seed ^ 0x47)),
                Discriminator<float>(dc, nn::splitmix64(tc.seed ^ 0x44)),
                {},
                {}};
  const nn::AdamConfig adam{tc.lr, 0.5, 0.999, 1e-8};
  auto g_params = st.generator.parameters();
  auto d_params = st.discriminator.parameters();
  nn::Rng dropout_rng = nn::Rng::substream(tc.seed, 1);

  TrainResult result;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  long long d_steps = 0;
  long long g_steps = 0;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    nn::Rng shuffle_rng = nn::Rng::substream(tc.seed, 1000 + static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    double sum_l1 = 0.0, sum_g = 0.0, sum_d = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tc.batch));
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const nn::Tensor<float> cond = gather(data.inputs, idx);
      const nn::Tensor<float> real = gather(data.targets, idx);

      ForwardMode mode{true, gc.dropout_p > 0.0, gc.dropout_p, &dropout_rng};
      const nn::Tensor<float> fake = st.generator.forward(cond, mode);

      // Discriminator step.
      nn::zero_grads(d_params);
      nn::Tensor<float> grad;
      const double d_real = bce_with_logits(st.discriminator.forward(cond, real, true), 1.0, &grad);
      st.discriminator.backward(grad, false);
      const double d_fake = bce_with_logits(st.discriminator.forward(cond, fake, true), 0.0, &grad);
      st.discriminator.backward(grad, false);
      const double adv_d = d_real + d_fake;
      detail::require_finite_loss(adv_d, "discriminator loss", epoch, batches);
      nn::adam_step(d_params, st.d_opt, adam);
      ++d_steps;

      // Generator step.
      const GeneratorLoss gl = generator_gradients(st.generator, st.discriminator, cond, fake, real, tc.lambda_l1);
      const double adv_g = gl.adv_g;
      const double l1 = gl.l1;
      detail::require_finite_loss(adv_g, "generator adversarial loss", epoch, batches);
      detail::require_finite_loss(l1, "L1 loss", epoch, batches);
      nn::adam_step(g_params, st.g_opt, adam);
      ++g_steps;

      sum_l1 += l1;
      sum_g += adv_g;
      sum_d += adv_d;
      ++batches;
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto nb = static_cast<double>(batches);
    result.log.push_back({epoch, sum_l1 / nb, sum_g / nb, sum_d / nb, d_steps, g_steps, dt});
    if (on_epoch) on_epoch(result.log.back());
    const bool cadence = tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0;
    if (cadence || epoch == tc.epochs) {
      ModelCheckpoint ck = make_checkpoint(st, norm, tc, epoch);
      if (on_checkpoint) on_checkpoint(ck, epoch);
      if (epoch == tc.epochs) result.checkpoint = std::move(ck);
    }
  }
  return result;
}

inline nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch},     {"l1", e.l1},           {"adv_g", e.adv_g},   {"adv_d", e.adv_d},
          {"d_steps", e.d_steps}, {"g_steps", e.g_steps}, {"seconds", e.seconds}};
}

}  // namespace urbanwind
