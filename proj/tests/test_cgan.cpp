#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "urbanwind/cgan.hpp"

using namespace urbanwind;
using nn::Shape;
using nn::Tensor;

namespace {

Tensor<float> randn(Shape s, std::uint64_t seed, double scale = 1.0) {
  nn::Rng rng(seed);
  return nn::normal_tensor<float>(s, 0.0, scale, rng);
}

// Independent recurrence: rf += (k - 1) * jump, jump *= stride.
int recurrence_rf(int stride2, int stride1) {
  int rf = 1;
  int jump = 1;
  for (int i = 0; i < stride2; ++i) {
    rf += 3 * jump;
    jump *= 2;
  }
  for (int i = 0; i < stride1; ++i) rf += 3 * jump;
  return rf;
}

int closed_form_size(int input, std::span<const nn::ConvSpec> stack) {
  int s = input;
  for (const auto& l : stack) s = (s + 2 * l.padding - 4) / l.stride + 1;
  return s;
}

DiscriminatorConfig disc(ReceptiveField rf, int width = 4) {
  DiscriminatorConfig c;
  c.receptive_field = rf;
  c.base_width = width;
  return c;
}

}  // namespace

TEST(ReceptiveField, ShippedStacks) {
  EXPECT_EQ(recurrence_rf(3, 2), 70);
  EXPECT_EQ(recurrence_rf(4, 2), 142);
  EXPECT_EQ(recurrence_rf(5, 2), 286);
  for (auto [rf, n] : {std::pair{ReceptiveField::RF70, 3}, {ReceptiveField::RF142, 4}, {ReceptiveField::RF286, 5}}) {
    const auto stack = discriminator_stack(disc(rf));
    EXPECT_EQ(compute_receptive_field(stack), static_cast<int>(rf));
    EXPECT_EQ(compute_receptive_field(stack), recurrence_rf(n, 2));
  }
}

TEST(ReceptiveField, ParseAcceptsPaperSpellings) {
  EXPECT_EQ(parse_receptive_field(140), ReceptiveField::RF142);
  EXPECT_EQ(parse_receptive_field(284), ReceptiveField::RF286);
  EXPECT_EQ(parse_receptive_field(70), ReceptiveField::RF70);
  EXPECT_THROW(parse_receptive_field(100), std::invalid_argument);
}

TEST(ReceptiveField, InputWindowMatchesField) {
  for (ReceptiveField rf : {ReceptiveField::RF70, ReceptiveField::RF142, ReceptiveField::RF286}) {
    const auto stack = discriminator_stack(disc(rf));
    const auto [lo, hi] = stack_input_window(stack, 5);
    EXPECT_EQ(hi - lo + 1, static_cast<int>(rf));
  }
}

TEST(Discriminator, MapIs32At512WithRf142) {
  const auto stack = discriminator_stack(disc(ReceptiveField::RF142));
  EXPECT_EQ(stack_output_size(stack, 512), 32);
  Discriminator<float> d(disc(ReceptiveField::RF142, 1), 3);
  const Tensor<float> logits = d.forward(Tensor<float>(Shape{1, 4, 512, 512}, 0.1f), Tensor<float>(Shape{1, 1, 512, 512}), false);
  EXPECT_EQ(logits.shape(), (Shape{1, 1, 32, 32}));
}

TEST(Discriminator, MapSizeFollowsStackArithmetic) {
  for (ReceptiveField rf : {ReceptiveField::RF70, ReceptiveField::RF142, ReceptiveField::RF286}) {
    const auto stack = discriminator_stack(disc(rf));
    for (int input : {64, 128, 256}) {
      EXPECT_EQ(stack_output_size(stack, input), closed_form_size(input, stack));
    }
  }
  const auto stack70 = discriminator_stack(disc(ReceptiveField::RF70));
  Discriminator<float> d(disc(ReceptiveField::RF70, 2), 4);
  const Tensor<float> logits = d.forward(Tensor<float>(Shape{1, 4, 256, 256}), Tensor<float>(Shape{1, 1, 256, 256}), false);
  EXPECT_EQ(logits.shape().h, closed_form_size(256, stack70));
  EXPECT_EQ(logits.shape().h, 32);
}

TEST(Discriminator, ZeroWeightsGiveEqualLogits) {
  Discriminator<float> d(disc(ReceptiveField::RF70), 5);
  for (auto* p : d.parameters()) p->value.fill(0.0f);
  const Tensor<float> logits = d.forward(randn(Shape{2, 4, 64, 64}, 1), randn(Shape{2, 1, 64, 64}, 2), false);
  for (float v : logits.values()) EXPECT_EQ(v, logits[0]);
}

TEST(Discriminator, PixelsOutsideWindowDoNotMatter) {
  Discriminator<float> d(disc(ReceptiveField::RF70), 6);
  const Tensor<float> cond = randn(Shape{1, 4, 128, 128}, 3);
  Tensor<float> field = randn(Shape{1, 1, 128, 128}, 4);
  const Tensor<float> a = d.forward(cond, field, false);
  const auto stack = discriminator_stack(disc(ReceptiveField::RF70));
  const int out = 2;
  const auto [lo, hi] = stack_input_window(stack, out);
  for (int y = 0; y < 128; ++y) {
    for (int x = 0; x < 128; ++x) {
      if (x > hi + 1 || y > hi + 1) field.at(0, 0, y, x) += 5.0f;
    }
  }
  const Tensor<float> b = d.forward(cond, field, false);
  EXPECT_NEAR(a.at(0, 0, out, out), b.at(0, 0, out, out), 1e-6);
  EXPECT_GT(std::abs(a.at(0, 0, 12, 12) - b.at(0, 0, 12, 12)), 1e-6);
  EXPECT_LE(lo, out * 8);
}

TEST(Generator, ShapeRoundTripAndRange) {
  for (int size : {64, 128, 256}) {
    GeneratorConfig cfg;
    cfg.input_size = size;
    cfg.base_width = size > 64 ? 2 : 8;
    Generator<float> g(cfg, 1);
    EXPECT_EQ(cfg.depth(), static_cast<int>(std::log2(size)));
    const Tensor<float> y = g.forward(randn(Shape{2, 4, size, size}, 5, 2.0), ForwardMode{});
    EXPECT_EQ(y.shape(), (Shape{2, 1, size, size}));
    for (float v : y.values()) {
      ASSERT_GE(v, -1.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Generator, Admissible512) {
  GeneratorConfig cfg;
  cfg.input_size = 512;
  cfg.base_width = 1;
  Generator<float> g(cfg, 2);
  EXPECT_EQ(cfg.depth(), 9);
  EXPECT_EQ(g.forward(Tensor<float>(Shape{1, 4, 512, 512}), ForwardMode{}).shape(), (Shape{1, 1, 512, 512}));
}

TEST(Generator, RejectsBadConfigAndShapes) {
  GeneratorConfig cfg;
  cfg.input_size = 100;
  EXPECT_THROW(Generator<float>(cfg, 0), std::invalid_argument);
  cfg.input_size = 64;
  Generator<float> g(cfg, 0);
  EXPECT_THROW(g.forward(Tensor<float>(Shape{1, 4, 32, 32}), ForwardMode{}), nn::ShapeError);
  EXPECT_THROW(g.forward(Tensor<float>(Shape{1, 4, 64, 64}), ForwardMode{false, true, 0.5, nullptr}),
               std::invalid_argument);
}

TEST(Generator, DeterministicWithoutDropout) {
  GeneratorConfig cfg;
  cfg.base_width = 8;
  Generator<float> g(cfg, 9);
  const Tensor<float> x = randn(Shape{1, 4, 64, 64}, 6);
  EXPECT_EQ(g.forward(x, ForwardMode{}), g.forward(x, ForwardMode{}));
  Generator<float> twin(cfg, 9);
  EXPECT_EQ(twin.forward(x, ForwardMode{}), g.forward(x, ForwardMode{}));
}

TEST(Generator, DropoutOnlyInInnermostDecoderBlocks) {
  GeneratorConfig cfg;
  Generator<float> g(cfg, 0);
  const int d = cfg.depth();
  for (int level = 0; level < d; ++level) EXPECT_EQ(g.has_dropout(level), level >= d - 3) << level;
  const Tensor<float> x = randn(Shape{1, 4, 64, 64}, 7);
  nn::Rng a(1);
  nn::Rng b(2);
  EXPECT_NE(g.forward(x, ForwardMode{false, true, 0.5, &a}), g.forward(x, ForwardMode{false, true, 0.5, &b}));
}

TEST(Normalization, FactorMappingRoundTrip) {
  const Normalization n;
  EXPECT_DOUBLE_EQ(n.encode_factor(0.0), -1.0);
  EXPECT_DOUBLE_EQ(n.encode_factor(2.5), 1.0);
  EXPECT_DOUBLE_EQ(n.encode_factor(4.0), 1.0);
  EXPECT_DOUBLE_EQ(n.decode_factor(n.encode_factor(1.3)), 1.3);
  EXPECT_DOUBLE_EQ(n.decode_factor(-3.0), 0.0);
}

TEST(Loss, Examples) {
  const Tensor<float> real(Shape{1, 1, 8, 8}, 0.5f);
  const Tensor<float> fake(Shape{1, 1, 8, 8}, 0.3f);
  const Tensor<float> zeros(Shape{1, 1, 4, 4}, 0.0f);
  const LossTerms t = loss_terms(real, fake, zeros, zeros);
  EXPECT_NEAR(t.adv_g, std::numbers::ln2, 1e-12);
  EXPECT_NEAR(t.adv_d, 2.0 * std::numbers::ln2, 1e-12);
  EXPECT_NEAR(t.l1, 0.2, 1e-7);
  EXPECT_EQ(loss_terms(real, real, zeros, zeros).l1, 0.0);
  EXPECT_NEAR(t.generator_total(100.0), std::numbers::ln2 + 20.0, 1e-5);
  EXPECT_THROW(l1_loss(real, zeros), nn::ShapeError);
}

TEST(Loss, BceIsStableForLargeLogits) {
  const Tensor<float> big(Shape{1, 1, 1, 1}, 500.0f);
  EXPECT_NEAR(bce_with_logits(big, 1.0), 0.0, 1e-12);
  EXPECT_NEAR(bce_with_logits(big, 0.0), 500.0, 1e-9);
}

TEST(Objective, ZeroLambdaGivesPureAdversarialUpdate) {
  GeneratorConfig gc;
  gc.base_width = 4;
  Generator<float> g(gc, 11);
  Discriminator<float> d(disc(ReceptiveField::RF70), 12);
  const Tensor<float> cond = randn(Shape{2, 4, 64, 64}, 8, 0.3);
  const Tensor<float> real = randn(Shape{2, 1, 64, 64}, 9, 0.5);
  const auto d_before = d.parameters();
  std::vector<Tensor<float>> d_values;
  for (auto* p : d_before) d_values.push_back(p->value);

  // Manual adversarial-only gradient.
  const Tensor<float> fake = g.forward(cond, ForwardMode{true, false, 0.5, nullptr});
  Tensor<float> grad;
  bce_with_logits(d.forward(cond, fake, true), 1.0, &grad);
  const Tensor<float> dfake = d.backward(grad, true).second;
  auto gp = g.parameters();
  nn::zero_grads(gp);
  g.backward(dfake, false);
  std::vector<Tensor<float>> manual;
  for (auto* p : gp) manual.push_back(p->grad);

  g.forward(cond, ForwardMode{true, false, 0.5, nullptr});
  const GeneratorLoss loss = generator_gradients(g, d, cond, fake, real, 0.0);
  EXPECT_GT(loss.l1, 0.0);
  for (std::size_t k = 0; k < gp.size(); ++k) {
    for (std::size_t i = 0; i < gp[k]->grad.size(); ++i) ASSERT_NEAR(gp[k]->grad[i], manual[k][i], 1e-6) << gp[k]->name;
  }

  // One Adam step on each gradient set moves parameters identically; D is untouched.
  std::vector<Tensor<float>> start;
  for (auto* p : gp) start.push_back(p->value);
  nn::AdamState<float> opt;
  nn::adam_step(gp, opt, {});
  std::vector<Tensor<float>> delta_a;
  for (std::size_t k = 0; k < gp.size(); ++k) {
    Tensor<float> dlt = gp[k]->value;
    for (std::size_t i = 0; i < dlt.size(); ++i) dlt[i] -= start[k][i];
    delta_a.push_back(dlt);
    gp[k]->value = start[k];
    gp[k]->grad = manual[k];
  }
  nn::AdamState<float> opt2;
  nn::adam_step(gp, opt2, {});
  for (std::size_t k = 0; k < gp.size(); ++k) {
    for (std::size_t i = 0; i < gp[k]->value.size(); ++i) {
      ASSERT_NEAR(gp[k]->value[i] - start[k][i], delta_a[k][i], 1e-6);
    }
  }
  for (std::size_t k = 0; k < d_before.size(); ++k) EXPECT_EQ(d_before[k]->value, d_values[k]);

  // A positive lambda changes the direction.
  g.forward(cond, ForwardMode{true, false, 0.5, nullptr});
  generator_gradients(g, d, cond, fake, real, 100.0);
  double diff = 0.0;
  for (std::size_t k = 0; k < gp.size(); ++k) {
    for (std::size_t i = 0; i < gp[k]->grad.size(); ++i) diff += std::abs(gp[k]->grad[i] - manual[k][i]);
  }
  EXPECT_GT(diff, 1e-3);
}
