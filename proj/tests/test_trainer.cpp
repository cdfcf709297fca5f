#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "din/data_io.hpp"
#include "din/testing/oracles.hpp"
#include "din/trainer.hpp"

namespace din {
namespace {

const ModelShape kTiny{4, 3, 5, {2, 3}, 4, 3};

std::vector<Sample> random_samples(std::size_t count, const ModelShape& shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back({"s" + std::to_string(i), testing::random_sequence(shape.frames, shape.raw_dim, rng),
                   i % shape.classes});
  return out;
}

TrainConfig quiet_config() {
  TrainConfig c;
  c.dropout_keep = 1.0;
  c.batch_size = 4;
  c.seed = 5;
  return c;
}

bool bit_equal(ModelParams a, ModelParams b) {
  auto ta = tensors(a);
  auto tb = tensors(b);
  for (std::size_t i = 0; i < ta.size(); ++i)
    for (std::size_t j = 0; j < ta[i].values.size(); ++j)
      if (std::bit_cast<std::uint64_t>(ta[i].values[j]) != std::bit_cast<std::uint64_t>(tb[i].values[j]))
        return false;
  return true;
}

TEST(MomentumUpdate, Examples) {
  Vector p{1.0, -2.0}, v{0.0, 0.0};
  momentum_update(p, Vector{0.0, 0.0}, v, 0.1, 0.9, 0.0);
  EXPECT_EQ(p, (Vector{1.0, -2.0}));

  momentum_update(p, Vector{0.25, -0.5}, v, 1.0, 0.0, 0.0);
  EXPECT_EQ(p, (Vector{0.75, -1.5}));

  Vector scalar{1.0}, vel{0.0};
  momentum_update(scalar, Vector{0.0}, vel, 5e-4, 0.0, 5e-4);
  EXPECT_DOUBLE_EQ(scalar[0], 0.99999975);
}

TEST(SgdMomentumStep, ZeroGradFixedPointWithoutDecay) {
  TrainConfig c = quiet_config();
  c.weight_decay = 0.0;
  ModelParams p = testing::random_model(kTiny, 1);
  const ModelParams before = p;
  auto state = make_optimizer_state(p, c);
  ModelParams g = zeros_like(p);
  sgd_momentum_step(p, g, state, c);
  EXPECT_TRUE(bit_equal(p, before));
}

TEST(SgdMomentumStep, VanillaGradientDescent) {
  TrainConfig c = quiet_config();
  c.momentum = 0.0;
  c.weight_decay = 0.0;
  c.initial_lr = 0.05;
  ModelParams p = testing::random_model(kTiny, 2);
  ModelParams expected = p;
  ModelParams g = testing::random_model(kTiny, 3);
  auto state = make_optimizer_state(p, c);
  sgd_momentum_step(p, g, state, c);
  auto te = tensors(expected);
  auto tg = tensors(g);
  for (std::size_t i = 0; i < te.size(); ++i)
    for (std::size_t j = 0; j < te[i].values.size(); ++j) te[i].values[j] -= 0.05 * tg[i].values[j];
  EXPECT_TRUE(bit_equal(p, expected));
}

TEST(SgdMomentumStep, BiasesExemptFromDecay) {
  TrainConfig c = quiet_config();
  c.momentum = 0.0;
  c.weight_decay = 0.1;
  c.initial_lr = 1.0;
  ModelParams p = testing::random_model(kTiny, 4);
  const ModelParams before = p;
  ModelParams g = zeros_like(p);
  auto state = make_optimizer_state(p, c);
  sgd_momentum_step(p, g, state, c);
  EXPECT_EQ(p.reduction.bias, before.reduction.bias);
  EXPECT_EQ(p.heads[1].bias, before.heads[1].bias);
  EXPECT_DOUBLE_EQ(p.heads[1].weights(0, 0), before.heads[1].weights(0, 0) * 0.9);
}

TEST(SgdMomentumStep, ShapeMismatch) {
  TrainConfig c = quiet_config();
  ModelParams p = zero_model(kTiny);
  ModelShape other = kTiny;
  other.classes = 2;
  ModelParams g = zero_model(other);
  auto state = make_optimizer_state(p, c);
  EXPECT_THROW(sgd_momentum_step(p, g, state, c), std::invalid_argument);
}

TEST(PlateauUpdate, DecreasingErrorsKeepRate) {
  TrainConfig c;
  c.plateau_patience = 1;
  auto state = make_optimizer_state(zero_model(kTiny), c);
  for (double e : {0.9, 0.8, 0.5, 0.3, 0.1}) plateau_update(state, e, c);
  EXPECT_EQ(state.current_lr, 5e-4);
}

TEST(PlateauUpdate, DecaysAfterPatience) {
  TrainConfig c;
  c.plateau_patience = 2;
  auto state = make_optimizer_state(zero_model(kTiny), c);
  plateau_update(state, 0.5, c);
  plateau_update(state, 0.5, c);
  EXPECT_EQ(state.current_lr, 5e-4);
  plateau_update(state, 0.5, c);
  EXPECT_DOUBLE_EQ(state.current_lr, 5e-5);
  EXPECT_EQ(state.epochs_since_improvement, 0u);
}

TEST(BatchSizes, ShortFinalBatch) {
  EXPECT_EQ(batch_sizes(70, 32), (std::vector<std::size_t>{32, 32, 6}));
  EXPECT_EQ(batch_sizes(64, 32), (std::vector<std::size_t>{32, 32}));
}

TEST(BatchGradient, IsMeanOfPerSampleGradients) {
  const ModelParams p = testing::random_model(kTiny, 8);
  const auto samples = random_samples(3, kTiny, 9);
  std::vector<const Sample*> batch{&samples[0], &samples[1], &samples[2]};
  const ForwardOptions options{SamplingMode::train_random, 1.0, nullptr};
  Rng rng(1);
  double loss = 0.0;
  ModelParams mean = batch_gradient(p, std::span<const Sample* const>(batch), options, rng, loss);

  ModelParams expected = zeros_like(p);
  auto te = tensors(expected);
  for (const auto& s : samples) {
    ModelParams single = zeros_like(p);
    Rng r(1);
    accumulate_gradients(p, s.sequence, s.label, options, r, single);
    auto ts = tensors(single);
    for (std::size_t i = 0; i < te.size(); ++i)
      for (std::size_t j = 0; j < te[i].values.size(); ++j) te[i].values[j] += ts[i].values[j] / 3.0;
  }
  auto tm = tensors(mean);
  for (std::size_t i = 0; i < te.size(); ++i)
    for (std::size_t j = 0; j < te[i].values.size(); ++j)
      EXPECT_NEAR(tm[i].values[j], te[i].values[j], 1e-12) << te[i].name;
}

TEST(TrainEpoch, FrozenModelHasConstantLoss) {
  TrainConfig c = quiet_config();
  c.initial_lr = 0.0;
  ModelParams p = testing::random_model(kTiny, 10);
  auto state = make_optimizer_state(p, c);
  const auto samples = random_samples(1, kTiny, 11);
  Rng r1(1), r2(2);
  const double a = train_epoch(p, state, samples, c, r1);
  const double b = train_epoch(p, state, samples, c, r2);
  EXPECT_EQ(a, b);
  EXPECT_THROW(train_epoch(p, state, std::span<const Sample>{}, c, r1), std::invalid_argument);
}

TEST(Evaluate, ChanceLevelForUniformModel) {
  ModelShape shape = kTiny;
  shape.classes = 2;
  const ModelParams zero = zero_model(shape);
  const auto samples = random_samples(10, shape, 12);
  const auto r = evaluate(zero, samples);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
  const auto again = evaluate(zero, samples);
  EXPECT_EQ(r.loss, again.loss);
  EXPECT_EQ(r.accuracy, again.accuracy);
  EXPECT_THROW(evaluate(zero, std::span<const Sample>{}), std::invalid_argument);
}

TEST(Evaluate, HandBuiltOrderDetectorIsPerfect) {
  // Two one-hot frames; class 0 is <e0,e1>, class 1 is <e1,e0>.
  ModelParams p = zero_model(ModelShape{2, 2, 2, {2}, 2, 2});
  p.reduction.weights = Matrix::from_rows({{1, 0}, {0, 1}});
  p.bank.scales[0].weights = Matrix::from_rows({{1, 0, 0, 1}, {0, 1, 1, 0}});
  p.bank.scales[0].bias = {-1, -1};
  p.heads[0].weights = Matrix::from_rows({{5, 0}, {0, 5}});
  const std::vector<Sample> samples{{"a", {Matrix::from_rows({{1, 0}, {0, 1}})}, 0},
                                    {"b", {Matrix::from_rows({{0, 1}, {1, 0}})}, 1}};
  EXPECT_EQ(evaluate(p, samples).accuracy, 1.0);
}

TEST(Fit, ZeroEpochsReturnsInitialModel) {
  TrainConfig c = quiet_config();
  c.max_epochs = 0;
  const ModelParams init = testing::random_model(kTiny, 13);
  auto state = make_training_state(init, c);
  const auto samples = random_samples(6, kTiny, 14);
  EXPECT_TRUE(fit(state, samples, samples, c).empty());
  EXPECT_TRUE(bit_equal(state.best_params, init));
}

TEST(Fit, ZeroLearningRateFreezesEverything) {
  TrainConfig c = quiet_config();
  c.initial_lr = 0.0;
  c.max_epochs = 3;
  const ModelParams init = testing::random_model(kTiny, 15);
  auto state = make_training_state(init, c);
  const auto samples = random_samples(6, kTiny, 16);
  const auto history = fit(state, samples, samples, c);
  ASSERT_EQ(history.size(), 3u);
  for (const auto& r : history) {
    EXPECT_EQ(r.train_loss, history[0].train_loss);
    EXPECT_EQ(r.val_loss, history[0].val_loss);
  }
  EXPECT_TRUE(bit_equal(state.params, init));
}

TEST(Fit, DeterministicAndFinite) {
  TrainConfig c;
  c.batch_size = 4;
  c.max_epochs = 4;
  c.initial_lr = 0.05;
  c.seed = 21;
  const auto train = random_samples(10, kTiny, 17);
  const auto val = random_samples(6, kTiny, 18);
  auto a = make_training_state(testing::random_model(kTiny, 19), c);
  auto b = make_training_state(testing::random_model(kTiny, 19), c);
  std::size_t epochs_seen = 0;
  const auto ha = fit(a, train, val, c, [&](const EpochReport&) {
    ++epochs_seen;
    EXPECT_TRUE(params_finite(a.params));
    EXPECT_TRUE(params_finite(a.optimizer.velocity));
  });
  const auto hb = fit(b, train, val, c);
  EXPECT_EQ(epochs_seen, 4u);
  EXPECT_EQ(ha, hb);
  EXPECT_TRUE(bit_equal(a.params, b.params));
  for (const auto& r : ha) {
    EXPECT_GE(r.val_accuracy, 0.0);
    EXPECT_LE(r.val_accuracy, 1.0);
  }
}

TEST(Fit, BestModelIsEarliestBestEpoch) {
  TrainConfig c;
  c.batch_size = 4;
  c.max_epochs = 5;
  c.initial_lr = 0.05;
  c.seed = 3;
  const auto train = random_samples(12, kTiny, 22);
  const auto val = random_samples(9, kTiny, 23);
  auto state = make_training_state(testing::random_model(kTiny, 24), c);
  const auto history = fit(state, train, val, c);
  double best = -1.0;
  std::size_t best_epoch = 0;
  for (const auto& r : history)
    if (r.val_accuracy > best) {
      best = r.val_accuracy;
      best_epoch = r.epoch;
    }
  EXPECT_EQ(state.best_epoch, best_epoch);
  EXPECT_EQ(state.best_val_accuracy, best);
  EXPECT_EQ(evaluate(state.best_params, val).accuracy, best);
}

TEST(Baseline, TrainsThroughSameLoop) {
  TrainConfig c = quiet_config();
  c.max_epochs = 2;
  c.initial_lr = 0.1;
  const auto samples = random_samples(8, kTiny, 25);
  auto state = make_training_state(init_baseline(kTiny.raw_dim, kTiny.classes, 1), c);
  const auto h = fit(state, samples, samples, c);
  EXPECT_EQ(h.size(), 2u);
  EXPECT_TRUE(params_finite(state.params));
}

}  // namespace
}  // namespace din
