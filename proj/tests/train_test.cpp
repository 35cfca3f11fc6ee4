// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "kunet/synthetic.hpp"
#include "kunet/train.hpp"

using namespace kunet;
using T = Tensor<double>;

namespace {

ModelConfig small_model(std::size_t seq_len, LengthSchedule lookback, std::size_t horizon, std::size_t hidden,
                        Variant v = Variant::linear) {
  ModelConfig cfg;
  cfg.plan.seq_len = seq_len;
  cfg.plan.lookback = lookback;
  cfg.plan.hidden = hidden;
  if (horizon != seq_len) cfg.plan.horizon = derive_schedule(horizon, lookback.levels());
  cfg.variant = v;
  return cfg;
}

TrainConfig quick_train(std::size_t epochs, std::size_t patience) {
  TrainConfig c;
  c.epochs = epochs;
  c.patience = patience;
  c.batch_size = 16;
  c.seed = 3;
  return c;
}

std::vector<std::vector<double>> weights(const KUNet<double>& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.push_back(p.tensor.to_vector());
  return out;
}

}  // namespace

TEST(Metrics, HandExamples) {
  const T a({2}, {0, 0}), b({2}, {1, -1});
  EXPECT_EQ(mse(a, b), 1.0);
  EXPECT_EQ(mae(a, b), 1.0);
  const T c({2}, {1, 2}), d({2}, {0, 4});
  EXPECT_EQ(mse(c, d), 2.5);
  EXPECT_EQ(mae(c, d), 1.5);
  EXPECT_EQ(mse(c, c), 0.0);
  EXPECT_EQ(mae(c, c), 0.0);
  EXPECT_THROW(mse(a, T({3}, {0, 0, 0})), DimensionError);
}

TEST(Metrics, AccumulatorRequiresWindows) {
  MetricAccumulator acc(3);
  EXPECT_THROW(acc.result(), DataError);
}

TEST(Metrics, PerStepBreakdown) {
  MetricAccumulator acc(2);
  acc.add(T({1, 2, 1}, {0, 0}), T({1, 2, 1}, {1, 3}));
  const auto r = acc.result();
  EXPECT_EQ(r.mse_by_step, (std::vector<double>{1, 9}));
  EXPECT_EQ(r.mae_by_step, (std::vector<double>{1, 3}));
  EXPECT_EQ(r.mse, 5.0);
  EXPECT_EQ(r.windows, 1u);
}

TEST(Baseline, RepeatsTheLastValue) {
  const auto y = repeat_last_baseline(T({1, 3, 1}, {1, 2, 3}), 2);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 1}));
  EXPECT_EQ(y.to_vector(), (std::vector<double>{3, 3}));
  const auto z = repeat_last_baseline(T({1, 2, 2}, {1, 10, 2, 20}), 3);
  EXPECT_EQ(z.to_vector(), (std::vector<double>{2, 20, 2, 20, 2, 20}));
}

TEST(Baseline, ConstantSeriesHasZeroError) {
  auto table = sine_table(60, 24);
  for (auto& v : table.values) v = 4.25;
  const auto starts = window_starts({0, 60}, 16, 8, 1, nullptr);
  const auto m = evaluate_repeat_last<double>(table, starts, 16, 8);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.mae, 0.0);
}

TEST(Baseline, SineClosedForm) {
  // Over whole periods of equally spaced phases a, the mean of
  // (sin(a + d) - sin a)^2 is 1 - cos d.
  const std::size_t L = 32, H = 8, period = 24;
  const auto table = sine_table(4 * period + L + H - 1, period);
  const auto starts = window_starts({0, table.rows()}, L, H, 1, nullptr);
  ASSERT_EQ(starts.size(), 4 * period);
  double expected = 0.0;
  for (std::size_t s = 1; s <= H; ++s) expected += 1.0 - std::cos(2.0 * std::numbers::pi * s / period);
  expected /= H;
  EXPECT_NEAR(evaluate_repeat_last<double>(table, starts, L, H).mse, expected, 1e-12);
}

TEST(Evaluate, EmptyStreamIsAnError) {
  KUNet<double> m(small_model(8, {2, {2, 2}}, 8, 2), 0);
  const auto table = sine_table(40, 24);
  EXPECT_THROW(evaluate(m, table, std::vector<std::size_t>{}, NormMode::mean), DataError);
  EXPECT_THROW(evaluate_repeat_last<double>(table, std::vector<std::size_t>{}, 8, 8), DataError);
}

TEST(Evaluate, MeanPredictorMatchesMeanAbsoluteDeviation) {
  // A zero decoder without skips predicts 0 in normalized space, i.e. the
  // window mean once denormalized.
  auto cfg = small_model(8, {2, {2, 2}}, 4, 3);
  cfg.skips = false;
  KUNet<double> m(cfg, 1);
  for (const auto& p : m.parameters()) {
    if (p.name.rfind("decoder.", 0) != 0) continue;
    auto t = p.tensor;
    std::fill(t.data().begin(), t.data().end(), 0.0);
  }
  const auto table = ett_surrogate(120).head(120);
  SeriesTable ot{table.time_column, {"OT"}, table.timestamps, {}};
  for (std::size_t r = 0; r < table.rows(); ++r) ot.values.push_back(table.at(r, 6));
  const auto starts = window_starts({0, ot.rows()}, 8, 4, 1, nullptr);
  double abs_sum = 0.0, sq_sum = 0.0;
  for (auto t0 : starts) {
    double mu = 0.0;
    for (std::size_t t = 0; t < 8; ++t) mu += ot.values[t0 + t];
    mu /= 8;
    for (std::size_t s = 0; s < 4; ++s) {
      const double d = ot.values[t0 + 8 + s] - mu;
      abs_sum += std::abs(d);
      sq_sum += d * d;
    }
  }
  const auto r = evaluate(m, ot, starts, NormMode::mean, 7);
  EXPECT_NEAR(r.mae, abs_sum / (4.0 * starts.size()), 1e-10);
  EXPECT_NEAR(r.mse, sq_sum / (4.0 * starts.size()), 1e-9);
}

TEST(Evaluate, InvariantToBatchSize) {
  KUNet<double> m(small_model(8, {2, {2, 2}}, 4, 3, Variant::linear_1_hidden), 2);
  const auto table = ett_surrogate(90);
  const auto starts = window_starts({0, table.rows()}, 8, 4, 1, nullptr);
  const auto ref = evaluate(m, table, starts, NormMode::mean, 1);
  for (std::size_t b : {2, 7, 32, 1000}) {
    const auto r = evaluate(m, table, starts, NormMode::mean, b);
    EXPECT_EQ(r.mse, ref.mse) << b;
    EXPECT_EQ(r.mae, ref.mae) << b;
    EXPECT_EQ(r.mse_by_step, ref.mse_by_step) << b;
    EXPECT_EQ(r.windows, starts.size());
  }
  EXPECT_TRUE(std::isfinite(ref.mse) && ref.mse >= 0);
  EXPECT_TRUE(std::isfinite(ref.mae) && ref.mae >= 0);
}

TEST(Evaluate, ChannelIndependentModelOnMultichannelData) {
  KUNet<double> m(small_model(8, {2, {2, 2}}, 4, 3), 2);
  const auto table = ett_surrogate(60);
  EXPECT_TRUE(channel_independent(m, 7));
  EXPECT_FALSE(channel_independent(m, 1));
  const auto starts = window_starts({0, 60}, 8, 4, 1, nullptr);
  const auto batch = make_batch<double>(table, std::span(starts).first(3), 8, 4);
  const auto y = predict(m, batch.inputs, NormMode::mean);
  EXPECT_EQ(y.shape(), (Shape{3, 4, 7}));
  // Channel 2 of window 1 equals running that series alone.
  std::vector<double> series;
  for (std::size_t t = 0; t < 8; ++t) series.push_back(batch.inputs[(8 + t) * 7 + 2]);
  const auto alone = predict(m, T({1, 8, 1}, series), NormMode::mean);
  for (std::size_t s = 0; s < 4; ++s) EXPECT_NEAR(y[(4 + s) * 7 + 2], alone[s], 1e-12);

  auto cfg2 = small_model(8, {2, {2, 2}}, 4, 3);
  cfg2.plan.features = 2;
  cfg2.plan.feature = {2, {}};
  KUNet<double> two(cfg2, 0);
  EXPECT_THROW(channel_independent(two, 7), ConfigError);
}

TEST(Adam, OneSmallStepDecreasesTheBatchLoss) {
  const auto table = ett_surrogate(80);
  const auto starts = window_starts({0, 80}, 8, 4, 1, nullptr);
  const auto batch = make_batch<double>(table, std::span(starts).first(8), 8, 4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    KUNet<double> m(small_model(8, {2, {2, 2}}, 4, 4, Variant::linear_1_hidden), seed);
    Adam<double> opt(m.parameters(), 1e-5);
    opt.zero_grad();
    const auto loss = batch_loss(m, batch, NormMode::mean);
    const double before = loss.item();
    backward(loss);
    opt.step();
    double after = 0.0;
    {
      NoGradGuard g;
      after = batch_loss(m, batch, NormMode::mean).item();
    }
    EXPECT_LT(after, before) << "seed " << seed;
    EXPECT_EQ(opt.steps(), 1u);
  }
}

TEST(Adam, FirstStepMovesEachWeightByTheLearningRate) {
  // With bias correction the first update is lr * g / (|g| + eps).
  T w({3}, {1.0, -2.0, 0.5});
  w.set_requires_grad(true);
  backward(sum(mul(w, T({3}, {2.0, -0.5, 0.0}))));
  Adam<double> opt({{"w", w}}, 0.1);
  opt.step();
  EXPECT_NEAR(w[0], 0.9, 1e-8);
  EXPECT_NEAR(w[1], -1.9, 1e-8);
  EXPECT_EQ(w[2], 0.5);
}

TEST(EarlyStop, WorseningValidationStopsAfterTwoEpochs) {
  const auto table = sine_table(200, 24);
  const auto splits = split_rows(200, SplitOptions{});
  const auto sets = make_window_sets(splits, 8, 4, 1, nullptr);
  KUNet<double> m(small_model(8, {2, {2, 2}}, 4, 3), 0);
  std::vector<std::vector<double>> after_epoch1, after_epoch2;
  TrainHooks hooks;
  hooks.validation_override = [](std::size_t epoch, double) { return static_cast<double>(epoch); };
  hooks.on_epoch = [&](const EpochRecord& e) {
    (e.epoch == 1 ? after_epoch1 : after_epoch2) = weights(m);
  };
  const auto report = train(m, quick_train(50, 1), table, sets, hooks);
  EXPECT_EQ(report.epochs.size(), 2u);
  EXPECT_TRUE(report.stopped_early);
  EXPECT_EQ(report.best_epoch, 1u);
  EXPECT_EQ(report.best_val_loss, 1.0);
  EXPECT_EQ(weights(m), after_epoch1);
  EXPECT_NE(after_epoch1, after_epoch2);
}

TEST(EarlyStop, RestoresTheBestEpochSeen) {
  const auto table = sine_table(200, 24);
  const auto sets = make_window_sets(split_rows(200, SplitOptions{}), 8, 4, 1, nullptr);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    KUNet<double> m(small_model(8, {2, {2, 2}}, 4, 3), seed);
    Rng noise(seed + 50);
    std::vector<double> losses;
    std::vector<std::vector<std::vector<double>>> snapshots;
    TrainHooks hooks;
    hooks.validation_override = [&](std::size_t, double) {
      losses.push_back(noise.uniform());
      return losses.back();
    };
    hooks.on_epoch = [&](const EpochRecord&) { snapshots.push_back(weights(m)); };
    const auto r = train(m, quick_train(12, 4), table, sets, hooks);
    const auto best = std::min_element(losses.begin(), losses.end()) - losses.begin();
    EXPECT_EQ(r.best_epoch, static_cast<std::size_t>(best) + 1);
    EXPECT_EQ(r.best_val_loss, losses[best]);
    EXPECT_EQ(weights(m), snapshots[best]);
  }
}

TEST(Train, DeterministicForAFixedSeed) {
  const auto table = ett_surrogate(300);
  const auto sets = make_window_sets(split_rows(300, SplitOptions{}), 8, 4, 1, nullptr);
  auto run = [&] {
    KUNet<double> m(small_model(8, {2, {2, 2}}, 4, 4, Variant::linear_1_hidden), 9);
    auto cfg = quick_train(4, 4);
    cfg.random_erase = true;
    const auto r = train(m, cfg, table, sets);
    return std::pair{metrics_text(r).substr(0, metrics_text(r).find("timing")), weights(m)};
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Train, DivergenceIsReported) {
  const auto table = ett_surrogate(200);
  const auto sets = make_window_sets(split_rows(200, SplitOptions{}), 8, 4, 1, nullptr);
  KUNet<double> m(small_model(8, {2, {2, 2}}, 4, 4), 0);
  auto cfg = quick_train(5, 5);
  cfg.learning_rate = 1e300;
  try {
    train(m, cfg, table, sets);
    FAIL() << "expected divergence";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos) << e.what();
  }
}

TEST(Train, SineConverges) {
  // L = 32, T = 8, linear variant: train loss below 1e-3 within 200 epochs.
  const auto table = sine_table(600, 24);
  const auto sets = make_window_sets(split_rows(600, SplitOptions{}), 32, 8, 1, nullptr);
  KUNet<double> m(small_model(32, {4, {2, 2, 2}}, 8, 8), 1);
  auto cfg = quick_train(200, 200);
  cfg.norm = NormMode::none;
  cfg.seed = 1;
  const auto r = train(m, cfg, table, sets);
  double best_train = r.epochs.front().train_loss;
  for (const auto& e : r.epochs) best_train = std::min(best_train, e.train_loss);
  EXPECT_LT(best_train, 1e-3);
  EXPECT_LT(r.test.mse, 1e-3);
}

TEST(Train, RejectsEmptySplits) {
  const auto table = sine_table(40, 24);
  KUNet<double> m(small_model(8, {2, {2, 2}}, 4, 2), 0);
  WindowSets sets;
  sets.val = {0};
  EXPECT_THROW(train(m, quick_train(2, 1), table, sets), DataError);
  sets.train = {0};
  sets.val.clear();
  EXPECT_THROW(train(m, quick_train(2, 1), table, sets), DataError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(validate(c, nullptr));
  c.patience = c.epochs + 1;
  EXPECT_THROW(validate(c, nullptr), ConfigError);
  c = TrainConfig{};
  c.learning_rate = 0;
  EXPECT_THROW(validate(c, nullptr), ConfigError);
  c.learning_rate = 0.01;
  std::ostringstream warn;
  EXPECT_NO_THROW(validate(c, &warn));
  EXPECT_NE(warn.str().find("learning rate"), std::string::npos);
  c = TrainConfig{};
  c.random_erase = true;
  c.erase.p = 2;
  EXPECT_THROW(validate(c, nullptr), ConfigError);
}

TEST(Report, SummaryLineHasNoTiming) {
  MetricsReport r;
  r.test.mse = 0.5;
  r.test.mae = 0.25;
  r.test.windows = 10;
  r.test.mse_by_step = {0.5};
  r.test.mae_by_step = {0.25};
  r.parameters = 123;
  r.wall_seconds = 1.5;
  r.epochs.push_back({1, 2.0, 1.0, true});
  const auto line = summary_line(r);
  EXPECT_EQ(line.find("wall"), std::string::npos);
  EXPECT_NE(line.find("mse=0.5 mae=0.25 parameters=123"), std::string::npos) << line;
  const auto text = metrics_text(r);
  EXPECT_NE(text.find("epoch=1 train_loss=2 val_loss=1 improved=1\n"), std::string::npos) << text;
  EXPECT_NE(text.find("horizon step=1 mse=0.5 mae=0.25\n"), std::string::npos) << text;
  EXPECT_NE(text.find("timing wall_seconds=1.5\n"), std::string::npos) << text;
}
