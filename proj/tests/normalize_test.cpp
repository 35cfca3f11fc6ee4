// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "kunet/normalize.hpp"
#include "kunet/random.hpp"

using namespace kunet;
using T = Tensor<double>;

namespace {

T random_window(Shape shape, Rng& rng, double offset, double spread) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = offset + spread * rng.normal();
  return T(std::move(shape), std::move(v));
}

}  // namespace

TEST(Normalize, MeanMode) {
  auto [y, st] = normalize_apply(T({1, 3, 1}, {1, 2, 3}), NormMode::mean);
  EXPECT_EQ(y.to_vector(), (std::vector<double>{-1, 0, 1}));
  EXPECT_EQ(st.shift[0], 2.0);
  EXPECT_EQ(st.scale[0], 1.0);
}

TEST(Normalize, LastMode) {
  auto [y, st] = normalize_apply(T({1, 3, 1}, {1, 2, 3}), NormMode::last);
  EXPECT_EQ(y.to_vector(), (std::vector<double>{-2, -1, 0}));
  EXPECT_EQ(st.shift[0], 3.0);
}

TEST(Normalize, InstanceMode) {
  auto [y, st] = normalize_apply(T({1, 3, 1}, {1, 2, 3}), NormMode::instance, 1e-5);
  const double s = std::sqrt(2.0 / 3.0 + 1e-5);  // population variance of {1,2,3} is 2/3
  EXPECT_NEAR(y[0], -1.0 / s, 1e-12);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_NEAR(y[2], 1.0 / s, 1e-12);
  EXPECT_NEAR(y[2], 1.2247, 1e-4);
}

TEST(Normalize, InstanceModeIsSafeOnConstantWindows) {
  auto [y, st] = normalize_apply(T({1, 4, 1}, {5, 5, 5, 5}), NormMode::instance);
  for (double e : y.to_vector()) EXPECT_EQ(e, 0.0);
  EXPECT_NEAR(st.scale[0], std::sqrt(1e-5), 1e-15);
}

TEST(Normalize, StatisticsArePerWindowAndChannel) {
  // Two windows, two channels: x[b, t, c].
  const T x({2, 2, 2}, {1, 10, 3, 30, -1, 0, -3, 4});
  const auto st = fit_norm(x, NormMode::mean);
  EXPECT_EQ(st.shift, (std::vector<double>{2, 20, -2, 2}));
  const auto last = fit_norm(x, NormMode::last);
  EXPECT_EQ(last.shift, (std::vector<double>{3, 30, -3, 4}));
}

TEST(Normalize, NoneIsIdentity) {
  Rng rng(1);
  const auto x = random_window({3, 5, 2}, rng, 4.0, 2.0);
  auto [y, st] = normalize_apply(x, NormMode::none);
  EXPECT_EQ(y.to_vector(), x.to_vector());
  EXPECT_EQ(normalize_invert(y, st).to_vector(), x.to_vector());
}

TEST(Invert, ZeroPredictionGivesTheMean) {
  auto [y, st] = normalize_apply(T({1, 3, 1}, {1, 2, 3}), NormMode::mean);
  const auto p = normalize_invert(T({1, 5, 1}, std::vector<double>(5, 0.0)), st);
  EXPECT_EQ(p.to_vector(), (std::vector<double>(5, 2.0)));
}

TEST(Invert, MeanModeIsExact) {
  const T x({1, 4, 1}, {0.5, 1.5, -2.0, 4.0});
  auto [y, st] = normalize_apply(x, NormMode::mean);
  EXPECT_EQ(normalize_invert(y, st).to_vector(), x.to_vector());
}

TEST(Invert, RoundTripForEveryModeOnRandomWindows) {
  for (auto mode : {NormMode::none, NormMode::mean, NormMode::last, NormMode::instance}) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      const Shape shape{1 + rng.index(4), 1 + rng.index(50), 1 + rng.index(4)};
      const auto x = random_window(shape, rng, rng.uniform(-100, 100), rng.uniform(0.01, 50));
      auto [y, st] = normalize_apply(x, mode);
      const auto back = normalize_invert(y, st);
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const double tol = 1e-10 * std::max(1.0, std::abs(x[i]));
        ASSERT_NEAR(back[i], x[i], tol) << to_string(mode) << " seed " << seed << " at " << i;
      }
    }
  }
}

TEST(Invert, HandlesHorizonLongerOrShorterThanWindow) {
  auto [y, st] = normalize_apply(T({2, 3, 1}, {1, 2, 3, 4, 5, 6}), NormMode::last);
  const auto p = normalize_invert(T({2, 1, 1}, {0.5, -0.5}), st);
  EXPECT_EQ(p.to_vector(), (std::vector<double>{3.5, 5.5}));
  EXPECT_THROW(normalize_invert(T({3, 1, 1}, {0, 0, 0}), st), DimensionError);
}

TEST(Normalize, StateIgnoresTargets) {
  // The state depends only on the window: sentinel targets change nothing.
  Rng rng(4);
  const auto window = random_window({2, 6, 2}, rng, 1.0, 1.0);
  for (auto mode : {NormMode::mean, NormMode::last, NormMode::instance}) {
    const auto a = fit_norm(window, mode);
    const T sentinel({2, 3, 2}, std::vector<double>(12, 1e300));
    const auto normalized = normalize_with(sentinel, a);  // targets pass through the same state
    const auto b = fit_norm(window, mode);
    EXPECT_EQ(a.shift, b.shift);
    EXPECT_EQ(a.scale, b.scale);
    EXPECT_EQ(normalized.shape(), sentinel.shape());
  }
}

TEST(Normalize, RejectsEmptyWindows) {
  EXPECT_THROW(fit_norm(T({0, 3, 1}, std::vector<double>{}), NormMode::mean), DimensionError);
  EXPECT_THROW(fit_norm(T({3}, {1, 2, 3}), NormMode::mean), DimensionError);
}

TEST(RandomErase, ZeroProbabilityLeavesWindowUnchanged) {
  Rng rng(2);
  const auto x = random_window({3, 20, 2}, rng, 0.0, 1.0);
  EXPECT_EQ(random_erase(x, EraseConfig{0.0, 0.1, 0.3}, 5).to_vector(), x.to_vector());
}

TEST(RandomErase, FullSpanZeroesEverything) {
  Rng rng(2);
  const auto x = random_window({3, 20, 2}, rng, 1.0, 1.0);
  const auto y = random_erase(x, EraseConfig{1.0, 1.0, 1.0}, 5);
  for (double e : y.to_vector()) EXPECT_EQ(e, 0.0);
}

TEST(RandomErase, DeterministicForAFixedSeed) {
  Rng rng(2);
  const auto x = random_window({4, 30, 3}, rng, 1.0, 1.0);
  const EraseConfig cfg{};
  EXPECT_EQ(random_erase(x, cfg, 77).to_vector(), random_erase(x, cfg, 77).to_vector());
  EXPECT_NE(random_erase(x, cfg, 77).to_vector(), random_erase(x, cfg, 78).to_vector());
}

TEST(RandomErase, OnlySampledSpansChange) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng data(seed + 1000);
    const Shape shape{1 + data.index(3), 5 + data.index(60), 1 + data.index(3)};
    const auto x = random_window(shape, data, 3.0, 1.0);  // no exact zeros
    const EraseConfig cfg{data.uniform(), data.uniform(0.01, 0.5), 0.0};
    EraseConfig c = cfg;
    c.max_ratio = data.uniform(c.min_ratio, 1.0);
    Rng rng(seed);
    const auto spans = sample_erase_spans(shape, c, rng);
    const auto y = apply_erase(x, spans);
    std::vector<char> erased(x.numel(), 0);
    const std::size_t l = shape[1], m = shape[2];
    for (const auto& s : spans) {
      ASSERT_LE(s.begin + s.length, l);
      ASSERT_GE(s.length, 1u);
      const double ratio = static_cast<double>(s.length) / static_cast<double>(l);
      // Lengths round to whole steps, so allow half a step either side.
      EXPECT_GE(ratio + 0.5 / l + 1e-12, c.min_ratio);
      EXPECT_LE(ratio - 0.5 / l - 1e-12, c.max_ratio);
      for (std::size_t t = s.begin; t < s.begin + s.length; ++t) erased[(s.window * l + t) * m + s.channel] = 1;
    }
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (erased[i]) {
        EXPECT_EQ(y[i], 0.0);
      } else {
        EXPECT_EQ(y[i], x[i]) << "seed " << seed << " at " << i;
      }
    }
    // The seeded entry point draws the same spans.
    EXPECT_EQ(random_erase(x, c, seed).to_vector(), y.to_vector());
  }
}

TEST(RandomErase, AtMostOneSpanPerSeries) {
  Rng rng(3);
  const auto spans = sample_erase_spans({5, 40, 3}, EraseConfig{1.0, 0.1, 0.2}, rng);
  EXPECT_EQ(spans.size(), 15u);
}

TEST(RandomErase, RejectsInvalidSettings) {
  const T x({1, 4, 1}, {1, 2, 3, 4});
  EXPECT_THROW(random_erase(x, EraseConfig{1.5, 0.1, 0.2}, 0), ConfigError);
  EXPECT_THROW(random_erase(x, EraseConfig{-0.1, 0.1, 0.2}, 0), ConfigError);
  EXPECT_THROW(random_erase(x, EraseConfig{0.5, 0.0, 0.2}, 0), ConfigError);
  EXPECT_THROW(random_erase(x, EraseConfig{0.5, 0.3, 0.2}, 0), ConfigError);
  EXPECT_THROW(random_erase(x, EraseConfig{0.5, 0.3, 1.2}, 0), ConfigError);
}

TEST(NormMode, NamesRoundTrip) {
  for (auto m : {NormMode::none, NormMode::mean, NormMode::last, NormMode::instance})
    EXPECT_EQ(parse_norm_mode(to_string(m)), m);
  EXPECT_THROW(parse_norm_mode("zscore"), ConfigError);
}
