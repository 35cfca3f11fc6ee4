// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "kunet/grad_check.hpp"
#include "kunet/kernels.hpp"
#include "kunet/random.hpp"

using namespace kunet;
using T = Tensor<double>;

namespace {

T random_tensor(Shape shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.normal();
  return T(std::move(shape), std::move(v));
}

void fill(T t, const std::vector<double>& values) {
  ASSERT_EQ(t.numel(), values.size());
  std::copy(values.begin(), values.end(), t.data().begin());
}

void fill_all(const Kernel<double>& k, double value) {
  for (const auto& p : k.parameters()) {
    auto t = p.tensor;
    std::fill(t.data().begin(), t.data().end(), value);
  }
}

T param(const Kernel<double>& k, const std::string& name) {
  for (const auto& p : k.parameters())
    if (p.name == name) return p.tensor;
  ADD_FAILURE() << "no parameter " << name;
  return {};
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

KernelSpec spec(KernelKind kind, std::size_t li, std::size_t wi, std::size_t lo, std::size_t wo, std::size_t h = 4,
                std::size_t heads = 2, std::size_t blocks = 1) {
  return KernelSpec{kind, li, wi, lo, wo, kind == KernelKind::linear ? 0 : h, heads, blocks};
}

}  // namespace

TEST(LinearKernel, HandAffine) {
  Rng rng(0);
  LinearKernel<double> k(spec(KernelKind::linear, 2, 1, 1, 2), rng);
  fill(param(k, "w"), {1, 1, 1, -1});
  fill(param(k, "b"), {0.5, 0});
  const auto y = k.forward(T({1, 2, 1}, {1, 2}));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2}));
  EXPECT_EQ(y.to_vector(), (std::vector<double>{3.5, -1}));
}

TEST(LinearKernel, IdentityWeightsCopyTheFlattenedInput) {
  Rng rng(0);
  LinearKernel<double> k(spec(KernelKind::linear, 3, 2, 2, 3), rng);
  std::vector<double> eye(36, 0.0);
  for (std::size_t i = 0; i < 6; ++i) eye[i * 6 + i] = 1.0;
  fill(param(k, "w"), eye);
  fill(param(k, "b"), std::vector<double>(6, 0.0));
  const auto x = random_tensor({4, 3, 2}, rng);
  EXPECT_EQ(k.forward(x).to_vector(), x.to_vector());
}

TEST(LinearKernel, RejectsWrongSegmentShape) {
  Rng rng(0);
  LinearKernel<double> k(spec(KernelKind::linear, 3, 2, 1, 4), rng);
  EXPECT_THROW(k.forward(T::zeros({2, 2, 3})), DimensionError);
}

TEST(MlpKernel, ZeroParametersGiveZeroOutput) {
  Rng rng(1);
  MlpKernel<double> k(spec(KernelKind::mlp, 4, 1, 1, 3, 5), rng);
  fill_all(k, 0.0);
  for (double v : k.forward(random_tensor({2, 4, 1}, rng)).to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(MlpKernel, ScalarHandComputation) {
  Rng rng(1);
  MlpKernel<double> k(spec(KernelKind::mlp, 1, 1, 1, 1, 1), rng);
  fill_all(k, 0.0);
  fill(param(k, "w1"), {2});
  fill(param(k, "w2"), {3});
  EXPECT_NEAR(k.forward(T({1, 1, 1}, {1})).item(), 3 * std::tanh(2.0), 1e-15);
  EXPECT_NEAR(k.forward(T({1, 1, 1}, {1})).item(), 2.8921, 1e-4);
}

TEST(PositionalEncoding, KnownValuesAndRange) {
  const auto pe = positional_encoding<double>(5, 6);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(pe[i], i % 2 == 0 ? 0.0 : 1.0);
  EXPECT_NEAR(pe[6], std::sin(1.0), 1e-15);
  EXPECT_NEAR(pe[6], 0.8415, 1e-4);
  // Columns 2 and 3 share the frequency 10000^(-2/6).
  const double w = std::pow(10000.0, -2.0 / 6.0);
  EXPECT_NEAR(pe[3 * 6 + 2], std::sin(3 * w), 1e-15);
  EXPECT_NEAR(pe[3 * 6 + 3], std::cos(3 * w), 1e-15);
  for (double v : pe.to_vector()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Attention, OrthogonalQueriesAverageTheValues) {
  const T q({2, 2}, {1, 0, 1, 0});
  const T k({3, 2}, {0, 1, 0, 2, 0, -1});
  const T v({3, 2}, {1, 2, 3, 4, 5, 9});
  const auto out = attention(q, k, v);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_NEAR(out[r * 2 + 0], 3.0, 1e-15);
    EXPECT_NEAR(out[r * 2 + 1], 5.0, 1e-15);
  }
}

TEST(Attention, SingleKeyReturnsItsValue) {
  Rng rng(2);
  const auto q = random_tensor({4, 3}, rng);
  const auto k = random_tensor({1, 3}, rng);
  const T v({1, 2}, {7, -2});
  const auto out = attention(q, k, v);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_DOUBLE_EQ(out[r * 2], 7.0);
    EXPECT_DOUBLE_EQ(out[r * 2 + 1], -2.0);
  }
}

TEST(Attention, MatchesScalarLoopOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto q = random_tensor({3, 2}, rng);
    const auto k = random_tensor({4, 2}, rng);
    const auto v = random_tensor({4, 3}, rng);
    const auto out = attention(q, k, v);
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<double> s(4);
      double mx = -1e300, z = 0;
      for (std::size_t j = 0; j < 4; ++j) {
        s[j] = (q[i * 2] * k[j * 2] + q[i * 2 + 1] * k[j * 2 + 1]) / std::sqrt(2.0);
        mx = std::max(mx, s[j]);
      }
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0;
        for (std::size_t j = 0; j < 4; ++j) acc += s[j] / z * v[j * 3 + c];
        EXPECT_NEAR(out[i * 3 + c], acc, 1e-12);
      }
    }
  }
}

TEST(Attention, RowsAreConvexCombinations) {
  Rng rng(3);
  const auto q = random_tensor({5, 4}, rng);
  const auto k = random_tensor({6, 4}, rng);
  // Values = identity: each output row is the weight vector itself.
  std::vector<double> eye(36, 0.0);
  for (std::size_t i = 0; i < 6; ++i) eye[i * 6 + i] = 1;
  const auto w = attention(q, k, T({6, 6}, eye));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      EXPECT_GE(w[r * 6 + c], 0.0);
      s += w[r * 6 + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_THROW(attention(q, random_tensor({6, 3}, rng), T({6, 6}, eye)), DimensionError);
}

TEST(MultiHeadAttention, OneHeadWithIdentityProjectionsIsAttention) {
  Rng rng(4);
  const auto x = random_tensor({2, 3, 4}, rng);
  std::vector<double> eye(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1;
  const T id({4, 4}, eye);
  const auto out = multi_head_attention(x, {{id, id, id}}, id);
  const auto ref = attention(x, x, x);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-12);
}

TEST(MultiHeadAttention, TwoHeadsEqualConcatenatedAttentionsProjected) {
  Rng rng(5);
  const auto x = random_tensor({2, 3, 4}, rng);
  std::vector<AttentionHead<double>> heads;
  for (int h = 0; h < 2; ++h) heads.push_back({random_tensor({4, 2}, rng), random_tensor({4, 2}, rng), random_tensor({4, 2}, rng)});
  const auto wo = random_tensor({4, 4}, rng);
  const auto out = multi_head_attention(x, heads, wo);
  ASSERT_EQ(out.shape(), (Shape{2, 3, 4}));
  const auto h0 = attention(matmul(x, heads[0].query), matmul(x, heads[0].key), matmul(x, heads[0].value));
  const auto h1 = attention(matmul(x, heads[1].query), matmul(x, heads[1].key), matmul(x, heads[1].value));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t c = 0; c < 4; ++c) {
        double acc = 0;
        for (std::size_t j = 0; j < 2; ++j) {
          acc += h0[(b * 3 + t) * 2 + j] * wo[j * 4 + c];
          acc += h1[(b * 3 + t) * 2 + j] * wo[(2 + j) * 4 + c];
        }
        EXPECT_NEAR(out[(b * 3 + t) * 4 + c], acc, 1e-12);
      }
  heads.push_back(heads[0]);
  EXPECT_THROW(multi_head_attention(x, heads, wo), ConfigError);  // 4 not divisible by 3
}

TEST(TransformerKernel, ShapesAndContract) {
  Rng rng(6);
  TransformerKernel<double> enc(spec(KernelKind::transformer, 5, 2, 1, 8, 4), rng);
  EXPECT_EQ(enc.forward(random_tensor({3, 5, 2}, rng)).shape(), (Shape{3, 1, 8}));
  TransformerKernel<double> dec(spec(KernelKind::transformer, 1, 8, 5, 2, 4), rng);
  EXPECT_EQ(dec.forward(random_tensor({3, 1, 8}, rng)).shape(), (Shape{3, 5, 2}));
  EXPECT_THROW(validate(spec(KernelKind::transformer, 3, 1, 2, 1, 4)), ConfigError);
  EXPECT_THROW(validate(spec(KernelKind::transformer, 3, 1, 1, 1, 5, 2)), ConfigError);  // 5 % 2 heads
}

TEST(TransformerKernel, ZeroProjectionGivesZeroOutput) {
  Rng rng(7);
  TransformerKernel<double> k(spec(KernelKind::transformer, 4, 1, 1, 3, 4), rng);
  auto w = param(k, "out.w");
  auto b = param(k, "out.b");
  std::fill(w.data().begin(), w.data().end(), 0.0);
  std::fill(b.data().begin(), b.data().end(), 0.0);
  for (double v : k.forward(random_tensor({2, 4, 1}, rng)).to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(LstmStep, ZeroWeightsHalveTheCell) {
  LstmCellParams<double> p;
  for (T* w : {&p.w_forget, &p.w_input, &p.w_cell, &p.w_output}) *w = T::zeros({3, 2});
  for (T* b : {&p.b_forget, &p.b_input, &p.b_cell, &p.b_output}) *b = T::zeros({2});
  const T c({1, 2}, {0.8, -2.0});
  const auto s = lstm_step(T({1, 1}, {0.3}), T({1, 2}, {0.1, 0.2}), c, p);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(s.c[i], 0.5 * c[i]);
    EXPECT_DOUBLE_EQ(s.h[i], 0.5 * std::tanh(0.5 * c[i]));
  }
}

TEST(LstmStep, ScalarHandComputation) {
  LstmCellParams<double> p;
  for (T* w : {&p.w_forget, &p.w_input, &p.w_cell, &p.w_output}) *w = T({2, 1}, {1, 1});
  for (T* b : {&p.b_forget, &p.b_input, &p.b_cell, &p.b_output}) *b = T::zeros({1});
  const auto s = lstm_step(T({1, 1}, {1}), T({1, 1}, {0}), T({1, 1}, {0}), p);
  const double g = sigmoid_scalar(1.0), cand = std::tanh(1.0);
  EXPECT_NEAR(g, 0.7311, 1e-4);
  EXPECT_NEAR(cand, 0.7616, 1e-4);
  EXPECT_NEAR(s.c.item(), g * cand, 1e-15);
  EXPECT_NEAR(s.c.item(), 0.5568, 1e-4);
  EXPECT_NEAR(s.h.item(), g * std::tanh(g * cand), 1e-15);
  EXPECT_NEAR(s.h.item(), 0.3696, 1e-4);
  EXPECT_THROW(lstm_step(T({1, 2}, {1, 1}), T({1, 1}, {0}), T({1, 1}, {0}), p), DimensionError);
}

TEST(LstmStep, GradientThroughThreeSteps) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    LstmCellParams<double> p;
    for (T* w : {&p.w_forget, &p.w_input, &p.w_cell, &p.w_output}) *w = random_tensor({5, 3}, rng);
    for (T* b : {&p.b_forget, &p.b_input, &p.b_cell, &p.b_output}) *b = random_tensor({3}, rng);
    const auto xs = random_tensor({2, 3, 2}, rng);
    auto f = [&] {
      LstmState<double> s{T::zeros({2, 3}), T::zeros({2, 3})};
      for (std::size_t t = 0; t < 3; ++t) s = lstm_step(reshape(slice(xs, 1, t, 1), {2, 2}), s.h, s.c, p);
      return sum(mul(s.h, s.c));
    };
    const auto r = grad_check(f, {xs, p.w_forget, p.w_input, p.w_cell, p.w_output, p.b_forget, p.b_input, p.b_cell,
                                  p.b_output});
    EXPECT_LE(r.max_relative_error, 1e-4) << "seed " << seed;
  }
}

TEST(LstmKernel, MatchesUnrolledScalarOracle) {
  Rng rng(9);
  const std::size_t steps = 4, width = 2, h = 3, out = 2;
  LstmKernel<double> k(spec(KernelKind::lstm, steps, width, 1, out, h), rng);
  const auto x = random_tensor({1, steps, width}, rng);
  const auto& c = k.cell();
  auto gate = [&](const T& w, const T& b, const std::vector<double>& z, std::size_t j) {
    double acc = b[j];
    for (std::size_t i = 0; i < h + width; ++i) acc += z[i] * w[i * h + j];
    return acc;
  };
  std::vector<double> hs(h, 0.0), cs(h, 0.0), all;
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<double> z(hs);
    for (std::size_t i = 0; i < width; ++i) z.push_back(x[t * width + i]);
    for (std::size_t j = 0; j < h; ++j) {
      const double f = sigmoid_scalar(gate(c.w_forget, c.b_forget, z, j));
      const double in = sigmoid_scalar(gate(c.w_input, c.b_input, z, j));
      const double cand = std::tanh(gate(c.w_cell, c.b_cell, z, j));
      const double o = sigmoid_scalar(gate(c.w_output, c.b_output, z, j));
      cs[j] = f * cs[j] + in * cand;
      hs[j] = o * std::tanh(cs[j]);
    }
    all.insert(all.end(), hs.begin(), hs.end());
  }
  const auto w = param(k, "out.w");
  const auto b = param(k, "out.b");
  const auto y = k.forward(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, out}));
  for (std::size_t j = 0; j < out; ++j) {
    double acc = b[j];
    for (std::size_t i = 0; i < all.size(); ++i) acc += all[i] * w[i * out + j];
    EXPECT_NEAR(y[j], acc, 1e-12);
  }
}

TEST(LstmKernel, SingleStepIsOneCellPlusAffine) {
  Rng rng(10);
  LstmKernel<double> k(spec(KernelKind::lstm, 1, 3, 1, 2, 4), rng);
  const auto x = random_tensor({2, 1, 3}, rng);
  const auto s = lstm_step(reshape(x, {2, 3}), T::zeros({2, 4}), T::zeros({2, 4}), k.cell());
  const auto ref = affine(s.h, param(k, "out.w"), param(k, "out.b"));
  const auto y = k.forward(x);
  for (std::size_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-15);
  EXPECT_THROW(validate(spec(KernelKind::lstm, 3, 1, 2, 1, 4)), ConfigError);
}

TEST(Kernels, EveryKindPassesGradCheckOverTenSeeds) {
  const std::vector<KernelSpec> specs{
      spec(KernelKind::linear, 3, 2, 1, 4),      spec(KernelKind::mlp, 3, 2, 1, 4, 5),
      spec(KernelKind::transformer, 2, 1, 1, 4, 4, 2), spec(KernelKind::transformer, 1, 4, 3, 1, 4, 2),
      spec(KernelKind::lstm, 3, 2, 1, 4, 3),     spec(KernelKind::lstm, 1, 4, 3, 2, 3)};
  for (const auto& s : specs) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      const auto k = make_kernel<double>(s, rng);
      const auto x = random_tensor({2, s.len_in, s.width_in}, rng);
      const auto target = random_tensor({2, s.len_out, s.width_out}, rng);
      std::vector<T> inputs{x};
      for (const auto& p : k->parameters()) inputs.push_back(p.tensor);
      const auto r = grad_check([&] { return mse_loss(k->forward(x), target); }, inputs);
      EXPECT_LE(r.max_relative_error, 1e-4) << to_string(s.kind) << " seed " << seed;
    }
  }
}

TEST(Kernels, ParameterCountMatchesRegisteredTensors) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    const auto kind = static_cast<KernelKind>(seed % 4);
    const std::size_t heads = 1 + rng.index(2);
    const std::size_t hidden = heads * (1 + rng.index(3));
    const bool expand = rng.index(2) == 1;
    const std::size_t len = 1 + rng.index(4);
    const KernelSpec s = expand ? spec(kind, 1, 1 + rng.index(3), len, 1 + rng.index(3), hidden, heads, 1 + rng.index(2))
                                : spec(kind, len, 1 + rng.index(3), 1, 1 + rng.index(3), hidden, heads, 1 + rng.index(2));
    const auto k = make_kernel<double>(s, rng);
    std::size_t n = 0;
    for (const auto& p : k->parameters()) n += p.tensor.numel();
    EXPECT_EQ(n, parameter_count(s)) << to_string(kind);
  }
  // Hand counts.
  EXPECT_EQ(parameter_count(spec(KernelKind::linear, 2, 3, 1, 4)), 6u * 4 + 4);
  EXPECT_EQ(parameter_count(spec(KernelKind::mlp, 2, 3, 1, 4, 5)), 6u * 5 + 5 + 5 * 4 + 4);
  EXPECT_EQ(parameter_count(spec(KernelKind::lstm, 3, 2, 1, 4, 5)), 4u * ((5 + 2) * 5 + 5) + 15 * 4 + 4);
}

TEST(Kernels, ForwardIsDeterministic) {
  Rng rng(12);
  const auto k = make_kernel<double>(spec(KernelKind::transformer, 3, 2, 1, 4, 4), rng);
  const auto x = random_tensor({2, 3, 2}, rng);
  EXPECT_EQ(k->forward(x).to_vector(), k->forward(x).to_vector());
}
