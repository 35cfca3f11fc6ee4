// SPDX-License-Identifier: Apache-2.0
//
// Kernels map a batch of (len_in, width_in) segments to (len_out, width_out)
// outputs. In the encoder a kernel shortens a segment to length 1; in the
// decoder it grows a length-1 segment back out.
#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kunet/errors.hpp"
#include "kunet/random.hpp"
#include "kunet/tensor.hpp"

namespace kunet {

enum class KernelKind { linear, mlp, transformer, lstm };

inline std::string_view to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::linear: return "linear";
    case KernelKind::mlp: return "mlp";
    case KernelKind::transformer: return "transformer";
    case KernelKind::lstm: return "lstm";
  }
  return "?";
}

inline KernelKind parse_kernel_kind(std::string_view s) {
  if (s == "linear") return KernelKind::linear;
  if (s == "mlp") return KernelKind::mlp;
  if (s == "transformer") return KernelKind::transformer;
  if (s == "lstm") return KernelKind::lstm;
  throw ConfigError("unknown kernel kind '" + std::string(s) + "'");
}

struct KernelSpec {
  KernelKind kind = KernelKind::linear;
  std::size_t len_in = 1;
  std::size_t width_in = 1;
  std::size_t len_out = 1;
  std::size_t width_out = 1;
  std::size_t hidden = 0;  // mlp hidden width, transformer model width, lstm state size
  std::size_t heads = 1;   // transformer only
  std::size_t blocks = 1;  // transformer only

  std::size_t in_size() const { return len_in * width_in; }
  std::size_t out_size() const { return len_out * width_out; }

  /// A length-1 input grown to several tokens (decoder side).
  bool expands() const { return len_in == 1 && len_out > 1; }
  /// Tokens a sequence kernel iterates over.
  std::size_t tokens() const { return expands() ? len_out : len_in; }
};

inline void validate(const KernelSpec& s) {
  if (s.len_in == 0 || s.width_in == 0 || s.len_out == 0 || s.width_out == 0) {
    throw ConfigError(std::string(to_string(s.kind)) + " kernel: all extents must be >= 1");
  }
  if (s.kind != KernelKind::linear && s.hidden == 0) {
    throw ConfigError(std::string(to_string(s.kind)) + " kernel: hidden width must be >= 1");
  }
  if (s.kind == KernelKind::transformer || s.kind == KernelKind::lstm) {
    if (s.len_in > 1 && s.len_out > 1) {
      throw ConfigError(std::string(to_string(s.kind)) + " kernel: maps length " + std::to_string(s.len_in) +
                        " to " + std::to_string(s.len_out) + "; one side must be 1");
    }
  }
  if (s.kind == KernelKind::transformer) {
    if (s.heads == 0 || s.hidden % s.heads != 0) {
      throw ConfigError("transformer kernel: model width " + std::to_string(s.hidden) +
                        " is not divisible by " + std::to_string(s.heads) + " heads");
    }
    if (s.blocks == 0) throw ConfigError("transformer kernel: blocks must be >= 1");
  }
}

/// Closed-form parameter count; must agree with the tensors a kernel registers.
inline std::size_t parameter_count(const KernelSpec& s) {
  const std::size_t in = s.in_size(), out = s.out_size(), h = s.hidden;
  switch (s.kind) {
    case KernelKind::linear:
      return in * out + out;
    case KernelKind::mlp:
      return in * h + h + h * out + out;
    case KernelKind::transformer: {
      const std::size_t embed = s.expands() ? s.width_in * s.len_out * h + s.len_out * h : s.width_in * h + h;
      const std::size_t block = 3 * h * h + h * h + h * h + h;  // Q,K,V over all heads, W^O, feed-forward
      return embed + s.blocks * block + s.tokens() * h * out + out;
    }
    case KernelKind::lstm: {
      const std::size_t expand = s.expands() ? s.width_in * s.len_out * s.width_in + s.len_out * s.width_in : 0;
      return expand + 4 * ((h + s.width_in) * h + h) + s.tokens() * h * out + out;
    }
  }
  return 0;
}

/// Multiply-accumulates spent forming Q K^T per segment in one forward pass.
inline std::size_t attention_macs_per_segment(const KernelSpec& s) {
  if (s.kind != KernelKind::transformer) return 0;
  return s.blocks * s.tokens() * s.tokens() * s.hidden;
}

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) parameter tensor.
template <typename T>
Tensor<T> init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

// ---------------------------------------------------------------------------
// Building blocks

/// Row t, column i: sin(w_i t) for even i, cos(w_i t) for odd i, with
/// w_i = 10000^(-2 floor(i/2) / d).
template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t d) {
  if (d == 0) throw ConfigError("positional_encoding: width must be >= 1");
  std::vector<T> v(length * d);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < d; ++i) {
      const double w = std::pow(10000.0, -2.0 * static_cast<double>(i / 2) / static_cast<double>(d));
      const double a = w * static_cast<double>(t);
      v[t * d + i] = static_cast<T>(i % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  }
  return Tensor<T>({length, d}, std::move(v));
}

/// Softmax(Q K^T / sqrt(D_k)) V over the last two axes; leading axes are batch.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() < 2 || k.rank() < 2 || v.rank() < 2) throw DimensionError("attention: operands need rank >= 2");
  if (q.dim(-1) != k.dim(-1)) {
    throw DimensionError("attention: key width mismatch " + shape_str(q.shape()) + " vs " + shape_str(k.shape()));
  }
  if (k.dim(-2) != v.dim(-2)) {
    throw DimensionError("attention: keys " + shape_str(k.shape()) + " and values " + shape_str(v.shape()) +
                         " differ in length");
  }
  const T s = T(1) / std::sqrt(static_cast<T>(q.dim(-1)));
  return matmul(softmax(scale(matmul(q, transpose(k)), s), -1), v);
}

template <typename T>
struct AttentionHead {
  Tensor<T> query;  // (d, d / H)
  Tensor<T> key;
  Tensor<T> value;
};

/// Concat(h_1..h_H) W^O with h_i = Attention(x W_i^Q, x W_i^K, x W_i^V).
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const std::vector<AttentionHead<T>>& heads,
                               const Tensor<T>& output) {
  if (heads.empty()) throw ConfigError("multi_head_attention: no heads");
  if (x.dim(-1) % heads.size() != 0) {
    throw ConfigError("multi_head_attention: width " + std::to_string(x.dim(-1)) + " not divisible by " +
                      std::to_string(heads.size()) + " heads");
  }
  std::vector<Tensor<T>> outs;
  outs.reserve(heads.size());
  for (const auto& h : heads) outs.push_back(attention(matmul(x, h.query), matmul(x, h.key), matmul(x, h.value)));
  return matmul(heads.size() == 1 ? outs.front() : concat(outs, -1), output);
}

template <typename T>
struct LstmCellParams {
  Tensor<T> w_forget, w_input, w_cell, w_output;  // (hidden + width, hidden), acting on [h, x]
  Tensor<T> b_forget, b_input, b_cell, b_output;  // (hidden)
};

template <typename T>
struct LstmState {
  Tensor<T> h;
  Tensor<T> c;
};

/// One LSTM step on (batch, width) input with (batch, hidden) state.
template <typename T>
LstmState<T> lstm_step(const Tensor<T>& x, const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                       const LstmCellParams<T>& p) {
  if (x.rank() != 2 || h_prev.rank() != 2 || x.dim(0) != h_prev.dim(0) ||
      h_prev.dim(1) + x.dim(1) != p.w_forget.dim(0)) {
    throw DimensionError("lstm_step: input " + shape_str(x.shape()) + " and state " + shape_str(h_prev.shape()) +
                         " do not fit weights " + shape_str(p.w_forget.shape()));
  }
  const auto hx = concat<T>({h_prev, x}, 1);
  const auto f = sigmoid(affine(hx, p.w_forget, p.b_forget));
  const auto i = sigmoid(affine(hx, p.w_input, p.b_input));
  const auto candidate = tanh(affine(hx, p.w_cell, p.b_cell));
  const auto c = add(mul(f, c_prev), mul(i, candidate));
  const auto o = sigmoid(affine(hx, p.w_output, p.b_output));
  return {mul(o, tanh(c)), c};
}

// ---------------------------------------------------------------------------
// Kernels

template <typename T>
class Kernel {
 public:
  explicit Kernel(KernelSpec spec) : spec_(spec) { validate(spec_); }
  virtual ~Kernel() = default;
  Kernel(const Kernel&) = delete;
  Kernel& operator=(const Kernel&) = delete;

  /// (batch, len_in, width_in) -> (batch, len_out, width_out)
  virtual Tensor<T> forward(const Tensor<T>& x) const = 0;
  virtual std::vector<NamedTensor<T>> parameters() const = 0;

  const KernelSpec& spec() const { return spec_; }

 protected:
  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 3 || x.dim(1) != spec_.len_in || x.dim(2) != spec_.width_in) {
      throw DimensionError(std::string(to_string(spec_.kind)) + " kernel expects (batch, " +
                           std::to_string(spec_.len_in) + ", " + std::to_string(spec_.width_in) + "), got " +
                           shape_str(x.shape()));
    }
  }
  Tensor<T> flatten(const Tensor<T>& x) const { return reshape(x, {x.dim(0), spec_.in_size()}); }
  Tensor<T> unflatten(const Tensor<T>& y) const { return reshape(y, {y.dim(0), spec_.len_out, spec_.width_out}); }

 private:
  KernelSpec spec_;
};

/// Z = X w + b on the flattened segment.
template <typename T>
class LinearKernel final : public Kernel<T> {
 public:
  LinearKernel(KernelSpec spec, Rng& rng) : Kernel<T>(spec) {
    w_ = init_uniform<T>({spec.in_size(), spec.out_size()}, spec.in_size(), rng);
    b_ = init_uniform<T>({spec.out_size()}, spec.in_size(), rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const override {
    this->check_input(x);
    return this->unflatten(affine(this->flatten(x), w_, b_));
  }

  std::vector<NamedTensor<T>> parameters() const override { return {{"w", w_}, {"b", b_}}; }

 private:
  Tensor<T> w_, b_;
};

/// affine -> tanh -> affine on the flattened segment.
template <typename T>
class MlpKernel final : public Kernel<T> {
 public:
  MlpKernel(KernelSpec spec, Rng& rng) : Kernel<T>(spec) {
    w1_ = init_uniform<T>({spec.in_size(), spec.hidden}, spec.in_size(), rng);
    b1_ = init_uniform<T>({spec.hidden}, spec.in_size(), rng);
    w2_ = init_uniform<T>({spec.hidden, spec.out_size()}, spec.hidden, rng);
    b2_ = init_uniform<T>({spec.out_size()}, spec.hidden, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const override {
    this->check_input(x);
    const auto h = tanh(affine(this->flatten(x), w1_, b1_));
    return this->unflatten(affine(h, w2_, b2_));
  }

  std::vector<NamedTensor<T>> parameters() const override {
    return {{"w1", w1_}, {"b1", b1_}, {"w2", w2_}, {"b2", b2_}};
  }

 private:
  Tensor<T> w1_, b1_, w2_, b2_;
};

// Embed tokens (or expand a single token), add positional encoding, run
// `blocks` x [h += MHA(h); h += tanh(h W + b)], flatten, project.
template <typename T>
class TransformerKernel final : public Kernel<T> {
 public:
  TransformerKernel(KernelSpec spec, Rng& rng) : Kernel<T>(spec), pe_(positional_encoding<T>(spec.tokens(), spec.hidden)) {
    const std::size_t d = spec.hidden, dh = d / spec.heads;
    if (spec.expands()) {
      embed_w_ = init_uniform<T>({spec.width_in, spec.len_out * d}, spec.width_in, rng);
      embed_b_ = init_uniform<T>({spec.len_out * d}, spec.width_in, rng);
    } else {
      embed_w_ = init_uniform<T>({spec.width_in, d}, spec.width_in, rng);
      embed_b_ = init_uniform<T>({d}, spec.width_in, rng);
    }
    for (std::size_t b = 0; b < spec.blocks; ++b) {
      Block block;
      for (std::size_t h = 0; h < spec.heads; ++h) {
        block.heads.push_back({init_uniform<T>({d, dh}, d, rng), init_uniform<T>({d, dh}, d, rng),
                               init_uniform<T>({d, dh}, d, rng)});
      }
      block.output = init_uniform<T>({d, d}, d, rng);
      block.ff_w = init_uniform<T>({d, d}, d, rng);
      block.ff_b = init_uniform<T>({d}, d, rng);
      blocks_.push_back(std::move(block));
    }
    out_w_ = init_uniform<T>({spec.tokens() * d, spec.out_size()}, spec.tokens() * d, rng);
    out_b_ = init_uniform<T>({spec.out_size()}, spec.tokens() * d, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const override {
    this->check_input(x);
    const auto& s = this->spec();
    const std::size_t batch = x.dim(0), d = s.hidden, tokens = s.tokens();
    Tensor<T> h = s.expands() ? reshape(affine(reshape(x, {batch, s.width_in}), embed_w_, embed_b_), {batch, tokens, d})
                              : affine(x, embed_w_, embed_b_);
    h = add_broadcast(h, pe_);
    for (const auto& block : blocks_) {
      h = add(h, multi_head_attention(h, block.heads, block.output));
      h = add(h, tanh(affine(h, block.ff_w, block.ff_b)));
    }
    return this->unflatten(affine(reshape(h, {batch, tokens * d}), out_w_, out_b_));
  }

  std::vector<NamedTensor<T>> parameters() const override {
    std::vector<NamedTensor<T>> out{{"embed.w", embed_w_}, {"embed.b", embed_b_}};
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      for (std::size_t h = 0; h < blocks_[b].heads.size(); ++h) {
        const std::string q = p + "head" + std::to_string(h) + ".";
        out.push_back({q + "W_Q", blocks_[b].heads[h].query});
        out.push_back({q + "W_K", blocks_[b].heads[h].key});
        out.push_back({q + "W_V", blocks_[b].heads[h].value});
      }
      out.push_back({p + "W_O", blocks_[b].output});
      out.push_back({p + "ff.w", blocks_[b].ff_w});
      out.push_back({p + "ff.b", blocks_[b].ff_b});
    }
    out.push_back({"out.w", out_w_});
    out.push_back({"out.b", out_b_});
    return out;
  }

 private:
  struct Block {
    std::vector<AttentionHead<T>> heads;
    Tensor<T> output, ff_w, ff_b;
  };
  Tensor<T> pe_;
  Tensor<T> embed_w_, embed_b_;
  std::vector<Block> blocks_;
  Tensor<T> out_w_, out_b_;
};

// Unrolls an LSTM cell over the segment from zero state, concatenates every
// hidden state and projects them affinely to the output. A length-1 input is
// first expanded affinely to len_out steps.
template <typename T>
class LstmKernel final : public Kernel<T> {
 public:
  LstmKernel(KernelSpec spec, Rng& rng) : Kernel<T>(spec) {
    const std::size_t h = spec.hidden, z = spec.hidden + spec.width_in;
    if (spec.expands()) {
      expand_w_ = init_uniform<T>({spec.width_in, spec.len_out * spec.width_in}, spec.width_in, rng);
      expand_b_ = init_uniform<T>({spec.len_out * spec.width_in}, spec.width_in, rng);
    }
    cell_.w_forget = init_uniform<T>({z, h}, z, rng);
    cell_.w_input = init_uniform<T>({z, h}, z, rng);
    cell_.w_cell = init_uniform<T>({z, h}, z, rng);
    cell_.w_output = init_uniform<T>({z, h}, z, rng);
    cell_.b_forget = init_uniform<T>({h}, z, rng);
    cell_.b_input = init_uniform<T>({h}, z, rng);
    cell_.b_cell = init_uniform<T>({h}, z, rng);
    cell_.b_output = init_uniform<T>({h}, z, rng);
    out_w_ = init_uniform<T>({spec.tokens() * h, spec.out_size()}, spec.tokens() * h, rng);
    out_b_ = init_uniform<T>({spec.out_size()}, spec.tokens() * h, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const override {
    this->check_input(x);
    const auto& s = this->spec();
    const std::size_t batch = x.dim(0), steps = s.tokens();
    const Tensor<T> seq = s.expands() ? reshape(affine(reshape(x, {batch, s.width_in}), expand_w_, expand_b_),
                                                {batch, steps, s.width_in})
                                      : x;
    LstmState<T> state{Tensor<T>::zeros({batch, s.hidden}), Tensor<T>::zeros({batch, s.hidden})};
    std::vector<Tensor<T>> hidden;
    hidden.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      const auto xt = reshape(slice(seq, 1, t, 1), {batch, s.width_in});
      state = lstm_step(xt, state.h, state.c, cell_);
      hidden.push_back(state.h);
    }
    const auto all = steps == 1 ? hidden.front() : concat(hidden, 1);
    return this->unflatten(affine(all, out_w_, out_b_));
  }

  std::vector<NamedTensor<T>> parameters() const override {
    std::vector<NamedTensor<T>> out;
    if (this->spec().expands()) {
      out.push_back({"expand.w", expand_w_});
      out.push_back({"expand.b", expand_b_});
    }
    out.insert(out.end(), {{"W_f", cell_.w_forget}, {"W_i", cell_.w_input}, {"W_C", cell_.w_cell},
                           {"W_o", cell_.w_output}, {"b_f", cell_.b_forget}, {"b_i", cell_.b_input},
                           {"b_C", cell_.b_cell}, {"b_o", cell_.b_output}, {"out.w", out_w_}, {"out.b", out_b_}});
    return out;
  }

  const LstmCellParams<T>& cell() const { return cell_; }

 private:
  Tensor<T> expand_w_, expand_b_;
  LstmCellParams<T> cell_;
  Tensor<T> out_w_, out_b_;
};

template <typename T>
std::unique_ptr<Kernel<T>> make_kernel(const KernelSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case KernelKind::linear: return std::make_unique<LinearKernel<T>>(spec, rng);
    case KernelKind::mlp: return std::make_unique<MlpKernel<T>>(spec, rng);
    case KernelKind::transformer: return std::make_unique<TransformerKernel<T>>(spec, rng);
    case KernelKind::lstm: return std::make_unique<LstmKernel<T>>(spec, rng);
  }
  throw ConfigError("unknown kernel kind");
}

}  // namespace kunet
