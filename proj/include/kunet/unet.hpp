// SPDX-License-Identifier: Apache-2.0
//
// Encoder/decoder assembly. Encoder level i applies one kernel to every
// segment of length len_i; the decoder mirrors the schedule in reverse. The
// output of encoder level i (look-back levels only) is added to the reshaped
// input of the mirrored decoder level.
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kunet/errors.hpp"
#include "kunet/kernels.hpp"
#include "kunet/partition.hpp"
#include "kunet/random.hpp"
#include "kunet/tensor.hpp"

namespace kunet {

enum class Variant { linear, linear_1_hidden, linear_5_hidden, transformer, lstm };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::linear: return "linear";
    case Variant::linear_1_hidden: return "linear-1-hidden";
    case Variant::linear_5_hidden: return "linear-5-hidden";
    case Variant::transformer: return "transformer";
    case Variant::lstm: return "lstm";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (auto v : {Variant::linear, Variant::linear_1_hidden, Variant::linear_5_hidden, Variant::transformer,
                 Variant::lstm}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown variant '" + std::string(s) +
                    "' (expected linear, linear-1-hidden, linear-5-hidden, transformer or lstm)");
}

/// Forces the kernel kind of one encoder level and its decoder mirror.
struct KernelOverride {
  std::size_t level = 0;
  KernelKind kind = KernelKind::linear;
  bool operator==(const KernelOverride&) const = default;
};

struct ModelConfig {
  PartitionPlan plan;
  Variant variant = Variant::linear;
  std::vector<KernelOverride> overrides;
  std::size_t kernel_hidden = 0;  // mlp/lstm/transformer width; 0 means plan.hidden
  std::size_t heads = 0;          // 0 picks 2 when the width is even, else 1
  std::size_t blocks = 1;
  bool skips = true;

  std::size_t kernel_width() const { return kernel_hidden == 0 ? plan.hidden : kernel_hidden; }
  std::size_t head_count() const {
    if (heads != 0) return heads;
    return kernel_width() % 2 == 0 ? 2 : 1;
  }
};

/// Kernel kind for every encoder level (decoder level mirroring i uses the same).
/// The "-hidden", transformer and lstm variants replace the two levels next to
/// the latent vector, except linear-5-hidden which replaces all of them.
inline std::vector<KernelKind> level_kinds(const ModelConfig& cfg) {
  const std::size_t k = cfg.plan.levels();
  std::vector<KernelKind> kinds(k, KernelKind::linear);
  auto innermost = [&](KernelKind kind) {
    for (std::size_t i = k >= 2 ? k - 2 : 0; i < k; ++i) kinds[i] = kind;
  };
  switch (cfg.variant) {
    case Variant::linear: break;
    case Variant::linear_1_hidden: innermost(KernelKind::mlp); break;
    case Variant::linear_5_hidden: kinds.assign(k, KernelKind::mlp); break;
    case Variant::transformer: innermost(KernelKind::transformer); break;
    case Variant::lstm: innermost(KernelKind::lstm); break;
  }
  for (const auto& o : cfg.overrides) {
    if (o.level >= k) {
      throw ConfigError("kernel override targets level " + std::to_string(o.level) + " but the model has " +
                        std::to_string(k) + " levels");
    }
    kinds[o.level] = o.kind;
  }
  return kinds;
}

namespace detail {
inline KernelSpec with_kind(const ModelConfig& cfg, KernelKind kind, std::size_t li, std::size_t wi, std::size_t lo,
                            std::size_t wo) {
  KernelSpec s;
  s.kind = kind;
  s.len_in = li;
  s.width_in = wi;
  s.len_out = lo;
  s.width_out = wo;
  s.hidden = kind == KernelKind::linear ? 0 : cfg.kernel_width();
  s.heads = kind == KernelKind::transformer ? cfg.head_count() : 1;
  s.blocks = kind == KernelKind::transformer ? cfg.blocks : 1;
  return s;
}
}  // namespace detail

/// Encoder level i: (len_i, width_in) -> (1, M_hidden); the last level emits
/// (L_h, M_h). Level 0 sees the raw M_1 features.
inline std::vector<KernelSpec> encoder_specs(const ModelConfig& cfg) {
  const auto& p = cfg.plan;
  const auto lengths = encoder_lengths(p);
  const auto kinds = level_kinds(cfg);
  std::vector<KernelSpec> out;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const bool last = i + 1 == lengths.size();
    out.push_back(detail::with_kind(cfg, kinds[i], lengths[i], i == 0 ? p.feature.unit : p.hidden,
                                    last ? p.latent_len : 1, last ? p.latent_width_or_hidden() : p.hidden));
  }
  return out;
}

/// Decoder layers in execution order; layer j mirrors encoder level K-1-j.
inline std::vector<KernelSpec> decoder_specs(const ModelConfig& cfg) {
  const auto& p = cfg.plan;
  const auto lengths = decoder_lengths(p);
  const auto kinds = level_kinds(cfg);
  const std::size_t k = lengths.size();
  std::vector<KernelSpec> out;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t level = k - 1 - j;
    out.push_back(detail::with_kind(cfg, kinds[level], j == 0 ? p.latent_len : 1,
                                    j == 0 ? p.latent_width_or_hidden() : p.hidden, lengths[level],
                                    level == 0 ? p.feature.unit : p.hidden));
  }
  return out;
}

/// Skip route from encoder level `level` to decoder layer K-1-level. When the
/// output schedule differs from the look-back one, the number of segments
/// per group differs (`from` vs `to`) and an affine adapter maps between them.
struct SkipRoute {
  std::size_t level = 0;
  std::size_t decoder_layer = 0;
  std::size_t from = 1;  // prod_{j > level} L_j over look-back levels
  std::size_t to = 1;    // same product over the output schedule
  bool needs_adapter() const { return from != to; }
  std::size_t adapter_parameters() const { return needs_adapter() ? from * to + to : 0; }
};

inline std::vector<SkipRoute> skip_routes(const ModelConfig& cfg) {
  std::vector<SkipRoute> out;
  if (!cfg.skips) return out;
  const auto& p = cfg.plan;
  const auto in = p.lookback.lengths();
  const auto outl = p.output().lengths();
  const std::size_t k = p.levels(), n = p.lookback_levels();
  for (std::size_t i = 0; i < n; ++i) {
    SkipRoute r;
    r.level = i;
    r.decoder_layer = k - 1 - i;
    for (std::size_t j = i + 1; j < n; ++j) {
      r.from *= in[j];
      r.to *= outl[j];
    }
    out.push_back(r);
  }
  return out;
}

inline void validate(const ModelConfig& cfg) {
  validate(cfg.plan);
  if (cfg.blocks == 0) throw ConfigError("blocks must be >= 1");
  for (const auto& s : encoder_specs(cfg)) validate(s);
  for (const auto& s : decoder_specs(cfg)) validate(s);
}

struct LayerParameterCount {
  std::string name;
  KernelKind kind = KernelKind::linear;
  std::size_t count = 0;
};

struct ParameterCount {
  std::size_t total = 0;
  std::vector<LayerParameterCount> layers;
};

/// Closed-form count from the kernel formulas; independent of any instance.
inline ParameterCount count_parameters(const ModelConfig& cfg) {
  validate(cfg);
  ParameterCount pc;
  const auto enc = encoder_specs(cfg);
  const auto dec = decoder_specs(cfg);
  for (std::size_t i = 0; i < enc.size(); ++i)
    pc.layers.push_back({"encoder." + std::to_string(i), enc[i].kind, parameter_count(enc[i])});
  for (std::size_t j = 0; j < dec.size(); ++j)
    pc.layers.push_back({"decoder." + std::to_string(j), dec[j].kind, parameter_count(dec[j])});
  for (const auto& r : skip_routes(cfg)) {
    if (r.needs_adapter())
      pc.layers.push_back({"decoder." + std::to_string(r.decoder_layer) + ".skip_adapter", KernelKind::linear,
                           r.adapter_parameters()});
  }
  for (const auto& l : pc.layers) pc.total += l.count;
  return pc;
}

/// Q K^T multiply-accumulates for one forward pass over `batch` windows:
/// sum over transformer layers of segments * blocks * tokens^2 * d.
inline std::uint64_t attention_cost(const ModelConfig& cfg, std::size_t batch) {
  validate(cfg);
  const auto enc = encoder_specs(cfg);
  const auto dec = decoder_specs(cfg);
  const auto enc_len = encoder_lengths(cfg.plan);
  const auto dec_len = decoder_lengths(cfg.plan);
  const std::size_t k = enc.size();
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    total += static_cast<std::uint64_t>(segment_count(enc_len, i, batch)) * attention_macs_per_segment(enc[i]);
    const std::size_t level = k - 1 - i;  // decoder layer i mirrors this level
    total += static_cast<std::uint64_t>(segment_count(dec_len, level, batch)) * attention_macs_per_segment(dec[i]);
  }
  return total;
}

// ---------------------------------------------------------------------------

/// Linear map along the segment axis for skips whose segment counts differ:
/// (G * from, 1, H) -> (G * to, 1, H).
template <typename T>
class SkipAdapter {
 public:
  SkipAdapter(std::size_t from, std::size_t to, Rng& rng)
      : from_(from), to_(to), w_(init_uniform<T>({from, to}, from, rng)), b_(init_uniform<T>({to}, from, rng)) {}

  Tensor<T> forward(const Tensor<T>& skip) const {
    if (skip.rank() != 3 || skip.dim(1) != 1 || skip.dim(0) % from_ != 0) {
      throw DimensionError("skip adapter: cannot map " + shape_str(skip.shape()) + " from " + std::to_string(from_) +
                           " segments");
    }
    const std::size_t groups = skip.dim(0) / from_, width = skip.dim(2);
    auto t = transpose(reshape(skip, {groups, from_, width}));  // (G, H, from)
    t = transpose(affine(t, w_, b_));                          // (G, to, H)
    return reshape(t, {groups * to_, 1, width});
  }

  std::vector<NamedTensor<T>> parameters() const { return {{"w", w_}, {"b", b_}}; }

 private:
  std::size_t from_, to_;
  Tensor<T> w_, b_;
};

/// Reshapes its input to (-1, len_in, width_in), adds the pending skip input
/// if any, applies the kernel and records the output for skip routing.
template <typename T>
class KernelWrapper {
 public:
  explicit KernelWrapper(std::unique_ptr<Kernel<T>> kernel) : kernel_(std::move(kernel)) {}

  Tensor<T> forward(const Tensor<T>& input) {
    const auto& s = kernel_->spec();
    const std::size_t seg = s.len_in * s.width_in;
    if (input.numel() % seg != 0) {
      throw DimensionError("kernel wrapper: " + shape_str(input.shape()) + " cannot be cut into (" +
                           std::to_string(s.len_in) + ", " + std::to_string(s.width_in) + ") segments");
    }
    Tensor<T> x = reshape(input, {input.numel() / seg, s.len_in, s.width_in});
    if (skip_input_) {
      const Tensor<T> skip = adapter_ ? adapter_->forward(*skip_input_) : *skip_input_;
      if (skip.shape() != x.shape()) {
        throw DimensionError("kernel wrapper: skip input " + shape_str(skip.shape()) + " does not match input " +
                             shape_str(x.shape()));
      }
      x = add(x, skip);
    }
    Tensor<T> y = kernel_->forward(x);
    skip_output_ = y;
    return y;
  }

  void clear_skips() {
    skip_input_.reset();
    skip_output_.reset();
  }
  void set_skip_input(Tensor<T> t) { skip_input_ = std::move(t); }
  const std::optional<Tensor<T>>& skip_input() const { return skip_input_; }
  const std::optional<Tensor<T>>& skip_output() const { return skip_output_; }

  void set_adapter(std::unique_ptr<SkipAdapter<T>> adapter) { adapter_ = std::move(adapter); }
  const SkipAdapter<T>* adapter() const { return adapter_.get(); }

  const KernelSpec& spec() const { return kernel_->spec(); }
  const Kernel<T>& kernel() const { return *kernel_; }

 private:
  std::unique_ptr<Kernel<T>> kernel_;
  std::unique_ptr<SkipAdapter<T>> adapter_;
  std::optional<Tensor<T>> skip_input_;
  std::optional<Tensor<T>> skip_output_;
};

template <typename T>
class KUNet {
 public:
  /// Builds and initializes every kernel from `seed`. Parameters are drawn in
  /// order: encoder levels, decoder layers, skip adapters.
  KUNet(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    validate(config_);
    Rng rng(seed);
    for (const auto& s : encoder_specs(config_)) encoder_.emplace_back(make_kernel<T>(s, rng));
    for (const auto& s : decoder_specs(config_)) decoder_.emplace_back(make_kernel<T>(s, rng));
    for (const auto& r : skip_routes(config_)) {
      if (r.needs_adapter()) decoder_[r.decoder_layer].set_adapter(std::make_unique<SkipAdapter<T>>(r.from, r.to, rng));
    }
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      for (auto& p : encoder_[i].kernel().parameters())
        registry_.push_back({"encoder." + std::to_string(i) + "." + p.name, p.tensor});
    }
    for (std::size_t j = 0; j < decoder_.size(); ++j) {
      for (auto& p : decoder_[j].kernel().parameters())
        registry_.push_back({"decoder." + std::to_string(j) + "." + p.name, p.tensor});
    }
    for (std::size_t j = 0; j < decoder_.size(); ++j) {
      if (const auto* a = decoder_[j].adapter()) {
        for (auto& p : a->parameters())
          registry_.push_back({"decoder." + std::to_string(j) + ".skip_adapter." + p.name, p.tensor});
      }
    }
  }

  KUNet(const KUNet&) = delete;
  KUNet& operator=(const KUNet&) = delete;
  KUNet(KUNet&&) noexcept = default;
  KUNet& operator=(KUNet&&) noexcept = default;

  /// (B, L, M) -> (B, T, M); T = L unless the plan sets a horizon schedule.
  Tensor<T> forward(const Tensor<T>& x) {
    const auto& p = config_.plan;
    if (x.rank() != 3 || x.dim(1) != p.seq_len || x.dim(2) != p.features) {
      throw DimensionError("model expects (B, " + std::to_string(p.seq_len) + ", " + std::to_string(p.features) +
                           "), got " + shape_str(x.shape()));
    }
    for (auto& w : encoder_) w.clear_skips();
    for (auto& w : decoder_) w.clear_skips();

    const auto enc_len = encoder_lengths(p);
    Tensor<T> h = feature_transpose(x, p);
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      if (i > 0) h = merge_level(h, enc_len[i]);
      h = encoder_[i].forward(h);
    }
    for (const auto& r : skip_routes(config_)) decoder_[r.decoder_layer].set_skip_input(*encoder_[r.level].skip_output());

    for (std::size_t j = 0; j < decoder_.size(); ++j) {
      h = decoder_[j].forward(h);
      if (j + 1 < decoder_.size()) h = slice_level(h, h.dim(1));
    }
    return inverse_feature_transpose(h, p.output(), p.feature);
  }

  /// Forecast of the next T steps for a batch of look-back windows.
  Tensor<T> forecast(const Tensor<T>& window) { return forward(window); }

  const std::vector<NamedTensor<T>>& parameters() const { return registry_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : registry_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : registry_) p.tensor.zero_grad();
  }

  const ModelConfig& config() const { return config_; }
  const std::vector<KernelWrapper<T>>& encoder() const { return encoder_; }
  const std::vector<KernelWrapper<T>>& decoder() const { return decoder_; }

 private:
  ModelConfig config_;
  std::vector<KernelWrapper<T>> encoder_;
  std::vector<KernelWrapper<T>> decoder_;
  std::vector<NamedTensor<T>> registry_;
};

}  // namespace kunet
