// SPDX-License-Identifier: Apache-2.0
//
// Per-window, per-channel normalization of (B, L, M) windows and its inverse,
// plus random-erase augmentation.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kunet/errors.hpp"
#include "kunet/random.hpp"
#include "kunet/tensor.hpp"

namespace kunet {

enum class NormMode { none, mean, last, instance };

inline std::string_view to_string(NormMode m) {
  switch (m) {
    case NormMode::none: return "none";
    case NormMode::mean: return "mean";
    case NormMode::last: return "last";
    case NormMode::instance: return "instance";
  }
  return "?";
}

inline NormMode parse_norm_mode(std::string_view s) {
  for (auto m : {NormMode::none, NormMode::mean, NormMode::last, NormMode::instance})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown normalization '" + std::string(s) + "' (expected none, mean, last or instance)");
}

/// Statistics of each (window, channel) pair: value -> (value - shift) / scale.
struct NormState {
  NormMode mode = NormMode::none;
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::vector<double> shift;  // batch * channels
  std::vector<double> scale;  // batch * channels; 1 except in instance mode
  double eps = 1e-5;
};

namespace detail {
template <typename T>
void check_window(const Tensor<T>& w, const char* op) {
  if (w.rank() != 3 || w.numel() == 0) {
    throw DimensionError(std::string(op) + ": expected non-empty (B, L, M) window, got " + shape_str(w.shape()));
  }
}
}  // namespace detail

/// Computes the statistics from `window` alone.
template <typename T>
NormState fit_norm(const Tensor<T>& window, NormMode mode, double eps = 1e-5) {
  detail::check_window(window, "normalize");
  const std::size_t b = window.dim(0), l = window.dim(1), m = window.dim(2);
  NormState st{mode, b, m, std::vector<double>(b * m, 0.0), std::vector<double>(b * m, 1.0), eps};
  const auto d = window.data();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t c = 0; c < m; ++c) {
      auto at = [&](std::size_t t) { return static_cast<double>(d[(i * l + t) * m + c]); };
      const std::size_t k = i * m + c;
      switch (mode) {
        case NormMode::none: break;
        case NormMode::last: st.shift[k] = at(l - 1); break;
        case NormMode::mean:
        case NormMode::instance: {
          double s = 0.0;
          for (std::size_t t = 0; t < l; ++t) s += at(t);
          const double mu = s / static_cast<double>(l);
          st.shift[k] = mu;
          if (mode == NormMode::instance) {
            double v = 0.0;
            for (std::size_t t = 0; t < l; ++t) v += (at(t) - mu) * (at(t) - mu);
            st.scale[k] = std::sqrt(v / static_cast<double>(l) + eps);
          }
          break;
        }
      }
    }
  }
  return st;
}

/// Applies saved statistics to any (B, *, M) tensor, e.g. targets for the loss.
template <typename T>
Tensor<T> normalize_with(const Tensor<T>& x, const NormState& st) {
  detail::check_window(x, "normalize_with");
  if (x.dim(0) != st.batch || x.dim(2) != st.channels) {
    throw DimensionError("normalize_with: state is for (" + std::to_string(st.batch) + ", *, " +
                         std::to_string(st.channels) + "), got " + shape_str(x.shape()));
  }
  const std::size_t b = x.dim(0), l = x.dim(1), m = x.dim(2);
  std::vector<T> out(x.numel());
  const auto d = x.data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t c = 0; c < m; ++c) {
        const std::size_t at = (i * l + t) * m + c, k = i * m + c;
        out[at] = static_cast<T>((static_cast<double>(d[at]) - st.shift[k]) / st.scale[k]);
      }
  return Tensor<T>(x.shape(), std::move(out));
}

/// Normalizes `window` and returns the state needed to invert predictions.
template <typename T>
std::pair<Tensor<T>, NormState> normalize_apply(const Tensor<T>& window, NormMode mode, double eps = 1e-5) {
  NormState st = fit_norm(window, mode, eps);
  return {normalize_with(window, st), std::move(st)};
}

/// Inverse transform for a (B, T, M) prediction; T may differ from L.
template <typename T>
Tensor<T> normalize_invert(const Tensor<T>& pred, const NormState& st) {
  detail::check_window(pred, "normalize_invert");
  if (pred.dim(0) != st.batch || pred.dim(2) != st.channels) {
    throw DimensionError("normalize_invert: state is for (" + std::to_string(st.batch) + ", *, " +
                         std::to_string(st.channels) + "), got " + shape_str(pred.shape()));
  }
  const std::size_t b = pred.dim(0), l = pred.dim(1), m = pred.dim(2);
  std::vector<T> out(pred.numel());
  const auto d = pred.data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t c = 0; c < m; ++c) {
        const std::size_t at = (i * l + t) * m + c, k = i * m + c;
        out[at] = static_cast<T>(static_cast<double>(d[at]) * st.scale[k] + st.shift[k]);
      }
  return Tensor<T>(pred.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Random erase

struct EraseConfig {
  double p = 0.5;
  double min_ratio = 0.02;
  double max_ratio = 0.2;
};

inline void validate(const EraseConfig& c) {
  if (!(c.p >= 0.0 && c.p <= 1.0)) throw ConfigError("random erase: p must lie in [0, 1]");
  if (!(c.min_ratio > 0.0 && c.min_ratio <= c.max_ratio && c.max_ratio <= 1.0)) {
    throw ConfigError("random erase: span ratio range must satisfy 0 < min <= max <= 1");
  }
}

/// Erased rows [begin, begin + length) of one (window, channel) series.
struct EraseSpan {
  std::size_t window = 0;
  std::size_t channel = 0;
  std::size_t begin = 0;
  std::size_t length = 0;
};

/// Draws at most one span per (window, channel) of a (B, L, M) tensor.
inline std::vector<EraseSpan> sample_erase_spans(const Shape& shape, const EraseConfig& cfg, Rng& rng) {
  validate(cfg);
  if (shape.size() != 3) throw DimensionError("random erase: expected (B, L, M), got " + shape_str(shape));
  const std::size_t b = shape[0], l = shape[1], m = shape[2];
  std::vector<EraseSpan> spans;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t c = 0; c < m; ++c) {
      if (!(rng.uniform() < cfg.p)) continue;
      const double ratio = rng.uniform(cfg.min_ratio, cfg.max_ratio);
      std::size_t len = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(l)));
      len = std::min(std::max<std::size_t>(len, 1), l);
      const std::size_t begin = static_cast<std::size_t>(rng.index(l - len + 1));
      spans.push_back({i, c, begin, len});
    }
  }
  return spans;
}

template <typename T>
Tensor<T> apply_erase(const Tensor<T>& window, const std::vector<EraseSpan>& spans) {
  const std::size_t l = window.dim(1), m = window.dim(2);
  std::vector<T> out = window.to_vector();
  for (const auto& s : spans)
    for (std::size_t t = s.begin; t < s.begin + s.length; ++t) out[(s.window * l + t) * m + s.channel] = T(0);
  return Tensor<T>(window.shape(), std::move(out));
}

template <typename T>
Tensor<T> random_erase(const Tensor<T>& window, const EraseConfig& cfg, Rng& rng) {
  return apply_erase(window, sample_erase_spans(window.shape(), cfg, rng));
}

/// Deterministic for a fixed seed.
template <typename T>
Tensor<T> random_erase(const Tensor<T>& window, const EraseConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return random_erase(window, cfg, rng);
}

}  // namespace kunet
