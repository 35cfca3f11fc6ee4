// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical slicing of a (batch, length, features) window.
//
// A look-back window of length L is factored as L = L_1 * L_2 * ... * L_n and
// the feature axis as M = M_1 * M_2 * ... * M_m. After one feature transpose
// the window becomes a batch of (L_1, M_1) slices whose batch index is
// row-major over (B, M_m..M_2, L_n..L_2). Every later level is then a plain
// reshape: grouping k consecutive slices into one segment (merge_level) or
// splitting a segment back into k slices (slice_level).
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "kunet/errors.hpp"
#include "kunet/tensor.hpp"

namespace kunet {

/// A length factored as unit * multiples[0] * multiples[1] * ...
struct LengthSchedule {
  std::size_t unit = 1;
  std::vector<std::size_t> multiples;

  std::size_t length() const {
    std::size_t n = unit;
    for (auto m : multiples) n *= m;
    return n;
  }
  std::size_t levels() const { return 1 + multiples.size(); }
  /// Per-level segment lengths, outermost first: [unit, multiples...].
  std::vector<std::size_t> lengths() const {
    std::vector<std::size_t> out{unit};
    out.insert(out.end(), multiples.begin(), multiples.end());
    return out;
  }
  bool operator==(const LengthSchedule&) const = default;
};

inline std::string schedule_str(const LengthSchedule& s) {
  std::string out = std::to_string(s.unit);
  for (auto m : s.multiples) out += "*" + std::to_string(m);
  return out;
}

struct PartitionPlan {
  std::size_t seq_len = 0;              // L
  std::size_t features = 1;             // M
  LengthSchedule lookback;              // L_1 and (L_2..L_n)
  LengthSchedule feature{1, {}};        // M_1 and feature multiples
  std::size_t hidden = 1;               // M_hidden
  std::size_t latent_len = 1;           // L_h
  std::size_t latent_width = 0;         // M_h; 0 means `hidden`
  std::optional<LengthSchedule> horizon;  // decoder output schedule; unset mirrors `lookback`

  std::size_t latent_width_or_hidden() const { return latent_width == 0 ? hidden : latent_width; }
  const LengthSchedule& output() const { return horizon ? *horizon : lookback; }
  std::size_t output_len() const { return output().length(); }
  std::size_t lookback_levels() const { return lookback.levels(); }
  std::size_t feature_levels() const { return feature.multiples.size(); }
  std::size_t levels() const { return lookback_levels() + feature_levels(); }
};

/// Throws ConfigError unless both product identities hold and every extent is
/// positive. A horizon schedule must have as many levels as the look-back one.
inline void validate(const PartitionPlan& plan) {
  auto positive = [](const LengthSchedule& s, const char* what) {
    if (s.unit == 0) throw ConfigError(std::string(what) + " unit must be >= 1");
    for (auto m : s.multiples)
      if (m == 0) throw ConfigError(std::string(what) + " multiples must be >= 1");
  };
  positive(plan.lookback, "look-back");
  positive(plan.feature, "feature");
  if (plan.lookback.length() != plan.seq_len) {
    throw ConfigError("look-back schedule " + schedule_str(plan.lookback) + " has product " +
                      std::to_string(plan.lookback.length()) + " but L = " + std::to_string(plan.seq_len));
  }
  if (plan.feature.length() != plan.features) {
    throw ConfigError("feature schedule " + schedule_str(plan.feature) + " has product " +
                      std::to_string(plan.feature.length()) + " but M = " + std::to_string(plan.features));
  }
  if (plan.hidden == 0) throw ConfigError("hidden width must be >= 1");
  if (plan.latent_len == 0) throw ConfigError("latent length must be >= 1");
  if (plan.horizon) {
    positive(*plan.horizon, "horizon");
    if (plan.horizon->levels() != plan.lookback.levels()) {
      throw ConfigError("horizon schedule " + schedule_str(*plan.horizon) + " has " +
                        std::to_string(plan.horizon->levels()) + " levels but the look-back schedule has " +
                        std::to_string(plan.lookback.levels()));
    }
  }
}

/// Segment length at each encoder level, outermost first:
/// [L_1, L_2..L_n, M_2..M_m].
inline std::vector<std::size_t> encoder_lengths(const PartitionPlan& plan) {
  auto out = plan.lookback.lengths();
  out.insert(out.end(), plan.feature.multiples.begin(), plan.feature.multiples.end());
  return out;
}

/// Same as encoder_lengths but with the decoder's output schedule on the
/// look-back levels; index i is the level mirrored by encoder level i.
inline std::vector<std::size_t> decoder_lengths(const PartitionPlan& plan) {
  auto out = plan.output().lengths();
  out.insert(out.end(), plan.feature.multiples.begin(), plan.feature.multiples.end());
  return out;
}

/// Number of segments a kernel at `level` processes: batch * prod_{j > level} len_j.
inline std::size_t segment_count(const std::vector<std::size_t>& lengths, std::size_t level, std::size_t batch) {
  std::size_t n = batch;
  for (std::size_t j = level + 1; j < lengths.size(); ++j) n *= lengths[j];
  return n;
}

/// Factors T into `levels` positive factors (unit first). Prime factors are
/// dealt largest first onto the level with the smallest running product;
/// levels left over get multiple 1.
inline LengthSchedule derive_schedule(std::size_t length, std::size_t levels) {
  if (length == 0 || levels == 0) throw ConfigError("cannot factor length " + std::to_string(length));
  std::vector<std::size_t> primes;
  std::size_t n = length;
  for (std::size_t p = 2; p * p <= n; ++p)
    while (n % p == 0) {
      primes.push_back(p);
      n /= p;
    }
  if (n > 1) primes.push_back(n);
  std::vector<std::size_t> bins(levels, 1);
  for (auto it = primes.rbegin(); it != primes.rend(); ++it) {
    std::size_t best = 0;
    for (std::size_t b = 1; b < levels; ++b)
      if (bins[b] < bins[best]) best = b;
    bins[best] *= *it;
  }
  return LengthSchedule{bins.front(), std::vector<std::size_t>(bins.begin() + 1, bins.end())};
}

// ---------------------------------------------------------------------------
// Level reshapes

/// (batch, seg_len * k, width) -> (batch * k, seg_len, width), contiguous and
/// order preserving.
template <typename T>
Tensor<T> slice_level(const Tensor<T>& x, std::size_t k) {
  if (x.rank() != 3) throw DimensionError("slice_level: expected rank 3, got " + shape_str(x.shape()));
  if (k == 0 || x.dim(1) % k != 0) {
    throw DimensionError("slice_level: length " + std::to_string(x.dim(1)) + " of " + shape_str(x.shape()) +
                         " is not divisible by " + std::to_string(k));
  }
  return reshape(x, {x.dim(0) * k, x.dim(1) / k, x.dim(2)});
}

/// (batch * k, seg_len, width) -> (batch, seg_len * k, width); inverse of slice_level.
template <typename T>
Tensor<T> merge_level(const Tensor<T>& x, std::size_t k) {
  if (x.rank() != 3) throw DimensionError("merge_level: expected rank 3, got " + shape_str(x.shape()));
  if (k == 0 || x.dim(0) % k != 0) {
    throw DimensionError("merge_level: batch " + std::to_string(x.dim(0)) + " of " + shape_str(x.shape()) +
                         " is not divisible by " + std::to_string(k));
  }
  return reshape(x, {x.dim(0) / k, x.dim(1) * k, x.dim(2)});
}

/// (B, L, M) -> (B * P_M * P_L, L_1, M_1) where P_L = L / L_1 and
/// P_M = M / M_1. Feature groups become the outer slice index.
template <typename T>
Tensor<T> feature_transpose(const Tensor<T>& x, const LengthSchedule& length, const LengthSchedule& feature) {
  if (x.rank() != 3 || x.dim(1) != length.length() || x.dim(2) != feature.length()) {
    throw DimensionError("feature_transpose: tensor " + shape_str(x.shape()) + " does not match schedules L=" +
                         schedule_str(length) + ", M=" + schedule_str(feature));
  }
  const std::size_t b = x.dim(0);
  const std::size_t pl = length.length() / length.unit, pm = feature.length() / feature.unit;
  auto t = reshape(x, {b, pl, length.unit, pm, feature.unit});
  t = permute(t, {0, 3, 1, 2, 4});
  return reshape(t, {b * pm * pl, length.unit, feature.unit});
}

template <typename T>
Tensor<T> feature_transpose(const Tensor<T>& x, const PartitionPlan& plan) {
  return feature_transpose(x, plan.lookback, plan.feature);
}

/// Inverse of feature_transpose: (B * P_M * P_L, L_1, M_1) -> (B, L, M).
template <typename T>
Tensor<T> inverse_feature_transpose(const Tensor<T>& x, const LengthSchedule& length,
                                    const LengthSchedule& feature) {
  const std::size_t pl = length.length() / length.unit, pm = feature.length() / feature.unit;
  if (x.rank() != 3 || x.dim(1) != length.unit || x.dim(2) != feature.unit || x.dim(0) % (pl * pm) != 0) {
    throw DimensionError("inverse_feature_transpose: tensor " + shape_str(x.shape()) +
                         " does not match schedules L=" + schedule_str(length) + ", M=" + schedule_str(feature));
  }
  const std::size_t b = x.dim(0) / (pl * pm);
  auto t = reshape(x, {b, pm, pl, length.unit, feature.unit});
  t = permute(t, {0, 2, 3, 1, 4});
  return reshape(t, {b, length.length(), feature.length()});
}

}  // namespace kunet
