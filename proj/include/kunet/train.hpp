// SPDX-License-Identifier: Apache-2.0
//
// Training loop, early stopping, metrics and the repeat-last baseline.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kunet/data.hpp"
#include "kunet/errors.hpp"
#include "kunet/normalize.hpp"
#include "kunet/random.hpp"
#include "kunet/tensor.hpp"
#include "kunet/text.hpp"
#include "kunet/unet.hpp"

namespace kunet {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 300;
  std::size_t patience = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  NormMode norm = NormMode::mean;
  bool shuffle = true;
  bool random_erase = false;
  EraseConfig erase;
  std::size_t stride = 1;  // window stride for the training split
};

/// Throws ConfigError on an unusable config. A learning rate outside
/// [5e-5, 1e-3] is allowed but reported to `warn`.
inline void validate(const TrainConfig& c, std::ostream* warn = &std::clog) {
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
    throw ConfigError("train.learning_rate must be a positive number");
  }
  if (c.epochs == 0) throw ConfigError("train.epochs must be >= 1");
  if (c.patience == 0 || c.patience > c.epochs) {
    throw ConfigError("train.patience must lie in [1, epochs] (patience " + std::to_string(c.patience) +
                      ", epochs " + std::to_string(c.epochs) + ")");
  }
  if (c.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (c.stride == 0) throw ConfigError("train.stride must be >= 1");
  if (c.random_erase) validate(c.erase);
  if (warn && (c.learning_rate < 5e-5 || c.learning_rate > 1e-3)) {
    *warn << "warning: learning rate " << c.learning_rate << " is outside the usual range [5e-05, 0.001]\n";
  }
}

// ---------------------------------------------------------------------------
// Metrics

template <typename T>
double mse(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require_same_shape(pred, target, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    s += d * d;
  }
  return s / static_cast<double>(pred.numel());
}

template <typename T>
double mae(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require_same_shape(pred, target, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) s += std::abs(static_cast<double>(pred[i]) - static_cast<double>(target[i]));
  return s / static_cast<double>(pred.numel());
}

struct EvalMetrics {
  double mse = 0.0;
  double mae = 0.0;
  std::vector<double> mse_by_step;  // one entry per forecast step
  std::vector<double> mae_by_step;
  std::size_t windows = 0;
};

/// Accumulates errors element by element in (window, step, channel) order, so
/// the result does not depend on how windows were grouped into batches.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::size_t horizon) : sq_(horizon, 0.0), abs_(horizon, 0.0) {}

  template <typename T>
  void add(const Tensor<T>& pred, const Tensor<T>& target) {
    detail::require_same_shape(pred, target, "metrics");
    const std::size_t b = pred.dim(0), t = pred.dim(1), m = pred.dim(2);
    if (t != sq_.size()) throw DimensionError("metrics: expected horizon " + std::to_string(sq_.size()));
    if (channels_ == 0) channels_ = m;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t c = 0; c < m; ++c) {
          const std::size_t at = (i * t + s) * m + c;
          const double d = static_cast<double>(pred[at]) - static_cast<double>(target[at]);
          sq_[s] += d * d;
          abs_[s] += std::abs(d);
        }
    windows_ += b;
  }

  EvalMetrics result() const {
    if (windows_ == 0) throw DataError("evaluate: no windows to score (split shorter than L + T?)");
    EvalMetrics r;
    r.windows = windows_;
    const double per_step = static_cast<double>(windows_ * channels_);
    double sq = 0.0, ab = 0.0;
    for (std::size_t s = 0; s < sq_.size(); ++s) {
      r.mse_by_step.push_back(sq_[s] / per_step);
      r.mae_by_step.push_back(abs_[s] / per_step);
      sq += sq_[s];
      ab += abs_[s];
    }
    r.mse = sq / (per_step * static_cast<double>(sq_.size()));
    r.mae = ab / (per_step * static_cast<double>(sq_.size()));
    return r;
  }

 private:
  std::vector<double> sq_, abs_;
  std::size_t windows_ = 0;
  std::size_t channels_ = 0;
};

/// (B, L, M) window -> (B, T, M) with the final observed value of each channel.
template <typename T>
Tensor<T> repeat_last_baseline(const Tensor<T>& window, std::size_t horizon) {
  if (window.rank() != 3 || window.dim(1) == 0) {
    throw DimensionError("repeat_last_baseline: expected non-empty (B, L, M), got " + shape_str(window.shape()));
  }
  const std::size_t b = window.dim(0), l = window.dim(1), m = window.dim(2);
  std::vector<T> out(b * horizon * m);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t s = 0; s < horizon; ++s)
      for (std::size_t c = 0; c < m; ++c) out[(i * horizon + s) * m + c] = window[(i * l + l - 1) * m + c];
  return Tensor<T>({b, horizon, m}, std::move(out));
}

/// Scores `predict` (raw window -> raw forecast) on the windows at `starts`.
template <typename T>
EvalMetrics evaluate_with(const std::function<Tensor<T>(const Tensor<T>&)>& predict, const SeriesTable& table,
                          std::span<const std::size_t> starts, std::size_t lookback, std::size_t horizon,
                          std::size_t batch_size = 32) {
  if (starts.empty()) throw DataError("evaluate: empty window stream");
  if (batch_size == 0) throw ConfigError("evaluate: batch size must be >= 1");
  MetricAccumulator acc(horizon);
  for (std::size_t at = 0; at < starts.size(); at += batch_size) {
    const auto chunk = starts.subspan(at, std::min(batch_size, starts.size() - at));
    auto batch = make_batch<T>(table, chunk, lookback, horizon);
    acc.add(predict(batch.inputs), batch.targets);
  }
  return acc.result();
}

// ---------------------------------------------------------------------------
// Model-facing forecasting

/// True when the model sees one channel at a time while the data has several.
template <typename T>
bool channel_independent(const KUNet<T>& model, std::size_t data_channels) {
  const std::size_t m = model.config().plan.features;
  if (m == data_channels) return false;
  if (m == 1) return true;
  throw ConfigError("model has " + std::to_string(m) + " features but the data has " +
                    std::to_string(data_channels) + " channels");
}

/// Runs the model on a normalized window, handling channel-independent
/// flattening. Input and output are (B, *, M).
template <typename T>
Tensor<T> model_apply(KUNet<T>& model, const Tensor<T>& normalized) {
  const std::size_t m = normalized.dim(2);
  if (!channel_independent(model, m)) return model.forward(normalized);
  return channel_unflatten(model.forward(channel_flatten(normalized)), m);
}

/// Raw window -> raw forecast: normalize, predict, invert.
template <typename T>
Tensor<T> predict(KUNet<T>& model, const Tensor<T>& window, NormMode norm) {
  NoGradGuard guard;
  auto [x, st] = normalize_apply(window, norm);
  return normalize_invert(model_apply(model, x), st);
}

template <typename T>
EvalMetrics evaluate(KUNet<T>& model, const SeriesTable& table, std::span<const std::size_t> starts, NormMode norm,
                     std::size_t batch_size = 32) {
  const auto& p = model.config().plan;
  return evaluate_with<T>([&](const Tensor<T>& w) { return predict(model, w, norm); }, table, starts, p.seq_len,
                          p.output_len(), batch_size);
}

template <typename T>
EvalMetrics evaluate_repeat_last(const SeriesTable& table, std::span<const std::size_t> starts, std::size_t lookback,
                                 std::size_t horizon, std::size_t batch_size = 32) {
  return evaluate_with<T>([&](const Tensor<T>& w) { return repeat_last_baseline(w, horizon); }, table, starts,
                          lookback, horizon, batch_size);
}

/// Mean normalized MSE over windows; the quantity that is optimized.
template <typename T>
double normalized_loss(KUNet<T>& model, const SeriesTable& table, std::span<const std::size_t> starts, NormMode norm,
                       std::size_t batch_size = 32) {
  if (starts.empty()) throw DataError("validation: empty window stream");
  const auto& p = model.config().plan;
  NoGradGuard guard;
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t at = 0; at < starts.size(); at += batch_size) {
    const auto chunk = starts.subspan(at, std::min(batch_size, starts.size() - at));
    auto batch = make_batch<T>(table, chunk, p.seq_len, p.output_len());
    auto [x, st] = normalize_apply(batch.inputs, norm);
    const auto pred = model_apply(model, x);
    const auto target = normalize_with(batch.targets, st);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
      sq += d * d;
    }
    n += pred.numel();
  }
  return sq / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Optimizer

/// Adam with bias correction.
template <typename T>
class Adam {
 public:
  Adam(std::vector<NamedTensor<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  /// Applies one update from the current gradients; tensors without a
  /// gradient are left untouched.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& tensor = params_[k].tensor;
      if (!tensor.has_grad()) continue;
      const auto g = tensor.grad();
      auto w = tensor.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * gi;
        v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * gi * gi;
        const double update = lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t steps() const { return t_; }

 private:
  std::vector<NamedTensor<T>> params_;
  double lr_, beta1_, beta2_, eps_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// Normalized MSE of one batch as a graph node (with optional input erase).
template <typename T>
Tensor<T> batch_loss(KUNet<T>& model, const WindowBatch<T>& batch, NormMode norm, const EraseConfig* erase = nullptr,
                     Rng* erase_rng = nullptr) {
  auto [x, st] = normalize_apply(batch.inputs, norm);
  if (erase && erase_rng) x = random_erase(x, *erase, *erase_rng);
  const auto target = normalize_with(batch.targets, st);
  return mse_loss(model_apply(model, x), target);
}

// ---------------------------------------------------------------------------
// Early stopping

/// Tracks the best validation loss and a copy of the weights that produced it.
template <typename T>
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Returns true when this epoch improved on the best loss so far.
  bool update(std::size_t epoch, double loss, const std::vector<NamedTensor<T>>& params) {
    if (loss < best_loss_) {
      best_loss_ = loss;
      best_epoch_ = epoch;
      stale_ = 0;
      snapshot_.clear();
      for (const auto& p : params) snapshot_.push_back(p.tensor.to_vector());
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }

  void restore(const std::vector<NamedTensor<T>>& params) const {
    if (snapshot_.empty()) return;
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto t = params[k].tensor;
      std::copy(snapshot_[k].begin(), snapshot_[k].end(), t.data().begin());
    }
  }

  double best_loss() const { return best_loss_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::vector<std::vector<T>> snapshot_;
};

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool improved = false;
};

struct MetricsReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  EvalMetrics test;
  std::size_t parameters = 0;
  std::uint64_t attention_cost = 0;  // per input sample
  double wall_seconds = 0.0;
};

/// Key=value lines. The summary line carries no timing so that it is
/// reproducible byte for byte.
inline std::string epoch_line(const EpochRecord& e) {
  return "epoch=" + std::to_string(e.epoch) + " train_loss=" + format_real(e.train_loss) +
         " val_loss=" + format_real(e.val_loss) + " improved=" + (e.improved ? "1" : "0");
}

inline std::string summary_line(const MetricsReport& r) {
  return "summary mse=" + format_real(r.test.mse) + " mae=" + format_real(r.test.mae) +
         " parameters=" + std::to_string(r.parameters) + " attention_cost=" + std::to_string(r.attention_cost) +
         " epochs_run=" + std::to_string(r.epochs.size()) + " best_epoch=" + std::to_string(r.best_epoch) +
         " best_val_loss=" + format_real(r.best_val_loss) + " windows=" + std::to_string(r.test.windows);
}

inline std::string horizon_lines(const EvalMetrics& m) {
  std::string out;
  for (std::size_t s = 0; s < m.mse_by_step.size(); ++s) {
    out += "horizon step=" + std::to_string(s + 1) + " mse=" + format_real(m.mse_by_step[s]) +
           " mae=" + format_real(m.mae_by_step[s]) + "\n";
  }
  return out;
}

inline std::string metrics_text(const MetricsReport& r) {
  std::string out;
  for (const auto& e : r.epochs) out += epoch_line(e) + "\n";
  out += horizon_lines(r.test);
  out += summary_line(r) + "\n";
  out += "timing wall_seconds=" + format_real(r.wall_seconds) + "\n";
  return out;
}

/// Window start rows for each split; validation and test windows take their
/// input context from the end of the preceding split.
struct WindowSets {
  std::vector<std::size_t> train, val, test;
};

inline WindowSets make_window_sets(const Splits& s, std::size_t lookback, std::size_t horizon, std::size_t stride = 1,
                                   std::ostream* warn = &std::clog) {
  return {window_starts(s.train, lookback, horizon, stride, warn),
          window_starts(with_context(s.val, lookback), lookback, horizon, 1, warn),
          window_starts(with_context(s.test, lookback), lookback, horizon, 1, warn)};
}

struct TrainHooks {
  /// Replaces the computed validation loss (epoch is 1-based).
  std::function<double(std::size_t epoch, double computed)> validation_override;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains in place, restores the best-validation weights and scores the test
/// windows. Throws TrainingError on a non-finite loss.
template <typename T>
MetricsReport train(KUNet<T>& model, const TrainConfig& cfg, const SeriesTable& table, const WindowSets& windows,
                    const TrainHooks& hooks = {}) {
  validate(cfg, nullptr);
  if (windows.train.empty()) throw DataError("train: training split yields no windows");
  if (windows.val.empty()) throw DataError("train: validation split yields no windows");
  const auto t0 = std::chrono::steady_clock::now();
  const auto& plan = model.config().plan;
  channel_independent(model, table.width());

  Rng base(cfg.seed);
  Rng shuffle_rng = base.fork(1);
  Rng erase_rng = base.fork(2);
  Adam<T> opt(model.parameters(), cfg.learning_rate);
  EarlyStopper<T> stopper(cfg.patience);
  MetricsReport report;
  std::vector<std::size_t> order = windows.train;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const auto chunk = std::span<const std::size_t>(order).subspan(at, std::min(cfg.batch_size, order.size() - at));
      const auto batch = make_batch<T>(table, chunk, plan.seq_len, plan.output_len());
      opt.zero_grad();
      const auto loss = batch_loss(model, batch, cfg.norm, cfg.random_erase ? &cfg.erase : nullptr, &erase_rng);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw TrainingError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batches + 1) + " (try a smaller learning rate)");
      }
      backward(loss);
      opt.step();
      loss_sum += value;
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val_loss = normalized_loss(model, table, windows.val, cfg.norm, cfg.batch_size);
    if (hooks.validation_override) rec.val_loss = hooks.validation_override(epoch, rec.val_loss);
    if (!std::isfinite(rec.val_loss)) {
      throw TrainingError("training diverged: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    rec.improved = stopper.update(epoch, rec.val_loss, model.parameters());
    report.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (stopper.should_stop()) {
      report.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  opt.zero_grad();
  stopper.restore(model.parameters());
  report.best_epoch = stopper.best_epoch();
  report.best_val_loss = stopper.best_loss();
  report.parameters = model.parameter_count();
  report.attention_cost = attention_cost(model.config(), 1);
  if (!windows.test.empty()) report.test = evaluate(model, table, windows.test, cfg.norm, cfg.batch_size);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace kunet
