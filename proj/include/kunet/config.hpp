// SPDX-License-Identifier: Apache-2.0
//
// key = value run configuration. Every key has a default; unknown keys are
// errors. Schedules are written as products, e.g. "3*4*4*7".
#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kunet/data.hpp"
#include "kunet/errors.hpp"
#include "kunet/normalize.hpp"
#include "kunet/partition.hpp"
#include "kunet/synthetic.hpp"
#include "kunet/text.hpp"
#include "kunet/train.hpp"
#include "kunet/unet.hpp"

namespace kunet {

enum class Precision { f64, f32 };

struct DataConfig {
  // CSV path, or "synthetic:ett" / "synthetic:sine". Relative paths that do not
  // exist are looked up in $KUNET_DATA_DIR.
  std::string path = "synthetic:ett";
  std::vector<std::string> columns;  // empty keeps all
  std::size_t max_rows = 0;
  MissingPolicy missing = MissingPolicy::reject;
  std::size_t synthetic_rows = 4000;
  double sine_period = 24.0;
  SplitOptions split;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  std::size_t horizon_len = 0;  // used when model.plan.horizon is unset and this differs from L
  TrainConfig train;
  Precision precision = Precision::f64;
  std::string output_dir = "run";
};

inline LengthSchedule parse_schedule(std::string_view s, const std::string& key) {
  const auto parts = split_on(s, '*');
  LengthSchedule out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::size_t v = 0;
    if (!detail::parse_int(parts[i], v) || v == 0) {
      throw ConfigError(key + ": cannot parse schedule '" + std::string(s) + "' (expected e.g. 3*4*4*7)");
    }
    if (i == 0) {
      out.unit = v;
    } else {
      out.multiples.push_back(v);
    }
  }
  return out;
}

namespace detail {

struct ConfigKey {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline std::size_t to_size(std::string_view v, const std::string& key) {
  std::size_t out = 0;
  if (!parse_int(v, out)) throw ConfigError(key + ": expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

inline double to_real(std::string_view v, const std::string& key) {
  double out = 0;
  if (!parse_real(v, out)) throw ConfigError(key + ": expected a number, got '" + std::string(v) + "'");
  return out;
}

inline bool to_bool(std::string_view v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + std::string(v) + "'");
}

inline std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + xs[i];
  return out;
}

template <typename F>
auto wrap(const std::string& key, F f) {
  return [key, f](RunConfig& c, std::string_view v) {
    try {
      f(c, v, key);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(key + ": " + e.what());
    }
  };
}

inline const std::vector<ConfigKey>& config_keys() {
  using S = std::string_view;
  using K = const std::string&;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto add = [&k](std::string name, auto set, std::function<std::string(const RunConfig&)> get) {
      k.push_back({name, wrap(name, set), std::move(get)});
    };
    add("data.path", [](RunConfig& c, S v, K) { c.data.path = std::string(v); },
        [](const RunConfig& c) { return c.data.path; });
    add("data.columns",
        [](RunConfig& c, S v, K) {
          c.data.columns.clear();
          if (!v.empty())
            for (auto p : split_on(v, ',')) c.data.columns.emplace_back(p);
        },
        [](const RunConfig& c) { return join(c.data.columns); });
    add("data.max_rows", [](RunConfig& c, S v, K key) { c.data.max_rows = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.data.max_rows); });
    add("data.missing",
        [](RunConfig& c, S v, K key) {
          if (v == "reject") {
            c.data.missing = MissingPolicy::reject;
          } else if (v == "forward_fill") {
            c.data.missing = MissingPolicy::forward_fill;
          } else {
            throw ConfigError(key + ": expected reject or forward_fill");
          }
        },
        [](const RunConfig& c) {
          return std::string(c.data.missing == MissingPolicy::reject ? "reject" : "forward_fill");
        });
    add("data.synthetic_rows", [](RunConfig& c, S v, K key) { c.data.synthetic_rows = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.data.synthetic_rows); });
    add("data.sine_period", [](RunConfig& c, S v, K key) { c.data.sine_period = to_real(v, key); },
        [](const RunConfig& c) { return format_real(c.data.sine_period); });
    add("split.scheme",
        [](RunConfig& c, S v, K key) {
          if (v == "ratio") {
            c.data.split.scheme = SplitScheme::ratio;
          } else if (v == "ett_months") {
            c.data.split.scheme = SplitScheme::ett_months;
          } else {
            throw ConfigError(key + ": expected ratio or ett_months");
          }
        },
        [](const RunConfig& c) {
          return std::string(c.data.split.scheme == SplitScheme::ratio ? "ratio" : "ett_months");
        });
    add("split.train_ratio", [](RunConfig& c, S v, K key) { c.data.split.train_ratio = to_real(v, key); },
        [](const RunConfig& c) { return format_real(c.data.split.train_ratio); });
    add("split.test_ratio", [](RunConfig& c, S v, K key) { c.data.split.test_ratio = to_real(v, key); },
        [](const RunConfig& c) { return format_real(c.data.split.test_ratio); });

    add("plan.seq_len", [](RunConfig& c, S v, K key) { c.model.plan.seq_len = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.model.plan.seq_len); });
    add("plan.lookback", [](RunConfig& c, S v, K key) { c.model.plan.lookback = parse_schedule(v, key); },
        [](const RunConfig& c) { return schedule_str(c.model.plan.lookback); });
    add("plan.features", [](RunConfig& c, S v, K key) { c.model.plan.features = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.model.plan.features); });
    add("plan.feature_schedule", [](RunConfig& c, S v, K key) { c.model.plan.feature = parse_schedule(v, key); },
        [](const RunConfig& c) { return schedule_str(c.model.plan.feature); });
    add("plan.hidden", [](RunConfig& c, S v, K key) { c.model.plan.hidden = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.model.plan.hidden); });
    add("plan.latent_len", [](RunConfig& c, S v, K key) { c.model.plan.latent_len = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.model.plan.latent_len); });
    add("plan.latent_width", [](RunConfig& c, S v, K key) { c.model.plan.latent_width = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.model.plan.latent_width); });
    // Either a schedule ("2*4*4*3"), a plain length to be factored, or "auto"
    // (same as the look-back schedule).
    add("plan.horizon",
        [](RunConfig& c, S v, K key) {
          c.horizon_len = 0;
          c.model.plan.horizon.reset();
          if (v == "auto" || v.empty()) return;
          if (v.find('*') != S::npos) {
            c.model.plan.horizon = parse_schedule(v, key);
          } else {
            c.horizon_len = to_size(v, key);
          }
        },
        [](const RunConfig& c) {
          if (c.model.plan.horizon) return schedule_str(*c.model.plan.horizon);
          return c.horizon_len ? std::to_string(c.horizon_len) : std::string("auto");
        });

    add("model.variant", [](RunConfig& c, S v, K) { c.model.variant = parse_variant(v); },
        [](const RunConfig& c) { return std::string(to_string(c.model.variant)); });
    // Comma list of level:kind, e.g. "0:mlp,3:transformer".
    add("model.overrides",
        [](RunConfig& c, S v, K key) {
          c.model.overrides.clear();
          if (v.empty()) return;
          for (auto item : split_on(v, ',')) {
            const auto colon = item.find(':');
            if (colon == S::npos) throw ConfigError(key + ": expected level:kind, got '" + std::string(item) + "'");
            c.model.overrides.push_back({to_size(item.substr(0, colon), key), parse_kernel_kind(item.substr(colon + 1))});
          }
        },
        [](const RunConfig& c) {
          std::string out;
          for (std::size_t i = 0; i < c.model.overrides.size(); ++i) {
            out += (i ? "," : "") + std::to_string(c.model.overrides[i].level) + ":" +
                   std::string(to_string(c.model.overrides[i].kind));
          }
          return out;
        });
    add("model.kernel_hidden", [](RunConfig& c, S v, K key) { c.model.kernel_hidden = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.model.kernel_hidden); });
    add("model.heads", [](RunConfig& c, S v, K key) { c.model.heads = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.model.heads); });
    add("model.blocks", [](RunConfig& c, S v, K key) { c.model.blocks = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.model.blocks); });
    add("model.skips", [](RunConfig& c, S v, K key) { c.model.skips = to_bool(v, key); },
        [](const RunConfig& c) { return std::string(c.model.skips ? "true" : "false"); });

    add("train.learning_rate", [](RunConfig& c, S v, K key) { c.train.learning_rate = to_real(v, key); },
        [](const RunConfig& c) { return format_real(c.train.learning_rate); });
    add("train.epochs", [](RunConfig& c, S v, K key) { c.train.epochs = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.train.epochs); });
    add("train.patience", [](RunConfig& c, S v, K key) { c.train.patience = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.train.patience); });
    add("train.batch_size", [](RunConfig& c, S v, K key) { c.train.batch_size = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.train.batch_size); });
    add("train.seed", [](RunConfig& c, S v, K key) { c.train.seed = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.train.seed); });
    add("train.norm", [](RunConfig& c, S v, K) { c.train.norm = parse_norm_mode(v); },
        [](const RunConfig& c) { return std::string(to_string(c.train.norm)); });
    add("train.shuffle", [](RunConfig& c, S v, K key) { c.train.shuffle = to_bool(v, key); },
        [](const RunConfig& c) { return std::string(c.train.shuffle ? "true" : "false"); });
    add("train.stride", [](RunConfig& c, S v, K key) { c.train.stride = to_size(v, key); },
        [](const RunConfig& c) { return std::to_string(c.train.stride); });
    add("train.random_erase", [](RunConfig& c, S v, K key) { c.train.random_erase = to_bool(v, key); },
        [](const RunConfig& c) { return std::string(c.train.random_erase ? "true" : "false"); });
    add("train.erase_p", [](RunConfig& c, S v, K key) { c.train.erase.p = to_real(v, key); },
        [](const RunConfig& c) { return format_real(c.train.erase.p); });
    add("train.erase_min_ratio", [](RunConfig& c, S v, K key) { c.train.erase.min_ratio = to_real(v, key); },
        [](const RunConfig& c) { return format_real(c.train.erase.min_ratio); });
    add("train.erase_max_ratio", [](RunConfig& c, S v, K key) { c.train.erase.max_ratio = to_real(v, key); },
        [](const RunConfig& c) { return format_real(c.train.erase.max_ratio); });
    add("train.precision",
        [](RunConfig& c, S v, K key) {
          if (v == "f64" || v == "double") {
            c.precision = Precision::f64;
          } else if (v == "f32" || v == "float") {
            c.precision = Precision::f32;
          } else {
            throw ConfigError(key + ": expected f64 or f32");
          }
        },
        [](const RunConfig& c) { return std::string(c.precision == Precision::f64 ? "f64" : "f32"); });
    add("output.dir", [](RunConfig& c, S v, K) { c.output_dir = std::string(v); },
        [](const RunConfig& c) { return c.output_dir; });
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Default run: univariate channel-independent forecasting of L=96 from
/// 4*4*6 with a 4*4*6 horizon on the synthetic ETT surrogate.
inline RunConfig default_run_config() {
  RunConfig c;
  c.model.plan.seq_len = 96;
  c.model.plan.lookback = {4, {4, 6}};
  c.model.plan.hidden = 16;
  c.data.columns = {"OT"};
  c.train.epochs = 30;
  c.train.patience = 5;
  return c;
}

inline void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) {
      k.set(cfg, trim_space(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

/// Applies "key=value".
inline void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  set_config_value(cfg, trim_space(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

/// Reads key = value lines on top of `base`. Blank lines and '#' comments are
/// skipped. Errors name the line.
inline RunConfig parse_config(std::istream& in, RunConfig base = default_run_config()) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto s = trim_space(line);
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = trim_space(s.substr(0, hash));
    if (s.empty()) continue;
    try {
      apply_override(base, s);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = default_run_config()) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, std::move(base));
}

/// Every key with its effective value, one per line, in a fixed order.
inline std::string config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : detail::config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

/// plan.*, model.* and train.norm: enough to rebuild a model and feed it.
inline std::string model_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : detail::config_keys()) {
    if (k.name.starts_with("plan.") || k.name.starts_with("model.") || k.name == "train.norm") {
      out += k.name + " = " + k.get(cfg) + "\n";
    }
  }
  return out;
}

/// Fills in the horizon schedule and validates the model part.
inline ModelConfig resolve_model(const RunConfig& cfg) {
  ModelConfig m = cfg.model;
  if (!m.plan.horizon && cfg.horizon_len != 0 && cfg.horizon_len != m.plan.seq_len) {
    m.plan.horizon = derive_schedule(cfg.horizon_len, m.plan.lookback.levels());
  }
  validate(m);
  return m;
}

inline void validate(const RunConfig& cfg, std::ostream* warn = &std::clog) {
  resolve_model(cfg);
  validate(cfg.train, warn);
  if (cfg.data.path.empty()) throw ConfigError("data.path must be set");
}

/// Resolves a data path: synthetic sources pass through; a relative path that
/// does not exist is retried under $KUNET_DATA_DIR.
inline std::string resolve_data_path(const std::string& path) {
  if (path.starts_with("synthetic:")) return path;
  namespace fs = std::filesystem;
  if (fs::exists(path) || fs::path(path).is_absolute()) return path;
  if (const char* dir = std::getenv("KUNET_DATA_DIR")) {
    const auto alt = fs::path(dir) / path;
    if (fs::exists(alt)) return alt.string();
  }
  return path;
}

/// Loads the configured table (columns and row limit applied).
inline SeriesTable load_data(const DataConfig& d, IngestReport* report = nullptr) {
  const std::string path = resolve_data_path(d.path);
  SeriesTable table;
  if (path == "synthetic:ett") {
    table = ett_surrogate(d.synthetic_rows);
  } else if (path == "synthetic:sine") {
    table = sine_table(d.synthetic_rows, d.sine_period);
  } else if (path.starts_with("synthetic:")) {
    throw ConfigError("data.path: unknown synthetic source '" + path + "' (expected synthetic:ett or synthetic:sine)");
  } else {
    return load_csv(path, CsvOptions{d.columns, d.max_rows, d.missing}, report);
  }
  if (!d.columns.empty()) {
    SeriesTable picked{table.time_column, {}, table.timestamps, {}};
    std::vector<std::size_t> idx;
    for (const auto& want : d.columns) {
      std::size_t found = table.width();
      for (std::size_t c = 0; c < table.width(); ++c)
        if (table.channels[c] == want) found = c;
      if (found == table.width()) throw ConfigError("data.columns: '" + want + "' not in " + path);
      idx.push_back(found);
      picked.channels.push_back(want);
    }
    for (std::size_t r = 0; r < table.rows(); ++r)
      for (auto c : idx) picked.values.push_back(table.at(r, c));
    table = std::move(picked);
  }
  table = table.head(d.max_rows);
  if (report) {
    *report = {};
    report->rows = table.rows();
    report->channels = table.width();
  }
  return table;
}

}  // namespace kunet
