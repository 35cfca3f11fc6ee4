// SPDX-License-Identifier: Apache-2.0
//
// CSV ingestion, chronological splits and sliding windows.
#pragma once

#include <charconv>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <istream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kunet/errors.hpp"
#include "kunet/tensor.hpp"

namespace kunet {

/// N x M series with strictly increasing timestamps (seconds since epoch, or
/// raw integers when the file uses an index column).
struct SeriesTable {
  std::string time_column;
  std::vector<std::string> channels;
  std::vector<std::int64_t> timestamps;
  std::vector<double> values;  // row-major rows x channels

  std::size_t rows() const { return timestamps.size(); }
  std::size_t width() const { return channels.size(); }
  double at(std::size_t row, std::size_t channel) const { return values[row * width() + channel]; }

  /// First `n` rows (all rows if n is 0 or exceeds the table).
  SeriesTable head(std::size_t n) const {
    if (n == 0 || n >= rows()) return *this;
    SeriesTable t{time_column, channels, {timestamps.begin(), timestamps.begin() + static_cast<long>(n)}, {}};
    t.values.assign(values.begin(), values.begin() + static_cast<long>(n * width()));
    return t;
  }
};

enum class MissingPolicy { reject, forward_fill };

struct CsvOptions {
  std::vector<std::string> columns;  // empty keeps every value column
  std::size_t max_rows = 0;          // 0 reads everything
  MissingPolicy missing = MissingPolicy::reject;
};

struct IngestReport {
  std::size_t rows = 0;
  std::size_t channels = 0;
  std::size_t rejected_rows = 0;
  std::size_t filled_cells = 0;
  std::vector<std::size_t> rejected_lines;

  std::string to_text() const {
    std::ostringstream os;
    os << "rows=" << rows << "\nchannels=" << channels << "\nrejected_rows=" << rejected_rows
       << "\nfilled_cells=" << filled_cells << '\n';
    if (!rejected_lines.empty()) {
      os << "rejected_lines=";
      for (std::size_t i = 0; i < rejected_lines.size(); ++i) os << (i ? "," : "") << rejected_lines[i];
      os << '\n';
    }
    return os.str();
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename I>
bool parse_int(std::string_view s, I& out) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

inline bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

}  // namespace detail

/// Accepts "YYYY-MM-DD", "YYYY-MM-DD HH:MM[:SS]" (or with 'T'), or a bare integer.
inline std::optional<std::int64_t> parse_timestamp(std::string_view s) {
  std::int64_t raw = 0;
  if (detail::parse_int(s, raw)) return raw;
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  int y = 0;
  unsigned mo = 0, d = 0, hh = 0, mm = 0, ss = 0;
  if (!detail::parse_int(s.substr(0, 4), y) || !detail::parse_int(s.substr(5, 2), mo) ||
      !detail::parse_int(s.substr(8, 2), d)) {
    return std::nullopt;
  }
  if (s.size() > 10) {
    if ((s[10] != ' ' && s[10] != 'T') || s.size() < 16 || s[13] != ':') return std::nullopt;
    if (!detail::parse_int(s.substr(11, 2), hh) || !detail::parse_int(s.substr(14, 2), mm)) return std::nullopt;
    if (s.size() > 16) {
      if (s.size() != 19 || s[16] != ':' || !detail::parse_int(s.substr(17, 2), ss)) return std::nullopt;
    }
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 60) return std::nullopt;
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + hh * 3600 + mm * 60 + ss;
}

/// Reads CSV text: header row, timestamp first column, numeric channels after.
inline SeriesTable parse_csv(std::istream& in, const CsvOptions& options = {}, IngestReport* report = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw IngestError("csv: missing header row", 1, 0);
  const auto header = detail::split_fields(line);
  if (header.size() < 2) throw IngestError("csv: header needs a timestamp column and at least one channel", 1, 0);

  std::vector<std::size_t> picked;  // field indices
  SeriesTable table;
  table.time_column = std::string(header[0]);
  if (options.columns.empty()) {
    for (std::size_t i = 1; i < header.size(); ++i) picked.push_back(i);
  } else {
    for (const auto& want : options.columns) {
      std::size_t found = 0;
      for (std::size_t i = 1; i < header.size(); ++i)
        if (header[i] == want) found = i;
      if (found == 0) throw IngestError("csv: column '" + want + "' not found in header", 1, 0);
      picked.push_back(found);
    }
  }
  for (auto i : picked) table.channels.emplace_back(header[i]);

  IngestReport rep;
  std::vector<double> previous;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    if (options.max_rows != 0 && table.rows() >= options.max_rows) break;
    const auto fields = detail::split_fields(line);
    if (fields.size() != header.size()) {
      throw IngestError("csv: row " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                            " fields, header has " + std::to_string(header.size()),
                        lineno, 0);
    }
    const auto ts = parse_timestamp(fields[0]);
    if (!ts) {
      throw IngestError("csv: row " + std::to_string(lineno) + ", column '" + table.time_column +
                            "': cannot parse timestamp '" + std::string(fields[0]) + "'",
                        lineno, 1);
    }
    std::vector<double> row(picked.size());
    bool gap = false;
    std::size_t filled = 0;
    for (std::size_t k = 0; k < picked.size(); ++k) {
      const auto cell = fields[picked[k]];
      if (cell.empty() || cell == "NaN" || cell == "nan" || cell == "NA") {
        if (options.missing == MissingPolicy::forward_fill && !previous.empty()) {
          row[k] = previous[k];
          ++filled;
        } else {
          gap = true;
        }
        continue;
      }
      if (!detail::parse_double(cell, row[k])) {
        throw IngestError("csv: row " + std::to_string(lineno) + ", column '" + table.channels[k] +
                              "': non-numeric value '" + std::string(cell) + "'",
                          lineno, picked[k] + 1);
      }
    }
    if (gap) {
      ++rep.rejected_rows;
      rep.rejected_lines.push_back(lineno);
      continue;
    }
    rep.filled_cells += filled;
    if (!table.timestamps.empty() && *ts <= table.timestamps.back()) {
      throw DataError("csv: timestamps not strictly increasing at row " + std::to_string(lineno));
    }
    table.timestamps.push_back(*ts);
    table.values.insert(table.values.end(), row.begin(), row.end());
    previous = std::move(row);
  }
  rep.rows = table.rows();
  rep.channels = table.width();
  if (report) *report = rep;
  return table;
}

inline SeriesTable load_csv(const std::string& path, const CsvOptions& options = {}, IngestReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("csv: cannot open '" + path + "'");
  return parse_csv(in, options, report);
}

// ---------------------------------------------------------------------------
// Splits

struct RowRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const RowRange&) const = default;
};

struct Splits {
  RowRange train, val, test;
};

enum class SplitScheme { ratio, ett_months };

struct SplitOptions {
  SplitScheme scheme = SplitScheme::ratio;
  double train_ratio = 0.7;
  double test_ratio = 0.2;  // validation takes the remainder
  std::size_t train_months = 12, val_months = 4, test_months = 4;
  std::size_t rows_per_month = 0;  // 0 infers from the sampling interval
};

/// 30-day months: 720 rows for hourly data, 2880 for 15-minute data.
inline std::size_t rows_per_month(const SeriesTable& table) {
  if (table.rows() < 2) throw DataError("split: need at least two rows to infer the sampling interval");
  const std::int64_t step = table.timestamps[1] - table.timestamps[0];
  if (step <= 0 || (30 * 86400) % step != 0) {
    throw DataError("split: cannot derive rows per month from a sampling interval of " + std::to_string(step) + " s");
  }
  return static_cast<std::size_t>(30 * 86400 / step);
}

inline Splits split_rows(std::size_t rows, const SplitOptions& opt) {
  Splits s;
  if (opt.scheme == SplitScheme::ratio) {
    if (!(opt.train_ratio > 0 && opt.test_ratio > 0 && opt.train_ratio + opt.test_ratio < 1)) {
      throw ConfigError("split: ratios must be positive and leave room for validation");
    }
    const auto n_train = static_cast<std::size_t>(static_cast<double>(rows) * opt.train_ratio);
    const auto n_test = static_cast<std::size_t>(static_cast<double>(rows) * opt.test_ratio);
    if (n_train == 0 || n_test == 0 || n_train + n_test >= rows) {
      throw DataError("split: " + std::to_string(rows) + " rows are too few for the ratio scheme");
    }
    s.train = {0, n_train};
    s.val = {n_train, rows - n_test};
    s.test = {rows - n_test, rows};
  } else {
    const std::size_t per = opt.rows_per_month;
    if (per == 0) throw ConfigError("split: rows_per_month must be known for the month scheme");
    const std::size_t a = opt.train_months * per, b = a + opt.val_months * per, c = b + opt.test_months * per;
    if (rows < c) {
      throw DataError("split: month scheme needs " + std::to_string(c) + " rows, table has " + std::to_string(rows));
    }
    s.train = {0, a};
    s.val = {a, b};
    s.test = {b, c};
  }
  return s;
}

inline Splits split(const SeriesTable& table, SplitOptions opt) {
  if (opt.scheme == SplitScheme::ett_months && opt.rows_per_month == 0) opt.rows_per_month = rows_per_month(table);
  return split_rows(table.rows(), opt);
}

/// Extends a split backwards by up to `context` rows of input-only history, so
/// that its first window already predicts the split's first row.
inline RowRange with_context(const RowRange& r, std::size_t context) {
  return {r.begin >= context ? r.begin - context : 0, r.end};
}

// ---------------------------------------------------------------------------
// Windows

/// Start rows t of every window whose inputs [t, t+L) and targets
/// [t+L, t+L+T) lie inside `range`. Yields max(0, N - L - T + 1) windows at
/// stride 1; an undersized range yields none and logs a warning.
inline std::vector<std::size_t> window_starts(const RowRange& range, std::size_t lookback, std::size_t horizon,
                                              std::size_t stride = 1, std::ostream* warn = &std::clog) {
  if (stride == 0) throw ConfigError("windows: stride must be >= 1");
  std::vector<std::size_t> out;
  if (range.size() < lookback + horizon) {
    if (warn) {
      *warn << "warning: split of " << range.size() << " rows is shorter than L+T = " << lookback + horizon
            << "; no windows\n";
    }
    return out;
  }
  for (std::size_t t = range.begin; t + lookback + horizon <= range.end; t += stride) out.push_back(t);
  return out;
}

template <typename T>
struct WindowBatch {
  Tensor<T> inputs;   // (B, L, M)
  Tensor<T> targets;  // (B, T, M)
  std::vector<std::size_t> starts;
};

template <typename T>
WindowBatch<T> make_batch(const SeriesTable& table, std::span<const std::size_t> starts, std::size_t lookback,
                          std::size_t horizon) {
  const std::size_t b = starts.size(), m = table.width();
  std::vector<T> x(b * lookback * m), y(b * horizon * m);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t t0 = starts[i];
    if (t0 + lookback + horizon > table.rows()) throw DataError("window starting at row " + std::to_string(t0) + " overruns the table");
    for (std::size_t t = 0; t < lookback; ++t)
      for (std::size_t c = 0; c < m; ++c) x[(i * lookback + t) * m + c] = static_cast<T>(table.at(t0 + t, c));
    for (std::size_t t = 0; t < horizon; ++t)
      for (std::size_t c = 0; c < m; ++c) y[(i * horizon + t) * m + c] = static_cast<T>(table.at(t0 + lookback + t, c));
  }
  return {Tensor<T>({b, lookback, m}, std::move(x)), Tensor<T>({b, horizon, m}, std::move(y)),
          std::vector<std::size_t>(starts.begin(), starts.end())};
}

/// (B, L, M) -> (B * M, L, 1); sample order is (b0c0, b0c1, ..., b1c0, ...).
template <typename T>
Tensor<T> channel_flatten(const Tensor<T>& x) {
  if (x.rank() != 3) throw DimensionError("channel_flatten: expected (B, L, M), got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), l = x.dim(1), m = x.dim(2);
  if (m == 1) return reshape(x, {b, l, 1});
  return reshape(permute(x, {0, 2, 1}), {b * m, l, 1});
}

/// Inverse of channel_flatten for `channels` channels.
template <typename T>
Tensor<T> channel_unflatten(const Tensor<T>& x, std::size_t channels) {
  if (x.rank() != 3 || x.dim(2) != 1 || channels == 0 || x.dim(0) % channels != 0) {
    throw DimensionError("channel_unflatten: cannot regroup " + shape_str(x.shape()) + " into " +
                         std::to_string(channels) + " channels");
  }
  const std::size_t b = x.dim(0) / channels, l = x.dim(1);
  if (channels == 1) return reshape(x, {b, l, 1});
  return permute(reshape(x, {b, channels, l}), {0, 2, 1});
}

}  // namespace kunet
