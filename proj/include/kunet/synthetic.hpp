// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic series: a pure sine for convergence checks and an
// hourly transformer-load surrogate with the ETT column schema.
#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "kunet/data.hpp"
#include "kunet/random.hpp"

namespace kunet {

/// One channel, x_t = amplitude * sin(2*pi*t / period + phase), hourly stamps.
inline SeriesTable sine_table(std::size_t rows, double period, double amplitude = 1.0, double phase = 0.0) {
  SeriesTable t;
  t.time_column = "t";
  t.channels = {"x"};
  for (std::size_t i = 0; i < rows; ++i) {
    t.timestamps.push_back(static_cast<std::int64_t>(i) * 3600);
    t.values.push_back(amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / period + phase));
  }
  return t;
}

/// Columns date, HUFL, HULL, MUFL, MULL, LUFL, LULL, OT at hourly steps from
/// 2016-07-01. Each channel is a level plus daily and weekly cycles, a slow
/// AR(1) drift and white noise; OT also follows a smoothed copy of the loads.
inline SeriesTable ett_surrogate(std::size_t rows, std::uint64_t seed = 2016) {
  static const char* names[] = {"HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"};
  const double level[] = {6.0, 2.0, 4.0, 1.0, 3.0, 1.0, 15.0};
  const double daily[] = {2.0, 0.6, 1.6, 0.5, 1.0, 0.3, 3.0};
  const double weekly[] = {0.8, 0.2, 0.6, 0.2, 0.5, 0.1, 1.5};
  const double noise[] = {0.4, 0.2, 0.35, 0.2, 0.25, 0.1, 0.3};
  constexpr std::int64_t start = 16983 * 86400;  // 2016-07-01T00:00:00Z

  Rng rng(seed);
  SeriesTable t;
  t.time_column = "date";
  for (auto* n : names) t.channels.emplace_back(n);
  std::vector<double> drift(7, 0.0), phase(7);
  for (auto& p : phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double load_avg = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double h = static_cast<double>(i);
    t.timestamps.push_back(start + static_cast<std::int64_t>(i) * 3600);
    double load = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      drift[c] = 0.995 * drift[c] + 0.08 * rng.normal();
      double v = level[c] + daily[c] * std::sin(2.0 * std::numbers::pi * h / 24.0 + phase[c]) +
                 weekly[c] * std::sin(2.0 * std::numbers::pi * h / 168.0 + phase[c]) + drift[c] * level[c] * 0.3 +
                 noise[c] * rng.normal();
      if (c == 6) {
        v += 0.4 * (load_avg - 17.0);
      } else {
        load += v;
      }
      t.values.push_back(v);
    }
    load_avg = 0.9 * load_avg + 0.1 * load;
  }
  return t;
}

/// Writes a table as CSV with ISO datetime stamps.
inline void write_csv(std::ostream& os, const SeriesTable& t) {
  os << t.time_column;
  for (const auto& c : t.channels) os << ',' << c;
  os << '\n';
  char buf[64];
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const std::int64_t s = t.timestamps[r];
    const std::int64_t days = s >= 0 ? s / 86400 : (s - 86399) / 86400;
    const std::int64_t sec = s - days * 86400;
    const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02lld:%02lld:%02lld", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long long>(sec / 3600), static_cast<long long>(sec / 60 % 60),
                  static_cast<long long>(sec % 60));
    os << buf;
    for (std::size_t c = 0; c < t.width(); ++c) {
      const auto res = std::to_chars(buf, buf + sizeof buf, t.at(r, c));
      os << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    os << '\n';
  }
}

}  // namespace kunet
