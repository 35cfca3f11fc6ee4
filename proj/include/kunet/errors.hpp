// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kunet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents or layouts do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid plan, kernel spec, variant, or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset is unusable (too short, non-monotonic timestamps, empty split).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A CSV cell could not be parsed. Row numbers are 1-based file lines.
class IngestError : public DataError {
 public:
  IngestError(const std::string& what, std::size_t row, std::size_t column)
      : DataError(what), row_(row), column_(column) {}
  std::size_t row() const { return row_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

/// API misuse such as backward() on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Training aborted, e.g. on a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace kunet
