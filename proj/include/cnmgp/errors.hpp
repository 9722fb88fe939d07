#pragma once

#include <stdexcept>
#include <string>

namespace cnmgp {

/// Base of every exception raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or malformed caller input; maps to CLI exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class LayoutMismatch : public Error {
 public:
  using Error::Error;
};

/// Problems with data content; CLI exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t row, std::size_t column)
      : DataError(what + " (row " + std::to_string(row) + ", column " + std::to_string(column) + ")"),
        row_(row),
        column_(column) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

class NoObservedEntries : public DataError {
 public:
  using DataError::DataError;
};

class DegenerateOutput : public DataError {
 public:
  using DataError::DataError;
};

class EmptyBatch : public DataError {
 public:
  using DataError::DataError;
};

class EmptyTestSet : public DataError {
 public:
  using DataError::DataError;
};

/// Numerical breakdown; CLI exit code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NonPositiveLengthscale : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NonFinite : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DegenerateCovariance : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace cnmgp
