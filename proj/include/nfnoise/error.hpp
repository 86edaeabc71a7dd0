#pragma once

#include <stdexcept>
#include <string>

namespace nfnoise {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that cannot be combined.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Arguments outside an operation's mathematical domain (log of a
/// non-positive value, division by zero, singular matrix, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or model description.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing data on disk.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace nfnoise
