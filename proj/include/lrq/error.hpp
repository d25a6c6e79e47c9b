#pragma once

#include <stdexcept>
#include <string>

namespace lrq {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or index inconsistencies.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Division by zero, non-finite values, singular systems.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or corrupted files and datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration keys or values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A checked property or invariant did not hold.
class VerificationError : public Error {
 public:
  using Error::Error;
};

}  // namespace lrq
