#pragma once

#include <stdexcept>
#include <string>

namespace carnas {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced at an op boundary, or a loss that diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent graph data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, truncated or incompatible checkpoint.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the tape or optimizer lifecycle.
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace carnas
