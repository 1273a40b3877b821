#pragma once

#include <stdexcept>
#include <string>

namespace bdg {

// Error classes map onto the CLI exit codes: usage 1, data 2, numeric 3.

/// Tensor shape or configuration contract violated.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad input data: missing file, malformed raster, label out of range.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN or otherwise non-finite value where a finite one is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration document or option value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Misuse of the gradient tape (double backward, detached loss).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace bdg
