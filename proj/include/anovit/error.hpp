#pragma once

#include <stdexcept>
#include <string>

namespace anovit {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A model, data or run configuration violates its invariants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Convolution / upsampling geometry cannot produce a valid output.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Persisted data (checkpoint, manifest, image) is malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure; the message always carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

// A value that must be finite is NaN or infinite.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace anovit
