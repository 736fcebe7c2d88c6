#pragma once

#include <stdexcept>
#include <string>

namespace distilshield {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration (layer chains, config files).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor or model dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A numeric parameter is outside its documented range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Empty or otherwise unusable input data.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A file does not follow the expected on-disk format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file failed (missing, truncated, unwritable).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Two inputs that must agree do not (e.g. image and label counts).
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

/// Gate calibration impossible with the given data.
class CalibrationError : public Error {
 public:
  using Error::Error;
};

/// A value became NaN or infinite.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace distilshield
