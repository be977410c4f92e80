#pragma once

#include <stdexcept>
#include <string>

namespace vedet {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidCameraError : public Error {
 public:
  using Error::Error;
};

class BehindCameraError : public Error {
 public:
  using Error::Error;
};

/// Bad user configuration (unknown key, out-of-range value, impossible constraint).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. The message carries line/field diagnostics.
class ParseError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersionError : public ParseError {
 public:
  using ParseError::ParseError;
};

/// Inconsistent tensor shapes or prediction layouts.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or other failure during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace vedet
