#pragma once

#include <stdexcept>
#include <string>

namespace msif {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer extents do not line up (messages name both shapes).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An argument value is outside its contract (gamma <= 0, degenerate box, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// Config file cannot be parsed or fails validation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A checkpoint does not match the requested model architecture.
class IncompatibleCheckpointError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class MissingFileError : public IoError {
 public:
  using IoError::IoError;
};

class CorruptFileError : public IoError {
 public:
  using IoError::IoError;
};

class VersionMismatchError : public IoError {
 public:
  using IoError::IoError;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Command line misuse (maps to exit code 1 in the CLI).
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace msif
