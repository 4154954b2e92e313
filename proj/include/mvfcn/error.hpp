#pragma once

#include <stdexcept>
#include <string>

namespace mvfcn {

/// Base class of every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer shapes that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or command-line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or inconsistent images and datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Corrupt, incompatible or mismatched checkpoints.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace mvfcn
