#pragma once

#include <stdexcept>
#include <string>

namespace metacd {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad configuration, bad input file, or violated precondition (CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Failure while running (training divergence, missing checkpoint, ...; CLI exit code 2).
class RuntimeError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape disagreement; message names the offending op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace metacd
