#pragma once

#include <stdexcept>
#include <string>

namespace mbdg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or dimensions of operands do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An operation produced NaN or Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Caller supplied an argument outside the operation's domain.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// No grid point satisfies every constraint.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// Configuration file is malformed or names an out-of-range value.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace mbdg
