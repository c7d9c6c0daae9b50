#pragma once

#include <stdexcept>
#include <string>

namespace clap {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for the requested op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A forward value or gradient became NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent dataset input.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration; `field()` names the offending key when known.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& reason)
      : Error(field.empty() ? reason : field + ": " + reason), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace clap
