#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace ldlva {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// An invalid value for a named field (spec, config, hyperparameter).
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Invalid or inconsistent configuration (flag combinations, unknown keys).
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Malformed input file. line() is 1-based; 0 when not line-oriented.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(line == 0 ? message : "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public DataError {
 public:
  using DataError::DataError;
};

class NoAlternativeError : public DataError {
 public:
  using DataError::DataError;
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered; epoch/step are -1 when not raised by the training loop.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message, long epoch = -1, long step = -1)
      : Error(message), epoch_(epoch), step_(step) {}

  long epoch() const noexcept { return epoch_; }
  long step() const noexcept { return step_; }

 private:
  long epoch_;
  long step_;
};

class UnsupportedVersionError : public ParseError {
 public:
  explicit UnsupportedVersionError(const std::string& message) : ParseError(0, message) {}
};

class InternalStateError : public Error {
 public:
  using Error::Error;
};

}  // namespace ldlva
