#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rmrouter {

// Root of every error thrown by the library. Each subclass corresponds to one
// failure category callers are expected to distinguish.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Vector or matrix shapes disagree.
class DimError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (non-positive variance, bad shape, unknown name).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Invalid caller-supplied data (empty text, unlabeled pair, unknown pair id).
class InputError : public Error {
 public:
  using Error::Error;
};

// A linear system could not be solved even after regularization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Training cannot proceed (e.g. no disagreement samples for the BT head).
class TrainError : public Error {
 public:
  using Error::Error;
};

// Covariance failed Cholesky factorization; pivot() is the zero-based index of
// the first non-positive pivot.
class NonPsdError : public Error {
 public:
  NonPsdError(std::size_t pivot, const std::string& what)
      : Error(what), pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

// Malformed file. line() is one-based; 0 when the error is not tied to a line.
class FormatError : public Error {
 public:
  FormatError(std::size_t line, const std::string& what)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace rmrouter
