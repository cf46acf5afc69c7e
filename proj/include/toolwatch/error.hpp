#pragma once

#include <stdexcept>
#include <string>

namespace toolwatch {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input record; field() names the offending field.
class ParseError : public Error {
 public:
  ParseError(std::string field, const std::string& message)
      : Error("parse error in field '" + field + "': " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Remote backend failure that may succeed on retry.
class TransportError : public Error {
 public:
  using Error::Error;
};

// A backend returned data that violates its own contract (dimension, finiteness).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Metric requested on input where it is not defined (e.g. AUROC with one class).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, double gradient_norm)
      : Error(message + " (gradient norm " + std::to_string(gradient_norm) + ")"),
        gradient_norm_(gradient_norm) {}
  double gradient_norm() const noexcept { return gradient_norm_; }

 private:
  double gradient_norm_;
};

}  // namespace toolwatch
