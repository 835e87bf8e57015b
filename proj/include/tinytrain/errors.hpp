#pragma once

#include <stdexcept>
#include <string>

namespace tinytrain {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Layer graph does not line up (shapes, plan entries, layer kinds).
class StructuralError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or degenerate numerics (zero-norm vectors, NaN gradients).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid user-facing parameter (width multiplier, ratio, schedule).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(int line, const std::string& what)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

enum class CheckpointErrorKind { bad_magic, version_mismatch, truncated, shape_mismatch, malformed, io };

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
  CheckpointErrorKind kind() const noexcept { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

}  // namespace tinytrain
