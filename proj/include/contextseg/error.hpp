#pragma once

#include <stdexcept>
#include <string>

namespace contextseg {

// Process exit codes shared by every subcommand.
enum class ExitCode : int {
  kOk = 0,
  kIo = 2,
  kNumerical = 3,
  kMismatch = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Incompatible tensor shapes, or a shape that cannot be represented.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what)
      : Error(ExitCode::kMismatch, "shape error: " + what) {}
};

// Input data violates its domain (label out of range, bad pixel values).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what)
      : Error(ExitCode::kMismatch, "data error: " + what) {}
};

// An API was called out of order (backward without forward, early step).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what)
      : Error(ExitCode::kMismatch, "contract violation: " + what) {}
};

class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& what)
      : Error(ExitCode::kMismatch, "invalid argument: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ExitCode::kMismatch, "config error: " + what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what)
      : Error(ExitCode::kIo, "i/o error: " + what) {}
};

// Non-finite loss or gradient.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ExitCode::kNumerical, "numerical failure: " + what) {}
};

}  // namespace contextseg
