#pragma once

#include <stdexcept>
#include <string>

namespace cross360 {

enum class ErrorKind {
  Validation,  // bad config, bad arguments, shape/index mismatch
  Io,
  Numeric,     // divergence, failed gradient checks
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

class ShapeError : public ValidationError {
 public:
  explicit ShapeError(const std::string& what) : ValidationError("shape error: " + what) {}
};

class IndexError : public ValidationError {
 public:
  explicit IndexError(const std::string& what) : ValidationError("index error: " + what) {}
};

class ConfigError : public ValidationError {
 public:
  explicit ConfigError(const std::string& what) : ValidationError("config error: " + what) {}
};

/// Raised when a reduction has no valid pixels to work with.
class DegenerateInputError : public ValidationError {
 public:
  explicit DegenerateInputError(const std::string& what)
      : ValidationError("degenerate input: " + what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

}  // namespace cross360
