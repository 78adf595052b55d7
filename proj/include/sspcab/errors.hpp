#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sspcab {

/// Base of every error raised by the library. The C API maps each subclass
/// onto a distinct status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, training or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A command was invoked without a required input, or with an input that
/// makes the request meaningless (e.g. an empty score file).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Well-formed file written by an incompatible format version.
class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Data violates the one-class protocol (anomalies in the training split).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given input, e.g. AUC over a single class.
class MetricError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity encountered during training or gradient checking.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace sspcab
