#pragma once

#include <stdexcept>
#include <string>

namespace estr {

// Base class for all library errors so callers can catch everything at once.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operands with incompatible or invalid shapes; message names the op and shapes.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Caller violated a documented precondition (bad budget, empty probe set, ...).
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Non-finite values, domain violations, failed normalization checks.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// File-system level failures (open/read/write).
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Malformed config or trace text; message carries file/line context.
struct ParseError : Error {
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Checkpoint loading failures are distinguishable by type.
struct VersionError : IoError {
  explicit VersionError(const std::string& msg) : IoError(msg) {}
};
struct TruncationError : IoError {
  explicit TruncationError(const std::string& msg) : IoError(msg) {}
};
struct ChecksumError : IoError {
  explicit ChecksumError(const std::string& msg) : IoError(msg) {}
};

}  // namespace estr
