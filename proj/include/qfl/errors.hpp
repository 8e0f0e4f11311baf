#pragma once

#include <stdexcept>
#include <string>

namespace qfl {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration or violated precondition (bad architecture,
// empty dataset, out-of-range knob, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor/batch dimensions do not match what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed serialized input (bad magic, garbled structure).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Declared lengths inconsistent with the actual byte count.
class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Unknown or unsupported wire-format version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Key material unusable for the requested operation (too short, id mismatch).
class KeyError : public Error {
 public:
  using Error::Error;
};

// Not enough key bits left; caller should run additional QKD sessions.
class KeyExhaustionError : public KeyError {
 public:
  using KeyError::KeyError;
};

// Integrity tag does not match the recovered plaintext.
class TamperError : public Error {
 public:
  using Error::Error;
};

// Violation of a protocol rule (reused key id, mismatched round, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Internal consistency check failed (stale cache, impossible state).
class InternalError : public Error {
 public:
  using Error::Error;
};

// Filesystem/IO failure, with the offending path in the message.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace qfl
