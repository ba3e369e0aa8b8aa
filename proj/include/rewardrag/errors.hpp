#pragma once

#include <stdexcept>
#include <string>

namespace rewardrag {

/// Base class for all errors raised by the pipeline.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed arguments: wrong shapes, empty inputs, out-of-range parameters.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

/// Inputs that are syntactically fine but mathematically unusable
/// (e.g. a zero-norm vector handed to cosine similarity).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// An encoder plugin failed; carries the plugin's own message.
class EncoderError : public Error {
 public:
  using Error::Error;
};

/// Bad or missing configuration (unknown keys, absent template files, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Persisted payload is corrupt (checksum mismatch, truncation).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Persisted payload has an unknown container version or magic.
class UnsupportedFormatError : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked before its prerequisites were satisfied.
class InvalidStateError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared where finite math was required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// HTTP / network failure talking to an external service.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// A response could not be parsed into the expected structure.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage input produced by an earlier stage is missing.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace rewardrag
