#pragma once

#include <stdexcept>
#include <string>

namespace tdc {

// Base of every error thrown by the library. Each subclass maps to one CLI
// exit code (see pipeline.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A scalar or structural parameter is outside its admissible range.
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

// Input data violates a precondition (shape mismatch, out-of-bounds point...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Components were configured inconsistently with each other.
class InvalidConfiguration : public Error {
 public:
  using Error::Error;
};

// A file exists but its contents cannot be decoded.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure; the message carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

// A required dataset, checkpoint or report is absent.
class MissingArtifact : public Error {
 public:
  using Error::Error;
};

// A non-finite loss or activation was produced.
class NumericFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace tdc
