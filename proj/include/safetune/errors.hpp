#pragma once

#include <stdexcept>
#include <string>

namespace safetune {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes disagree, an index is out of range, or a value violates a type invariant.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A generator or solver configuration cannot be satisfied.
class InvalidConfig : public Error {
 public:
  using Error::Error;
};

/// Operation is not defined for this model variant or problem size.
class Unsupported : public Error {
 public:
  using Error::Error;
};

/// An objective evaluated to NaN or infinity where a finite value is required.
class NumericFailure : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. The message carries the offending field path.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace safetune
