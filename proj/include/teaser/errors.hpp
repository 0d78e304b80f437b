#pragma once

#include <stdexcept>
#include <string>

namespace teaser {

// Base for every failure raised by the library. The CLI maps the concrete
// subclasses onto exit codes (data errors -> 2, numeric failures -> 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// A file written by an incompatible format version.
class IncompatibleVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

} // namespace teaser
