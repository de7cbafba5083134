#pragma once

#include <stdexcept>
#include <string>

namespace ptrorder {

// Base of every error raised by the library. The CLI prints what() after a
// fixed "error:" prefix, so messages stay on one line.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class InvalidMaskError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class InvariantError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A request exceeds a hard size limit (e.g. exhaustive search on long inputs).
class GuardError : public Error {
 public:
  using Error::Error;
};

}  // namespace ptrorder
