#pragma once

#include <stdexcept>
#include <string>

namespace speechformer {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up.
class ShapeError : public Error {
  public:
    using Error::Error;
};

class InvalidArgument : public Error {
  public:
    using Error::Error;
};

/// A ModelConfig (or config file) violates its invariants.
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// A loss or intermediate became non-finite.
class NumericError : public Error {
  public:
    using Error::Error;
};

/// An API was called out of order (e.g. backward without a recorded forward).
class UsageError : public Error {
  public:
    using Error::Error;
};

/// Malformed FMAT / SFWT / config file contents.
class FormatError : public Error {
  public:
    using Error::Error;
};

/// Two cost reports cannot be compared.
class InvalidComparison : public Error {
  public:
    using Error::Error;
};

} // namespace speechformer
