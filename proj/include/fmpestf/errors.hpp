#pragma once

#include <stdexcept>
#include <string>

namespace fmpestf {

// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated (odd split length, disabled stage, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced, or a finite-difference probe failed to evaluate.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Lookup index outside a table.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Message carries line/row context.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fmpestf
