#pragma once

#include <stdexcept>
#include <string>

namespace comvt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated a precondition (bad shape, index out of range, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A computation produced or consumed a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or record.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Data-level problem that is not a syntax error (insufficient pool, missing file).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid run or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint file does not match the expected format or shapes.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace comvt
