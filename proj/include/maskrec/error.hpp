#pragma once

#include <stdexcept>
#include <string>

namespace maskrec {

// Exception families map one-to-one onto CLI exit codes (see cli.hpp).

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a labelled-sampling protocol cannot be satisfied (e.g. a class
/// has no windows).
class ProtocolError : public DataError {
 public:
  using DataError::DataError;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or mismatched checkpoint / report file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace maskrec

namespace maskrec {

/// A loss was requested over an empty cell set.
class UndefinedLossError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace maskrec
