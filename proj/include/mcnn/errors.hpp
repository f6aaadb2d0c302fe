#pragma once

#include <stdexcept>
#include <string>

namespace mcnn {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller passed arguments that violate an operation's preconditions
// (bad shapes, out-of-range hyperparameters, unknown identifiers).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// The dataset on disk does not have the expected structure, or an input
// file cannot be decoded.
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values showed up where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A persisted artifact failed integrity checks or does not match the
// configured architecture.
class CorruptFileError : public Error {
 public:
  using Error::Error;
};

class IncompatibleFileError : public CorruptFileError {
 public:
  using CorruptFileError::CorruptFileError;
};

}  // namespace mcnn
