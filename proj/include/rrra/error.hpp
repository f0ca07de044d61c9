#pragma once

#include <stdexcept>
#include <string>

namespace rrra {

/// Base of every error this library throws. Subclasses map onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyText : public Error {
 public:
  using Error::Error;
};

class DegenerateVector : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Missing or malformed input files, corrupted checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or exploding loss during training.
class NumericalAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace rrra
