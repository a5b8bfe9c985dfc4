#pragma once

#include <stdexcept>
#include <string>

namespace terralabel {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A loss or gradient became non-finite during optimisation.
class TrainingDivergence : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file, or an unexpected magic/version.
class FormatError : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace terralabel
