#pragma once

#include <stdexcept>
#include <string>

namespace ride {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or dimensions do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file failed, or its content is malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ride
