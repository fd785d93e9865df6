#pragma once

#include <stdexcept>
#include <string>

namespace dne {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or weight-vector dimensions that do not compose.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation's precondition (bad label, empty set, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity appeared in a computation; the message names the layer.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed OPR1/DNEW file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace dne
