#pragma once

#include <stdexcept>
#include <string>

namespace cpr {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent user input (shapes, labels, parameters, files).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A numerical routine could not produce a result (factorization failures,
/// non-finite values).
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IndefiniteCovariance : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Raised by EP when the truncated moments cannot be formed at an iterate.
class EpFailure : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

namespace detail {
inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidInput(what);
}
}  // namespace detail

}  // namespace cpr
