#pragma once

#include <stdexcept>
#include <string>

namespace corner_ma {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Sampled data does not cover the requested region.
class CoverageError : public Error {
 public:
  using Error::Error;
};

/// A linear operator is singular at a resonant exponent.
class ResonanceError : public Error {
 public:
  using Error::Error;
};

/// Iterative or adaptive numerics failed to reach the requested accuracy.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double achieved)
      : Error(what), achieved_(achieved) {}
  double achieved() const noexcept { return achieved_; }

 private:
  double achieved_;
};

/// Fitting was impossible on the supplied data (noise floor, sign changes).
class FitError : public Error {
 public:
  using Error::Error;
};

}  // namespace corner_ma
