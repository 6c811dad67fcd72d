#pragma once

#include <stdexcept>
#include <string>

namespace survkit {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (bad rows, overlapping episodes, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid model or analysis configuration (unknown column, bad option, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A fit or solver failed (rank deficiency, non-convergence, ...).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Coefficient diverges because the likelihood keeps increasing along one direction.
class MonotoneLikelihood : public NumericalError {
 public:
  MonotoneLikelihood(std::string coefficient, int direction)
      : NumericalError("monotone likelihood: coefficient '" + coefficient + "' diverges to " +
                       (direction > 0 ? "+inf" : "-inf")),
        coefficient_(std::move(coefficient)),
        direction_(direction) {}

  const std::string& coefficient() const noexcept { return coefficient_; }
  int direction() const noexcept { return direction_; }

 private:
  std::string coefficient_;
  int direction_;
};

}  // namespace survkit
