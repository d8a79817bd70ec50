#pragma once

#include <stdexcept>
#include <string>

namespace capro {

// Each category maps onto a distinct CLI exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Zero-norm vectors, empty means and similar inputs with no defined result.
class DegenerateInputError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace capro
