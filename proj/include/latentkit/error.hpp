#pragma once

#include <stdexcept>
#include <string>

namespace latentkit {

// Base of every error the library raises. The CLI maps the subclasses onto
// process exit codes (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 2; }
};

// Malformed arguments: wrong shapes, out-of-range parameters, bad values.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Files that cannot be opened or parsed.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Rank deficiency, non-convergence, non-finite gradients.
class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

// Classifier training data that contains only one label.
class SingleClassError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace latentkit
