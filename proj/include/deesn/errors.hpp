#pragma once

#include <stdexcept>
#include <string>

namespace deesn {

// Base for every failure raised by the library. Subclasses map onto the CLI
// exit-code families (config / numeric / io).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Invalid input data: malformed files, mismatched dimensions, bad values.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

class NonFiniteError : public DataError {
 public:
  using DataError::DataError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class RankError : public NumericError {
 public:
  using NumericError::NumericError;
};

class ConvergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

class BlowUpError : public NumericError {
 public:
  BlowUpError(const std::string& what, long step) : NumericError(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace deesn
