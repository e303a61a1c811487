#pragma once

#include <stdexcept>
#include <string>

namespace splatkit {

// Error taxonomy mapped to CLI exit codes: usage -> 1, data/config -> 2,
// numerical failure -> 3.
class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public DataError {
public:
  using DataError::DataError;
};

class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DegenerateRotationError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class SingularCovarianceError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

}  // namespace splatkit
