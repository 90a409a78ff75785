#pragma once

#include <stdexcept>
#include <string>

namespace cascade {

// Operation called with arguments violating its preconditions.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid experiment, generator or learner configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure (singular system, degenerate fit).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mondrian quantile split produced an unusable binning.
class StratificationError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Too few usable out-of-bag points to calibrate J+aB.
class CalibrationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace cascade
