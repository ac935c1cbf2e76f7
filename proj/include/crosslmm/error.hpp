#pragma once

#include <stdexcept>
#include <string>

namespace crosslmm {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller violated a precondition that is not a shape problem.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Sequence would exceed max_seq.
class SequenceLengthError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced while the tape runs in checked mode.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Training loss became NaN/Inf.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace crosslmm
