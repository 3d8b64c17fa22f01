#pragma once

#include <stdexcept>
#include <string>

namespace rankvqa {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape / dimension violations. Messages name the offending shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Violated call contract (bad target index, empty batch, missing gradient, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (dropout rate >= 1, d_model not divisible by heads, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; messages name the line where parsing failed.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite arithmetic was required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Synthetic data generation could not satisfy its constraints.
class GenerationError : public Error {
 public:
  using Error::Error;
};

// Filesystem / IO failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace rankvqa
