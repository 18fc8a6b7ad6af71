#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cll {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid structural configuration (group counts, depths, empty provider sets).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Scalar argument outside its admissible interval (e.g. alpha outside [0,1]).
class RangeError : public Error {
 public:
  using Error::Error;
};

// Backward pass could not find what the forward pass should have recorded.
class TapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered where finite values are required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Gradient oracle could not produce a trustworthy comparison.
class OracleError : public Error {
 public:
  using Error::Error;
};

class StoreMismatchError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace cll
