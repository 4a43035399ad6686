#pragma once

#include <stdexcept>
#include <string>

namespace hemafuse {

// Tensor or vector dimensions do not line up.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A value is outside the domain an operation accepts.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// An object was used in the wrong lifecycle state (e.g. backward before forward).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Missing/undecodable inputs and missing upstream artifacts.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DecodeError : DataError {
  using DataError::DataError;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : NumericalError {
  TrainingError(const std::string& what, int epoch, int batch)
      : NumericalError(what), epoch(epoch), batch(batch) {}
  int epoch;
  int batch;
};

}  // namespace hemafuse
