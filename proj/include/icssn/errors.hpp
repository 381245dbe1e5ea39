#pragma once

#include <stdexcept>
#include <string>

namespace icssn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or raster dimensions violate an operation's shape contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Raster and mask (or prediction and truth) are not spatially aligned.
class AlignmentError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

// An input violated a documented precondition (e.g. non-unit feature vectors).
class ContractError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace icssn
