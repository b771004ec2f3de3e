#pragma once

#include <stdexcept>
#include <string>

namespace constyle {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes or indivisible dimensions.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Value outside an operation's mathematical domain (log of non-positive, non-finite result).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation precondition (non-scalar loss, iteration out of range).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in a state that cannot serve it (empty queue).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Parameter sets that should correspond do not.
class ModelError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or malformed input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Unsupported image encoding (non-PNG, non-RGB).
class ImageFormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite loss or gradient during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace constyle
