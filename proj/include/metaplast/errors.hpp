#pragma once

#include <stdexcept>
#include <string>

namespace metaplast {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class FrozenTapeError : public Error {
 public:
  FrozenTapeError() : Error("tape is frozen: record() called after backward()") {}
};

class NonScalarLossError : public Error {
 public:
  using Error::Error;
};

class NonDeterministicProgramError : public Error {
 public:
  using Error::Error;
};

class IndexingError : public Error {
 public:
  using Error::Error;
};

// Bad or inconsistent configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing, malformed or undecodable input data (CLI exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN or infinity in a loss or gradient (CLI exit code 4).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CorruptFileError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Argument outside a function's domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

class MissingGradientError : public Error {
 public:
  using Error::Error;
};

}  // namespace metaplast
