#pragma once

#include <stdexcept>
#include <string>

namespace qsi {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside an operation's mathematical or physical domain.
/// The CLI maps every DomainError to exit code 4.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or stream failure (CLI exit code 3).
class IoError : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Truncated distribution leaves too much probability above n_max for moments.
class TailTooHeavy : public DomainError {
 public:
  using DomainError::DomainError;
};

class UndefinedG2 : public DomainError {
 public:
  using DomainError::DomainError;
};

class EmptyHistogram : public DomainError {
 public:
  using DomainError::DomainError;
};

/// A required class is missing from a training split.
class DegenerateDataset : public DomainError {
 public:
  using DomainError::DomainError;
};

/// File contents do not match the expected layout (wrong width, bad label...).
class SchemaError : public DomainError {
 public:
  using DomainError::DomainError;
};

class NoForeground : public DomainError {
 public:
  using DomainError::DomainError;
};

class FitDiverged : public DomainError {
 public:
  using DomainError::DomainError;
};

class InsufficientSupport : public DomainError {
 public:
  using DomainError::DomainError;
};

class ZeroMean : public DomainError {
 public:
  using DomainError::DomainError;
};

}  // namespace qsi
