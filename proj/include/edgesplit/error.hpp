#pragma once

#include <stdexcept>
#include <string>

namespace edgesplit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration / input file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A data object violates one of its stated invariants.
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the operation's domain (bad index, mismatched lengths).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Positive data volume over a link with zero rate.
class InfeasibleLinkError : public Error {
 public:
  using Error::Error;
};

/// A deployment macro-action exceeds a server's storage. Always a masking bug.
class StorageOverflowError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace edgesplit
