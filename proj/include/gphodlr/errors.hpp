#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gphodlr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or non-finite input data, or an invalid configuration value.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a function (e.g. K_nu(z) with z <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(const std::string& what, std::size_t expected, std::size_t got)
      : Error(what + ": expected dimension " + std::to_string(expected) + ", got " +
              std::to_string(got)) {}
};

/// Requested a derivative with respect to a parameter that is not estimable (e.g. nu).
class UnsupportedParameter : public Error {
 public:
  using Error::Error;
};

/// The block tree asks for more leaves than there are points.
class LevelTooDeep : public Error {
 public:
  using Error::Error;
};

/// A dense operation was requested above the configured size cap.
class CapExceeded : public Error {
 public:
  CapExceeded(const std::string& what, std::size_t n, std::size_t cap)
      : Error(what + ": size " + std::to_string(n) + " exceeds cap " + std::to_string(cap)) {}
};

/// A Cholesky factorization failed even after jitter escalation.
///
/// `block` identifies the failing block: a leaf index, a tree node, or -1 for
/// the landmark core matrix and dense matrices.
class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(const std::string& what, long block = -1)
      : Error(what + (block >= 0 ? " (block " + std::to_string(block) + ")" : std::string{})),
        block_(block) {}

  long block() const noexcept { return block_; }

 private:
  long block_;
};

}  // namespace gphodlr
