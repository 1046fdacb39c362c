#pragma once

#include <stdexcept>
#include <string>

namespace mofit {

// Base class for all library errors. CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerically invalid input (parallel 6D columns, zero-variance point set, ...).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

// Array dimensions do not match the expected layout.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or combination.
class BadConfig : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Bad magic, version, or truncated container.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Damped normal system not positive-definite.
class SingularSystem : public Error {
 public:
  using Error::Error;
};

// Perspective projection of a point with z <= 1e-6.
class BehindCamera : public Error {
 public:
  using Error::Error;
};

// Mixture weights/covariances invalid.
class BadPrior : public Error {
 public:
  using Error::Error;
};

// A solver or training step produced NaN/inf.
class NonFiniteState : public Error {
 public:
  using Error::Error;
};

}  // namespace mofit
