#pragma once

#include <stdexcept>
#include <string>

namespace lossless {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Matrix handed to vee() is not skew-symmetric within tolerance.
class NotSkew : public Error {
 public:
  using Error::Error;
};

/// Matrix cannot be projected onto SO(3) (det <= 0) or fails rotation checks.
class Degenerate : public Error {
 public:
  using Error::Error;
};

/// Stiffness matrix of the potential is not symmetric.
class AsymmetricGain : public Error {
 public:
  using Error::Error;
};

/// Inconsistent physical or numerical parameter (negative mass, bad step...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A control law threw while the simulation loop was running.
class ControlLawFailure : public Error {
 public:
  ControlLawFailure(long step, const std::string& what)
      : Error("control law failed at step " + std::to_string(step) + ": " + what), step_(step) {}

  [[nodiscard]] long step() const { return step_; }

 private:
  long step_;
};

/// Objective or constraint evaluated to NaN/Inf at the starting point.
class NonFiniteObjective : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

/// Scenario document is well-formed but a field is missing or out of range.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}

  [[nodiscard]] const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Two traces cannot be compared record by record.
class GridMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace lossless
