#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace raresim {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (dimension mismatch, bad option, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Malformed external input: CSV, JSON, command-line values.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Probability mass of a rectangle is below what double precision can carry.
class NumericallyZeroRegion : public Error {
 public:
  using Error::Error;
};

/// Rejection sampling from a truncated Gaussian would accept too rarely.
class DegenerateTruncation : public Error {
 public:
  using Error::Error;
};

/// EM fitting failed (dying component, non-finite likelihood, ...).
class FitError : public Error {
 public:
  using Error::Error;
};

class DyingComponent : public FitError {
 public:
  DyingComponent(int component, double weight);
  int component() const { return component_; }

 private:
  int component_;
};

/// A labelled outcome contradicts monotonicity of the rare-event set.
/// Both points are in canonical (mask-applied) coordinates.
class NonMonotoneOutcome : public Error {
 public:
  NonMonotoneOutcome(const Eigen::VectorXd& rare, const Eigen::VectorXd& safe);
  /// Same error with `context` prepended to the message.
  NonMonotoneOutcome(const std::string& context, const NonMonotoneOutcome& inner);
  const Eigen::VectorXd& rare_point() const { return rare_; }
  const Eigen::VectorXd& safe_point() const { return safe_; }

 private:
  Eigen::VectorXd rare_;
  Eigen::VectorXd safe_;
};

/// An iterative numerical solver did not converge or produced garbage.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, Eigen::VectorXd last_iterate = {});
  const Eigen::VectorXd& last_iterate() const { return last_; }

 private:
  Eigen::VectorXd last_;
};

std::string format_vector(const Eigen::VectorXd& v);

}  // namespace raresim
