#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace bayestomo {

/// Violated precondition on a parameter (non-positive width, empty beam set, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A point was evaluated outside the imaging domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A factorization failed or a covariance is not positive semidefinite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The posterior precision is singular: some direction of the prior null
/// space is not probed by any beam, so there is no unique MAP.
class DegeneracyError : public NumericError {
 public:
  DegeneracyError(const std::string& what, Eigen::VectorXd direction)
      : NumericError(what), direction_(std::move(direction)) {}

  /// Offending direction in parameter space; empty when unknown.
  const Eigen::VectorXd& direction() const noexcept { return direction_; }

 private:
  Eigen::VectorXd direction_;
};

/// The prior has a structure the requested operation does not handle
/// (e.g. a multi-dimensional null space for the Tikhonov limit).
class UnsupportedPriorError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace bayestomo
