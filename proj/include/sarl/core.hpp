#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace sarl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using ComplexVector = Eigen::VectorXcd;
using Index = Eigen::Index;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of two inputs disagree along a named axis.
class DimensionError : public Error {
 public:
  DimensionError(std::string axis, Index expected, Index actual)
      : Error("dimension mismatch on axis '" + axis + "': expected " +
              std::to_string(expected) + ", got " + std::to_string(actual)),
        axis_(std::move(axis)),
        expected_(expected),
        actual_(actual) {}

  const std::string& axis() const noexcept { return axis_; }
  Index expected() const noexcept { return expected_; }
  Index actual() const noexcept { return actual_; }

 private:
  std::string axis_;
  Index expected_;
  Index actual_;
};

/// A model invariant (stochasticity, range, positivity) does not hold.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A linear solve or stationary-distribution computation failed; carries the
/// residual reached.
class SolveError : public Error {
 public:
  SolveError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Behaviour policy gives zero probability to an action.
class CoverageError : public Error {
 public:
  CoverageError(Index state, Index action)
      : Error("behaviour policy has mu(a|s)=0 at s=" + std::to_string(state) +
              ", a=" + std::to_string(action)),
        state_(state),
        action_(action) {}

  Index state() const noexcept { return state_; }
  Index action() const noexcept { return action_; }

 private:
  Index state_;
  Index action_;
};

/// Feature matrix lacks full column rank. `column()` is the first column found
/// to be linearly dependent on the preceding ones.
class RankError : public Error {
 public:
  RankError(Index column, Index rank)
      : Error("feature matrix is rank deficient (rank " + std::to_string(rank) +
              "), first dependent column " + std::to_string(column)),
        column_(column),
        rank_(rank) {}

  Index column() const noexcept { return column_; }
  Index rank() const noexcept { return rank_; }

 private:
  Index column_;
  Index rank_;
};

/// Adaptive integration could not proceed (step size underflow or step budget
/// exhausted).
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double time)
      : Error(what + " at t=" + std::to_string(time)), time_(time) {}

  double time() const noexcept { return time_; }

 private:
  double time_;
};

namespace detail {

inline void require_dim(const char* axis, Index expected, Index actual) {
  if (expected != actual) throw DimensionError(axis, expected, actual);
}

inline double inf_norm(const Vector& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

}  // namespace detail

}  // namespace sarl
