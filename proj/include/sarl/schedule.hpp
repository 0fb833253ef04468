#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "sarl/core.hpp"

namespace sarl {

/// Learning rate alpha(n) = B1 / (n + B2)^beta.
///
/// `Schedule::make` enforces B1, B2 > 0 and beta in (0.5, 1]; every member of
/// that family is positive and decreasing with a divergent sum and
/// alpha(n) -> 0. `Schedule::constant` builds integer time grids for tests and
/// satisfies none of those conditions.
class Schedule {
 public:
  static Schedule make(double B1, double B2, double beta) {
    if (!(B1 > 0.0) || !std::isfinite(B1)) {
      throw ValidationError("schedule B1 must be positive, got " + std::to_string(B1));
    }
    if (!(B2 > 0.0) || !std::isfinite(B2)) {
      throw ValidationError("schedule B2 must be positive, got " + std::to_string(B2));
    }
    if (!(beta > 0.5 && beta <= 1.0)) {
      throw ValidationError("schedule beta must lie in (0.5, 1], got " + std::to_string(beta));
    }
    return Schedule(B1, B2, beta);
  }

  static Schedule constant(double value) {
    if (!(value > 0.0)) throw ValidationError("constant step must be positive");
    return Schedule(value, 1.0, 0.0);
  }

  double B1() const noexcept { return b1_; }
  double B2() const noexcept { return b2_; }
  double beta() const noexcept { return beta_; }

  double operator()(std::uint64_t n) const {
    if (beta_ == 1.0) return b1_ / (static_cast<double>(n) + b2_);
    if (beta_ == 0.0) return b1_;
    return b1_ / std::pow(static_cast<double>(n) + b2_, beta_);
  }

  /// Positive, decreasing, sum diverges, alpha -> 0.
  bool satisfies_decay_conditions() const noexcept { return beta_ > 0.5 && beta_ <= 1.0; }

  /// The 1/(t + B2) form required by the RL convergence results.
  bool is_harmonic() const noexcept { return beta_ == 1.0; }

  /// Constant c with (alpha(n) - alpha(n+1)) / alpha(n) <= c alpha(n) for all
  /// n >= 0. From 1 - (1 - x)^beta <= x with x = 1/(n + 1 + B2) and
  /// (n + B2)^(beta - 1) <= max(1, B2^(beta - 1)).
  double relative_decrement_constant() const {
    return std::max(1.0, std::pow(b2_, beta_ - 1.0)) / b1_;
  }

 private:
  Schedule(double b1, double b2, double beta) : b1_(b1), b2_(b2), beta_(beta) {}

  double b1_;
  double b2_;
  double beta_;
};

inline double alpha(const Schedule& schedule, std::uint64_t n) { return schedule(n); }

}  // namespace sarl
