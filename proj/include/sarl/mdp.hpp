#pragma once

#include <algorithm>
#include <cmath>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "sarl/core.hpp"

namespace sarl {

inline constexpr double kStochasticTol = 1e-12;
inline constexpr double kSolveResidualTol = 1e-10;

/// Finite discounted MDP. The kernel is stored per action:
/// `kernel(a)(s, s') = p(s' | s, a)`.
class FiniteMdp {
 public:
  FiniteMdp(std::vector<Matrix> kernel, Matrix reward, double gamma, Vector initial_dist)
      : kernel_(std::move(kernel)),
        reward_(std::move(reward)),
        gamma_(gamma),
        initial_(std::move(initial_dist)) {
    validate();
  }

  Index n_states() const noexcept { return reward_.rows(); }
  Index n_actions() const noexcept { return reward_.cols(); }
  double gamma() const noexcept { return gamma_; }
  const Matrix& kernel(Index action) const { return kernel_.at(static_cast<std::size_t>(action)); }
  const std::vector<Matrix>& kernels() const noexcept { return kernel_; }
  const Matrix& reward() const noexcept { return reward_; }
  double reward(Index s, Index a) const { return reward_(s, a); }
  double transition(Index s_next, Index s, Index a) const { return kernel(a)(s, s_next); }
  const Vector& initial_dist() const noexcept { return initial_; }

 private:
  void validate() const {
    const Index n = reward_.rows();
    const Index m = reward_.cols();
    if (n < 1) throw ValidationError("MDP needs at least one state");
    if (m < 1) throw ValidationError("MDP needs at least one action");
    detail::require_dim("transition.actions", m, static_cast<Index>(kernel_.size()));
    for (Index a = 0; a < m; ++a) {
      const Matrix& p = kernel_[static_cast<std::size_t>(a)];
      detail::require_dim("transition.states", n, p.rows());
      detail::require_dim("transition.next_states", n, p.cols());
      for (Index s = 0; s < n; ++s) {
        for (Index t = 0; t < n; ++t) {
          const double v = p(s, t);
          if (!(v >= 0.0 && v <= 1.0)) {
            throw ValidationError("transition[" + std::to_string(s) + "][" + std::to_string(a) +
                                  "][" + std::to_string(t) + "] = " + std::to_string(v) +
                                  " outside [0,1]");
          }
        }
        const double row = p.row(s).sum();
        if (std::abs(row - 1.0) > kStochasticTol) {
          throw ValidationError("transition[" + std::to_string(s) + "][" + std::to_string(a) +
                                "] sums to " + std::to_string(row));
        }
      }
    }
    if (!reward_.allFinite()) throw ValidationError("reward has non-finite entries");
    if (!(gamma_ >= 0.0 && gamma_ < 1.0)) {
      throw ValidationError("gamma = " + std::to_string(gamma_) + " outside [0,1)");
    }
    detail::require_dim("initial_dist", n, initial_.size());
    for (Index s = 0; s < n; ++s) {
      if (!(initial_[s] >= 0.0)) {
        throw ValidationError("initial_dist[" + std::to_string(s) + "] is negative");
      }
    }
    if (std::abs(initial_.sum() - 1.0) > kStochasticTol) {
      throw ValidationError("initial_dist sums to " + std::to_string(initial_.sum()));
    }
  }

  std::vector<Matrix> kernel_;
  Matrix reward_;
  double gamma_;
  Vector initial_;
};

/// Stochastic policy, `probs(s, a) = pi(a | s)`.
class Policy {
 public:
  explicit Policy(Matrix probs) : probs_(std::move(probs)) {
    for (Index s = 0; s < probs_.rows(); ++s) {
      for (Index a = 0; a < probs_.cols(); ++a) {
        if (!(probs_(s, a) >= 0.0 && probs_(s, a) <= 1.0)) {
          throw ValidationError("policy[" + std::to_string(s) + "][" + std::to_string(a) +
                                "] outside [0,1]");
        }
      }
      const double row = probs_.row(s).sum();
      if (std::abs(row - 1.0) > kStochasticTol) {
        throw ValidationError("policy row " + std::to_string(s) + " sums to " +
                              std::to_string(row));
      }
    }
  }

  static Policy uniform(Index n_states, Index n_actions) {
    return Policy(Matrix::Constant(n_states, n_actions, 1.0 / static_cast<double>(n_actions)));
  }

  Index n_states() const noexcept { return probs_.rows(); }
  Index n_actions() const noexcept { return probs_.cols(); }
  double operator()(Index s, Index a) const { return probs_(s, a); }
  const Matrix& probs() const noexcept { return probs_; }

 private:
  Matrix probs_;
};

/// Feature matrix; row s is phi(s)^T.
class FeatureMap {
 public:
  explicit FeatureMap(Matrix phi) : phi_(std::move(phi)) {
    if (!phi_.allFinite()) throw ValidationError("features have non-finite entries");
  }

  static FeatureMap identity(Index n) { return FeatureMap(Matrix::Identity(n, n)); }

  Index n_states() const noexcept { return phi_.rows(); }
  Index dim() const noexcept { return phi_.cols(); }
  const Matrix& matrix() const noexcept { return phi_; }
  auto row(Index s) const { return phi_.row(s); }

  /// First column that is (numerically) in the span of the earlier columns,
  /// or -1 for a full-column-rank matrix.
  Index first_dependent_column(double rel_tol = 1e-10) const {
    const double scale = std::max(1.0, phi_.cwiseAbs().maxCoeff());
    for (Index k = 0; k < phi_.cols(); ++k) {
      const Matrix leading = phi_.leftCols(k + 1);
      Eigen::JacobiSVD<Matrix> svd(leading);
      const auto& sv = svd.singularValues();
      if (sv.size() < k + 1 || sv[k] <= rel_tol * scale) return k;
    }
    return -1;
  }

  Index rank(double rel_tol = 1e-10) const {
    Eigen::JacobiSVD<Matrix> svd(phi_);
    const auto& sv = svd.singularValues();
    const double scale = std::max(1.0, phi_.cwiseAbs().maxCoeff());
    Index r = 0;
    for (Index i = 0; i < sv.size(); ++i) r += sv[i] > rel_tol * scale ? 1 : 0;
    return r;
  }

  void require_full_column_rank() const {
    const Index col = first_dependent_column();
    if (col >= 0) throw RankError(col, rank());
  }

 private:
  Matrix phi_;
};

struct InducedChain {
  Matrix P;  ///< P_pi(s, s')
  Vector r;  ///< r_pi(s)
};

/// lambda-return Bellman operator T v = r + gamma P v.
struct LambdaBellman {
  double lambda = 0.0;
  Vector r;
  Matrix P;
  double contraction_factor = 0.0;  ///< gamma (1 - lambda) / (1 - gamma lambda)
};

inline void require_compatible(const FiniteMdp& mdp, const Policy& policy) {
  detail::require_dim("policy.states", mdp.n_states(), policy.n_states());
  detail::require_dim("policy.actions", mdp.n_actions(), policy.n_actions());
}

inline InducedChain induce_chain(const FiniteMdp& mdp, const Policy& policy) {
  require_compatible(mdp, policy);
  const Index n = mdp.n_states();
  InducedChain chain{Matrix::Zero(n, n), Vector::Zero(n)};
  for (Index a = 0; a < mdp.n_actions(); ++a) {
    const Vector w = policy.probs().col(a);
    chain.P.noalias() += w.asDiagonal() * mdp.kernel(a);
    chain.r += w.cwiseProduct(mdp.reward().col(a));
  }
  return chain;
}

/// Strong connectivity of the transition graph (edges where P > 0).
inline bool is_irreducible(const Matrix& P) {
  const Index n = P.rows();
  auto reach_all = [&](bool transpose) {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::queue<Index> frontier;
    frontier.push(0);
    seen[0] = 1;
    Index count = 1;
    while (!frontier.empty()) {
      const Index s = frontier.front();
      frontier.pop();
      for (Index t = 0; t < n; ++t) {
        const double w = transpose ? P(t, s) : P(s, t);
        if (w > 0.0 && !seen[static_cast<std::size_t>(t)]) {
          seen[static_cast<std::size_t>(t)] = 1;
          ++count;
          frontier.push(t);
        }
      }
    }
    return count == n;
  };
  return n > 0 && reach_all(false) && reach_all(true);
}

/// Stationary distribution from the linear system (P^T - I) d = 0 with the
/// last equation replaced by sum(d) = 1. Handles periodic chains; fails with a
/// SolveError when the system is singular (several closed classes) or the
/// residual exceeds `tol`.
inline Vector stationary_distribution(const Matrix& P, double tol = kSolveResidualTol) {
  const Index n = P.rows();
  detail::require_dim("chain.columns", n, P.cols());
  Matrix system = P.transpose() - Matrix::Identity(n, n);
  system.row(n - 1).setOnes();
  Vector rhs = Vector::Zero(n);
  rhs[n - 1] = 1.0;
  Eigen::FullPivLU<Matrix> lu(system);
  if (lu.rank() < n) {
    const Vector d = Vector::Constant(n, 1.0 / static_cast<double>(n));
    throw SolveError("stationary distribution is not unique (chain reducible)",
                     detail::inf_norm((d.transpose() * P - d.transpose()).transpose()));
  }
  Vector d = lu.solve(rhs);
  const double residual = detail::inf_norm((d.transpose() * P - d.transpose()).transpose());
  if (!(residual <= tol) || d.minCoeff() < -tol) {
    throw SolveError("stationary distribution solve did not converge", residual);
  }
  d = d.cwiseMax(0.0);
  d /= d.sum();
  return d;
}

inline Vector stationary_distribution(const InducedChain& chain, double tol = kSolveResidualTol) {
  return stationary_distribution(chain.P, tol);
}

inline LambdaBellman lambda_bellman(const FiniteMdp& mdp, const InducedChain& chain, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ValidationError("lambda = " + std::to_string(lambda) + " outside [0,1]");
  }
  const Index n = mdp.n_states();
  detail::require_dim("chain.states", n, chain.P.rows());
  const double g = mdp.gamma();
  const Matrix system = Matrix::Identity(n, n) - g * lambda * chain.P;
  Eigen::PartialPivLU<Matrix> lu(system);

  LambdaBellman op;
  op.lambda = lambda;
  op.r = lu.solve(chain.r);
  op.P = lambda == 1.0 ? Matrix::Zero(n, n) : Matrix((1.0 - lambda) * lu.solve(chain.P));
  op.contraction_factor = g * (1.0 - lambda) / (1.0 - g * lambda);

  const double res_r = detail::inf_norm(system * op.r - chain.r);
  const double res_p = (system * op.P - (1.0 - lambda) * chain.P).cwiseAbs().maxCoeff();
  const double scale = std::max(1.0, detail::inf_norm(chain.r));
  if (!(res_r <= kSolveResidualTol * scale) || !(res_p <= kSolveResidualTol)) {
    throw SolveError("lambda-Bellman components failed their defining systems",
                     std::max(res_r, res_p));
  }
  return op;
}

inline Vector apply_bellman(const LambdaBellman& op, double gamma, const Vector& v) {
  detail::require_dim("value.states", op.r.size(), v.size());
  return op.r + gamma * (op.P * v);
}

/// Solves (I - gamma P_pi) v = r_pi.
inline Vector value_function(const FiniteMdp& mdp, const InducedChain& chain) {
  const Index n = mdp.n_states();
  const Matrix system = Matrix::Identity(n, n) - mdp.gamma() * chain.P;
  Vector v = Eigen::PartialPivLU<Matrix>(system).solve(chain.r);
  const double residual = detail::inf_norm(system * v - chain.r);
  if (!(residual <= kSolveResidualTol * std::max(1.0, detail::inf_norm(chain.r)))) {
    throw SolveError("value function solve", residual);
  }
  return v;
}

/// pi(a|s) / mu(a|s); requires mu(a|s) > 0.
inline double importance_ratio(const Policy& pi, const Policy& mu, Index s, Index a) {
  const double denom = mu(s, a);
  if (!(denom > 0.0)) throw CoverageError(s, a);
  return pi(s, a) / denom;
}

inline double weighted_norm(const Vector& v, const Vector& d) {
  return std::sqrt(v.cwiseAbs2().dot(d));
}

inline constexpr double kMinWeight = 1e-12;

/// Pi = Phi (Phi^T D Phi)^{-1} Phi^T D.
inline Matrix projection(const FeatureMap& features, const Vector& d) {
  detail::require_dim("weighting.states", features.n_states(), d.size());
  if (!(d.minCoeff() > kMinWeight)) {
    throw ValidationError("projection weighting must exceed 1e-12 on every state");
  }
  features.require_full_column_rank();
  const Matrix& phi = features.matrix();
  const Matrix phit_d = phi.transpose() * d.asDiagonal();
  const Matrix gram = phit_d * phi;
  return phi * Eigen::PartialPivLU<Matrix>(gram).solve(phit_d);
}

/// || Pi_d T Phi theta - Phi theta ||_d^2.
inline double mspbe(const LambdaBellman& op, double gamma, const FeatureMap& features,
                    const Vector& d, const Vector& theta) {
  detail::require_dim("theta", features.dim(), theta.size());
  const Matrix proj = projection(features, d);
  const Vector v = features.matrix() * theta;
  const double err = weighted_norm(proj * apply_bellman(op, gamma, v) - v, d);
  return err * err;
}

inline double mspbe(const FiniteMdp& mdp, const Policy& pi, const FeatureMap& features,
                    const Vector& d, double lambda, const Vector& theta) {
  const LambdaBellman op = lambda_bellman(mdp, induce_chain(mdp, pi), lambda);
  return mspbe(op, mdp.gamma(), features, d, theta);
}

}  // namespace sarl
