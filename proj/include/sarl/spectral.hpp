#pragma once

#include <algorithm>
#include <limits>
#include <optional>

#include <Eigen/Eigenvalues>

#include "sarl/mdp.hpp"

namespace sarl {

/// Expected GTD(lambda) update in block form over x = [nu; theta]:
/// A_block = [[-C, A], [-A^T, 0]], b_block = [b; 0].
struct GtdSystem {
  Matrix A;
  Vector b;
  Matrix C;
  Matrix A_block;
  Vector b_block;
};

/// Expected ETD(lambda) update with emphatic state weighting m.
struct EtdSystem {
  Matrix A;
  Vector b;
  Vector m;
};

/// Expected off-policy TD(lambda) update theta' = theta + alpha (A theta + b).
struct TdSystem {
  Matrix A;
  Vector b;
};

inline Matrix gtd_block_matrix(const Matrix& A, const Matrix& C) {
  const Index k = A.rows();
  Matrix block = Matrix::Zero(2 * k, 2 * k);
  block.topLeftCorner(k, k) = -C;
  block.topRightCorner(k, k) = A;
  block.bottomLeftCorner(k, k) = -A.transpose();
  return block;
}

namespace detail {

inline Vector behaviour_distribution(const FiniteMdp& mdp, const Policy& mu) {
  const InducedChain chain = induce_chain(mdp, mu);
  if (!is_irreducible(chain.P)) {
    throw ValidationError("Markov chain induced by the behaviour policy is reducible");
  }
  return stationary_distribution(chain);
}

inline void require_coverage(const Policy& mu) {
  for (Index s = 0; s < mu.n_states(); ++s) {
    for (Index a = 0; a < mu.n_actions(); ++a) {
      if (!(mu(s, a) > 0.0)) throw CoverageError(s, a);
    }
  }
}

// Phi^T D (gamma P_lambda - I) Phi and Phi^T D r_lambda for a state weighting.
inline TdSystem weighted_td_system(const LambdaBellman& op, double gamma, const Matrix& phi,
                                   const Vector& weight) {
  const Index n = phi.rows();
  const Matrix phit_d = phi.transpose() * weight.asDiagonal();
  TdSystem sys;
  sys.A = phit_d * (gamma * op.P - Matrix::Identity(n, n)) * phi;
  sys.b = phit_d * op.r;
  return sys;
}

}  // namespace detail

/// Off-policy TD(lambda) mean field, weighted by d_mu. No rank requirement on
/// the features, so over-parameterised layouts can be analysed.
inline TdSystem off_policy_td_system(const FiniteMdp& mdp, const Policy& pi, const Policy& mu,
                                     double lambda, const FeatureMap& features) {
  require_compatible(mdp, pi);
  require_compatible(mdp, mu);
  detail::require_dim("features.states", mdp.n_states(), features.n_states());
  const Vector d_mu = detail::behaviour_distribution(mdp, mu);
  const LambdaBellman op = lambda_bellman(mdp, induce_chain(mdp, pi), lambda);
  return detail::weighted_td_system(op, mdp.gamma(), features.matrix(), d_mu);
}

inline GtdSystem gtd_expected_system(const FiniteMdp& mdp, const Policy& pi, const Policy& mu,
                                     double lambda, const FeatureMap& features) {
  features.require_full_column_rank();
  require_compatible(mdp, pi);
  require_compatible(mdp, mu);
  detail::require_dim("features.states", mdp.n_states(), features.n_states());
  const Vector d_mu = detail::behaviour_distribution(mdp, mu);
  const LambdaBellman op = lambda_bellman(mdp, induce_chain(mdp, pi), lambda);
  const Matrix& phi = features.matrix();

  TdSystem td = detail::weighted_td_system(op, mdp.gamma(), phi, d_mu);
  GtdSystem sys;
  sys.A = std::move(td.A);
  sys.b = std::move(td.b);
  sys.C = phi.transpose() * d_mu.asDiagonal() * phi;
  sys.C = (0.5 * (sys.C + sys.C.transpose())).eval();
  sys.A_block = gtd_block_matrix(sys.A, sys.C);
  sys.b_block = Vector::Zero(2 * sys.b.size());
  sys.b_block.head(sys.b.size()) = sys.b;
  return sys;
}

/// m solves (I - gamma P_lambda^T) m = D_mu i.
inline EtdSystem etd_expected_system(const FiniteMdp& mdp, const Policy& pi, const Policy& mu,
                                     double lambda, const Vector& interest,
                                     const FeatureMap& features) {
  features.require_full_column_rank();
  require_compatible(mdp, pi);
  require_compatible(mdp, mu);
  const Index n = mdp.n_states();
  detail::require_dim("features.states", n, features.n_states());
  detail::require_dim("interest", n, interest.size());
  for (Index s = 0; s < n; ++s) {
    if (!(interest[s] > 0.0)) {
      throw ValidationError("interest must be strictly positive; state " + std::to_string(s) +
                            " has " + std::to_string(interest[s]));
    }
  }
  const Vector d_mu = detail::behaviour_distribution(mdp, mu);
  const LambdaBellman op = lambda_bellman(mdp, induce_chain(mdp, pi), lambda);
  const Matrix system = Matrix::Identity(n, n) - mdp.gamma() * op.P.transpose();
  const Vector rhs = d_mu.cwiseProduct(interest);

  EtdSystem sys;
  sys.m = Eigen::PartialPivLU<Matrix>(system).solve(rhs);
  const double residual = detail::inf_norm(system * sys.m - rhs);
  if (!(residual <= kSolveResidualTol)) throw SolveError("emphatic weighting solve", residual);
  TdSystem td = detail::weighted_td_system(op, mdp.gamma(), features.matrix(), sys.m);
  sys.A = std::move(td.A);
  sys.b = std::move(td.b);
  return sys;
}

enum class Verdict { yes, no, indeterminate };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::yes: return "yes";
    case Verdict::no: return "no";
    case Verdict::indeterminate: return "indeterminate";
  }
  return "indeterminate";
}

inline constexpr double kSpectralMargin = 1e-10;
inline constexpr double kIllConditioned = 1e8;
inline constexpr double kSingularRatio = 1e-13;

/// Eigenvalue diagnostics of a square matrix M.
///
/// `is_hurwitz` holds iff every eigenvalue has real part below -1e-10;
/// `is_negative_definite` iff the largest eigenvalue of M + M^T is below
/// -1e-10. The tri-state verdicts additionally mark spectra within 1e-10 of
/// the boundary as indeterminate.
struct SpectralReport {
  ComplexVector eigenvalues;
  double max_real_part = 0.0;
  double max_symmetric_eigenvalue = 0.0;  ///< of M + M^T
  Verdict hurwitz = Verdict::indeterminate;
  Verdict negative_definite = Verdict::indeterminate;
  bool is_hurwitz = false;
  bool is_negative_definite = false;
  double condition_number = std::numeric_limits<double>::infinity();
  bool ill_conditioned = true;
  bool singular = true;
  std::optional<Vector> fixed_point;
};

namespace detail {

inline Verdict classify_negative(double max_value) {
  if (max_value < -kSpectralMargin) return Verdict::yes;
  if (max_value > kSpectralMargin) return Verdict::no;
  return Verdict::indeterminate;
}

}  // namespace detail

inline SpectralReport spectral_report(const Matrix& M, const std::optional<Vector>& b = std::nullopt) {
  detail::require_dim("matrix.columns", M.rows(), M.cols());
  if (b) detail::require_dim("offset", M.rows(), b->size());
  SpectralReport rep;
  const Index n = M.rows();
  if (n == 0) throw ValidationError("spectral_report needs a non-empty matrix");

  Eigen::EigenSolver<Matrix> eig(M, /*computeEigenvectors=*/false);
  rep.eigenvalues = eig.eigenvalues();
  rep.max_real_part = rep.eigenvalues.real().maxCoeff();

  const Matrix sym = M + M.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> sym_eig(sym, Eigen::EigenvaluesOnly);
  rep.max_symmetric_eigenvalue = sym_eig.eigenvalues().maxCoeff();

  rep.hurwitz = detail::classify_negative(rep.max_real_part);
  rep.negative_definite = detail::classify_negative(rep.max_symmetric_eigenvalue);
  rep.is_hurwitz = rep.hurwitz == Verdict::yes;
  rep.is_negative_definite = rep.negative_definite == Verdict::yes;

  Eigen::JacobiSVD<Matrix> svd(M);
  const auto& sv = svd.singularValues();
  const double smax = sv[0];
  const double smin = sv[n - 1];
  rep.singular = !(smin > kSingularRatio * smax) || smax == 0.0;
  rep.condition_number = rep.singular ? std::numeric_limits<double>::infinity() : smax / smin;
  rep.ill_conditioned = rep.condition_number > kIllConditioned;
  if (b && !rep.singular) {
    rep.fixed_point = Vector(-Eigen::PartialPivLU<Matrix>(M).solve(*b));
  }
  return rep;
}

/// Fixed point -M^{-1} b, or nullopt when M is singular.
inline std::optional<Vector> fixed_point(const Matrix& M, const Vector& b) {
  return spectral_report(M, b).fixed_point;
}

}  // namespace sarl
