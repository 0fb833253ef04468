#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sarl/learners.hpp"
#include "sarl/mdp.hpp"
#include "sarl/rng.hpp"
#include "sarl/schedule.hpp"
#include "sarl/spectral.hpp"

namespace sarl {

/// Everything a prediction experiment needs: MDP, target and behaviour
/// policies, features and (for ETD) the interest function.
struct EnvironmentBundle {
  std::string name;
  FiniteMdp mdp;
  Policy pi;
  Policy mu;
  FeatureMap features;
  Vector interest;                  ///< i(s) > 0; ones unless specified
  std::optional<Vector> theta0;     ///< suggested initial weights
  std::uint64_t generator_retries = 0;
};

struct RandomOffPolicyOptions {
  Index n_states = 5;
  Index n_actions = 2;
  Index n_features = 3;
  double gamma = 0.9;
  double min_behaviour_weight = 0.2;  ///< mu rows are normalised U(min, 1) draws
  double target_mix = 0.5;            ///< pi = (1 - mix) mu + mix q with q random
  double max_feature_condition = 1e3;
  double max_system_condition = 1e6;
  int max_retries = 100;
};

namespace detail {

inline Vector normalised_uniform(Rng& rng, Index n, double lo, double hi) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v / v.sum();
}

inline double condition_number(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& sv = svd.singularValues();
  const double smin = sv[sv.size() - 1];
  return smin > 0.0 ? sv[0] / smin : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Seven-state star: six outer states and one hub. "dashed" (action 0) moves
/// uniformly to an outer state, "solid" (action 1) moves to the hub. Outer
/// state i has features 2 e_i + e_7, the hub e_6 + 2 e_7, so eight weights
/// describe seven states. The target policy always picks solid; the
/// behaviour policy picks solid with probability 1/7. All rewards are zero,
/// gamma = 0.99, and the suggested initial weights are (1,1,1,1,1,1,10,1).
///
/// The constructor rejects the instance unless the off-policy TD(0) mean
/// field has an eigenvalue with positive real part.
inline EnvironmentBundle divergence_star() {
  constexpr Index n = 7;
  constexpr Index k = 8;
  constexpr Index hub = 6;
  Matrix dashed = Matrix::Zero(n, n);
  Matrix solid = Matrix::Zero(n, n);
  for (Index s = 0; s < n; ++s) {
    dashed.row(s).head(6).setConstant(1.0 / 6.0);
    solid(s, hub) = 1.0;
  }
  Matrix phi = Matrix::Zero(n, k);
  for (Index s = 0; s < 6; ++s) {
    phi(s, s) = 2.0;
    phi(s, 7) = 1.0;
  }
  phi(hub, 6) = 1.0;
  phi(hub, 7) = 2.0;

  Matrix pi_probs(n, 2);
  Matrix mu_probs(n, 2);
  for (Index s = 0; s < n; ++s) {
    pi_probs.row(s) << 0.0, 1.0;
    mu_probs.row(s) << 6.0 / 7.0, 1.0 / 7.0;
  }
  Vector theta0 = Vector::Ones(k);
  theta0[6] = 10.0;

  EnvironmentBundle bundle{"divergence_star",
                           FiniteMdp({dashed, solid}, Matrix::Zero(n, 2), 0.99,
                                     Vector::Constant(n, 1.0 / n)),
                           Policy(pi_probs),
                           Policy(mu_probs),
                           FeatureMap(phi),
                           Vector::Ones(n),
                           theta0};

  const TdSystem td = off_policy_td_system(bundle.mdp, bundle.pi, bundle.mu, 0.0, bundle.features);
  Eigen::EigenSolver<Matrix> eig(td.A, false);
  if (!(eig.eigenvalues().real().maxCoeff() > kSpectralMargin)) {
    throw Error("divergence_star construction lost its unstable TD mode");
  }
  return bundle;
}

/// Five-state ring, Phi = I. Action 0 steps left, action 1 steps right, each
/// slipping in place with probability 0.1. Rewards favour reaching state 0.
/// Target policy prefers right (0.8), behaviour is uniform.
inline EnvironmentBundle tabular_chain() {
  constexpr Index n = 5;
  Matrix left = Matrix::Zero(n, n);
  Matrix right = Matrix::Zero(n, n);
  for (Index s = 0; s < n; ++s) {
    left(s, (s + n - 1) % n) += 0.9;
    left(s, s) += 0.1;
    right(s, (s + 1) % n) += 0.9;
    right(s, s) += 0.1;
  }
  Matrix reward(n, 2);
  for (Index s = 0; s < n; ++s) {
    reward(s, 0) = s == 1 ? 1.0 : -0.1;
    reward(s, 1) = s == n - 1 ? 1.0 : -0.1;
  }
  Matrix pi_probs(n, 2);
  for (Index s = 0; s < n; ++s) pi_probs.row(s) << 0.2, 0.8;
  return EnvironmentBundle{"tabular_chain",
                           FiniteMdp({left, right}, reward, 0.9, Vector::Constant(n, 1.0 / n)),
                           Policy(pi_probs),
                           Policy::uniform(n, 2),
                           FeatureMap::identity(n),
                           Vector::Ones(n),
                           std::nullopt};
}

// ---------------------------------------------------------------------------
// Assumption checklist
// ---------------------------------------------------------------------------

struct AssumptionItem {
  std::string id;
  std::string description;
  bool passed = false;
  std::string detail;
};

struct AssumptionReport {
  std::vector<AssumptionItem> items;

  bool all_passed() const {
    for (const auto& it : items) {
      if (!it.passed) return false;
    }
    return !items.empty();
  }

  const AssumptionItem* find(const std::string& id) const {
    for (const auto& it : items) {
      if (it.id == id) return &it;
    }
    return nullptr;
  }
};

/// Pass/fail for behaviour coverage, behaviour-chain irreducibility, the
/// learning-rate form, feature rank, GTD A nonsingular and ETD A negative
/// definite. Failures are report content, never exceptions.
inline AssumptionReport check_assumptions(const EnvironmentBundle& bundle, double lambda,
                                          const std::optional<Schedule>& schedule = std::nullopt) {
  AssumptionReport rep;
  const Index n = bundle.mdp.n_states();

  AssumptionItem coverage{"coverage", "mu(a|s) > 0 for every s, a", true, ""};
  for (Index s = 0; s < n && coverage.passed; ++s) {
    for (Index a = 0; a < bundle.mdp.n_actions(); ++a) {
      if (!(bundle.mu(s, a) > 0.0)) {
        coverage.passed = false;
        coverage.detail = "mu(" + std::to_string(a) + "|" + std::to_string(s) + ") = 0" +
                          (bundle.pi(s, a) > 0.0 ? " while pi is positive there" : "");
        break;
      }
    }
  }
  rep.items.push_back(coverage);

  AssumptionItem irreducible{"irreducible", "behaviour-induced chain is irreducible", false, ""};
  try {
    const InducedChain chain = induce_chain(bundle.mdp, bundle.mu);
    irreducible.passed = is_irreducible(chain.P);
    if (irreducible.passed) {
      (void)stationary_distribution(chain);
    } else {
      irreducible.detail = "transition graph under mu is not strongly connected";
    }
  } catch (const Error& e) {
    irreducible.passed = false;
    irreducible.detail = e.what();
  }
  rep.items.push_back(irreducible);

  AssumptionItem lr{"schedule", "alpha_t = B1 / (t + B2)", false, ""};
  if (schedule) {
    lr.passed = schedule->is_harmonic();
    if (!lr.passed) {
      lr.detail = "beta = " + std::to_string(schedule->beta()) +
                  (schedule->satisfies_decay_conditions()
                       ? " satisfies the general decay conditions but not the 1/t form"
                       : " violates the decay conditions");
    }
  } else {
    lr.detail = "no schedule supplied";
  }
  rep.items.push_back(lr);

  AssumptionItem rank{"feature_rank", "Phi has full column rank", false, ""};
  const Index dep = bundle.features.first_dependent_column();
  rank.passed = dep < 0;
  if (!rank.passed) {
    rank.detail = "column " + std::to_string(dep) + " depends on earlier columns (rank " +
                  std::to_string(bundle.features.rank()) + " of " +
                  std::to_string(bundle.features.dim()) + ")";
  }
  rep.items.push_back(rank);

  const bool prerequisites = coverage.passed && irreducible.passed && rank.passed;
  AssumptionItem gtd{"gtd_nonsingular", "GTD matrix A is nonsingular", false, ""};
  AssumptionItem etd{"etd_negative_definite", "ETD matrix A is negative definite", false, ""};
  if (!prerequisites) {
    gtd.detail = etd.detail = "skipped: coverage, irreducibility or rank failed";
  } else {
    try {
      const GtdSystem sys = gtd_expected_system(bundle.mdp, bundle.pi, bundle.mu, lambda, bundle.features);
      const SpectralReport r = spectral_report(sys.A, sys.b);
      gtd.passed = !r.singular;
      gtd.detail = "condition number " + std::to_string(r.condition_number);
    } catch (const Error& e) {
      gtd.detail = e.what();
    }
    try {
      const EtdSystem sys = etd_expected_system(bundle.mdp, bundle.pi, bundle.mu, lambda,
                                                bundle.interest, bundle.features);
      const SpectralReport r = spectral_report(sys.A);
      etd.passed = r.is_negative_definite;
      etd.detail = "max eigenvalue of A + A^T = " + std::to_string(r.max_symmetric_eigenvalue);
    } catch (const Error& e) {
      etd.detail = e.what();
    }
  }
  rep.items.push_back(gtd);
  rep.items.push_back(etd);
  return rep;
}

/// Random off-policy instance drawn from the environment stream of `seed`.
/// Draws that fail any assumption check (for lambda in {0, 0.5, 0.9}) or the
/// conditioning limits are discarded; the number of discarded draws is kept
/// in `generator_retries`.
inline EnvironmentBundle random_offpolicy(std::uint64_t seed, const RandomOffPolicyOptions& opt = {}) {
  if (opt.n_states < 1 || opt.n_actions < 1 || opt.n_features < 1) {
    throw ValidationError("random_offpolicy sizes must be positive");
  }
  if (opt.n_features > opt.n_states) {
    throw ValidationError("random_offpolicy needs n_features <= n_states for full rank");
  }
  Rng rng(derive_seed(seed, Stream::environment));
  const Index n = opt.n_states;
  const Index m = opt.n_actions;
  const Index k = opt.n_features;
  for (int attempt = 0; attempt <= opt.max_retries; ++attempt) {
    std::vector<Matrix> kernel(static_cast<std::size_t>(m), Matrix(n, n));
    for (Index s = 0; s < n; ++s) {
      for (Index a = 0; a < m; ++a) {
        kernel[static_cast<std::size_t>(a)].row(s) = detail::normalised_uniform(rng, n, 0.0, 1.0).transpose();
      }
    }
    Matrix reward(n, m);
    for (Index s = 0; s < n; ++s) {
      for (Index a = 0; a < m; ++a) reward(s, a) = rng.uniform(-1.0, 1.0);
    }
    Matrix mu(n, m);
    Matrix pi(n, m);
    for (Index s = 0; s < n; ++s) {
      mu.row(s) = detail::normalised_uniform(rng, m, opt.min_behaviour_weight, 1.0).transpose();
      const Vector q = detail::normalised_uniform(rng, m, 0.0, 1.0);
      pi.row(s) = ((1.0 - opt.target_mix) * mu.row(s).transpose() + opt.target_mix * q).transpose();
      pi.row(s) /= pi.row(s).sum();
    }
    Matrix phi(n, k);
    for (Index s = 0; s < n; ++s) {
      for (Index j = 0; j < k; ++j) phi(s, j) = rng.uniform(-1.0, 1.0);
    }

    EnvironmentBundle bundle{"random_offpolicy",
                             FiniteMdp(std::move(kernel), reward, opt.gamma,
                                       Vector::Constant(n, 1.0 / static_cast<double>(n))),
                             Policy(pi),
                             Policy(mu),
                             FeatureMap(phi),
                             Vector::Ones(n),
                             std::nullopt,
                             static_cast<std::uint64_t>(attempt)};
    if (detail::condition_number(phi) > opt.max_feature_condition) continue;
    bool ok = true;
    for (const double lambda : {0.0, 0.5, 0.9}) {
      if (!check_assumptions(bundle, lambda, Schedule::make(1.0, 1.0, 1.0)).all_passed()) {
        ok = false;
        break;
      }
      const GtdSystem sys = gtd_expected_system(bundle.mdp, bundle.pi, bundle.mu, lambda, bundle.features);
      if (detail::condition_number(sys.A) > opt.max_system_condition) {
        ok = false;
        break;
      }
    }
    if (ok) return bundle;
  }
  throw Error("random_offpolicy: no admissible instance after " + std::to_string(opt.max_retries) +
              " retries");
}

/// Built-in bundles by name: divergence_star, random_offpolicy, tabular_chain.
inline EnvironmentBundle builtin_environment(const std::string& name, std::uint64_t seed = 0,
                                             const RandomOffPolicyOptions& opt = {}) {
  if (name == "divergence_star") return divergence_star();
  if (name == "tabular_chain") return tabular_chain();
  if (name == "random_offpolicy") return random_offpolicy(seed, opt);
  throw ValidationError("unknown environment '" + name + "'");
}

}  // namespace sarl
