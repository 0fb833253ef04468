#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sarl/mdp.hpp"
#include "sarl/rng.hpp"
#include "sarl/schedule.hpp"

namespace sarl {

/// Any |entry| above this marks a run as diverged.
inline constexpr double kOverflowGuard = 1e12;

/// One transition (S_t, A_t, S_{t+1}) with the quantities every learner needs.
struct AugmentedSample {
  Index s = 0;
  Index a = 0;
  Index s_next = 0;
  double rho = 1.0;
  double reward = 0.0;
  Vector phi;
  Vector phi_next;
};

// Traces start from e_{-1} = 0, F_{-1} = 0 and rho_{-1} = 1.

struct TdState {
  Vector theta;
  Vector e;
  double rho_prev = 1.0;
  bool diverged = false;

  static TdState initial(Index k) { return {Vector::Zero(k), Vector::Zero(k)}; }
};

struct GtdState {
  Vector theta;
  Vector nu;
  Vector e;
  double rho_prev = 1.0;
  bool diverged = false;

  static GtdState initial(Index k) { return {Vector::Zero(k), Vector::Zero(k), Vector::Zero(k)}; }

  /// x = [nu; theta].
  Vector stacked() const {
    Vector x(nu.size() + theta.size());
    x << nu, theta;
    return x;
  }
};

struct EtdState {
  Vector theta;
  Vector e;
  double F = 0.0;
  double M = 0.0;
  double rho_prev = 1.0;
  bool diverged = false;

  static EtdState initial(Index k) { return {Vector::Zero(k), Vector::Zero(k)}; }
};

namespace detail {

inline bool exceeds_guard(const Vector& v) {
  for (Index i = 0; i < v.size(); ++i) {
    if (!(std::abs(v[i]) <= kOverflowGuard)) return true;
  }
  return false;
}

inline bool exceeds_guard(double v) { return !(std::abs(v) <= kOverflowGuard); }

inline double td_error(const AugmentedSample& y, const Vector& theta, double gamma) {
  return y.reward + gamma * y.phi_next.dot(theta) - y.phi.dot(theta);
}

}  // namespace detail

/// Fills `out` with a transition from state s: a ~ mu(.|s), s' ~ p(.|s,a).
inline void sample_transition_into(AugmentedSample& out, const FiniteMdp& mdp, const Policy& pi,
                                   const Policy& mu, const FeatureMap& features, Rng& rng,
                                   Index s) {
  out.s = s;
  out.a = rng.categorical(mu.probs().row(s).transpose());
  out.s_next = rng.categorical(mdp.kernel(out.a).row(s).transpose());
  out.rho = importance_ratio(pi, mu, s, out.a);
  out.reward = mdp.reward(s, out.a);
  out.phi = features.row(s).transpose();
  out.phi_next = features.row(out.s_next).transpose();
}

inline AugmentedSample sample_transition(const FiniteMdp& mdp, const Policy& pi, const Policy& mu,
                                         const FeatureMap& features, Rng& rng, Index s) {
  if (s < 0 || s >= mdp.n_states()) {
    throw ValidationError("state " + std::to_string(s) + " out of range");
  }
  AugmentedSample out;
  sample_transition_into(out, mdp, pi, mu, features, rng, s);
  return out;
}

/// On-policy linear TD(lambda): importance ratios are ignored.
inline TdState on_policy_td_step(TdState state, const AugmentedSample& y, double alpha,
                                 double gamma, double lambda) {
  if (state.diverged) return state;
  state.e = lambda * gamma * state.e + y.phi;
  const double delta = detail::td_error(y, state.theta, gamma);
  state.theta += (alpha * delta) * state.e;
  state.diverged = detail::exceeds_guard(state.theta) || detail::exceeds_guard(state.e);
  return state;
}

inline TdState off_policy_td_step(TdState state, const AugmentedSample& y, double alpha,
                                  double gamma, double lambda) {
  if (state.diverged) return state;
  state.e = (lambda * gamma * state.rho_prev) * state.e + y.phi;
  const double delta = detail::td_error(y, state.theta, gamma);
  state.theta += (alpha * y.rho * delta) * state.e;
  state.rho_prev = y.rho;
  state.diverged = detail::exceeds_guard(state.theta) || detail::exceeds_guard(state.e);
  return state;
}

inline GtdState gtd_step(GtdState state, const AugmentedSample& y, double alpha, double gamma,
                         double lambda) {
  if (state.diverged) return state;
  state.e = (lambda * gamma * state.rho_prev) * state.e + y.phi;
  const double delta = detail::td_error(y, state.theta, gamma);
  const double e_dot_nu = state.e.dot(state.nu);
  const double phi_dot_nu = y.phi.dot(state.nu);
  state.nu += alpha * (y.rho * delta * state.e - phi_dot_nu * y.phi);
  state.theta += (alpha * y.rho * e_dot_nu) * (y.phi - gamma * y.phi_next);
  state.rho_prev = y.rho;
  state.diverged = detail::exceeds_guard(state.theta) || detail::exceeds_guard(state.nu) ||
                   detail::exceeds_guard(state.e);
  return state;
}

/// Per-sample GTD pieces A(y) = rho e (gamma phi' - phi)^T, b(y) = rho r e,
/// C(y) = phi phi^T, evaluated with the trace e already updated.
struct GtdSampleMatrices {
  Matrix A;
  Vector b;
  Matrix C;
};

inline GtdSampleMatrices gtd_sample_matrices(const AugmentedSample& y, const Vector& e,
                                             double gamma) {
  return {y.rho * e * (gamma * y.phi_next - y.phi).transpose(), y.rho * y.reward * e,
          y.phi * y.phi.transpose()};
}

/// H(x, y) = [[-C(y), A(y)], [-A(y)^T, 0]] x + [b(y); 0] for x = [nu; theta].
inline Vector gtd_sa_field(const Vector& x, const GtdSampleMatrices& m) {
  const Index k = m.b.size();
  Vector h(2 * k);
  h.head(k) = -m.C * x.head(k) + m.A * x.tail(k) + m.b;
  h.tail(k) = -m.A.transpose() * x.head(k);
  return h;
}

/// GTD(lambda) written as the generic update x <- x + alpha H(x, Y).
inline GtdState gtd_step_block_form(GtdState state, const AugmentedSample& y, double alpha,
                                    double gamma, double lambda) {
  if (state.diverged) return state;
  state.e = (lambda * gamma * state.rho_prev) * state.e + y.phi;
  const Vector x = state.stacked();
  const Vector next = x + alpha * gtd_sa_field(x, gtd_sample_matrices(y, state.e, gamma));
  const Index k = state.theta.size();
  state.nu = next.head(k);
  state.theta = next.tail(k);
  state.rho_prev = y.rho;
  state.diverged = detail::exceeds_guard(next) || detail::exceeds_guard(state.e);
  return state;
}

/// ETD(lambda) with followon trace F and emphasis M. `interest` is i(S_t).
inline EtdState etd_step(EtdState state, const AugmentedSample& y, double alpha, double gamma,
                         double lambda, double interest) {
  if (state.diverged) return state;
  state.F = gamma * state.rho_prev * state.F + interest;
  state.M = lambda * interest + (1.0 - lambda) * state.F;
  state.e = (lambda * gamma * state.rho_prev) * state.e + state.M * y.phi;
  const double delta = detail::td_error(y, state.theta, gamma);
  state.theta += (alpha * y.rho * delta) * state.e;
  state.rho_prev = y.rho;
  state.diverged = detail::exceeds_guard(state.theta) || detail::exceeds_guard(state.e) ||
                   detail::exceeds_guard(state.F);
  return state;
}

inline EtdState etd_step(EtdState state, const AugmentedSample& y, double alpha, double gamma,
                         double lambda, const Vector& interest) {
  return etd_step(std::move(state), y, alpha, gamma, lambda, interest[y.s]);
}

enum class Algorithm { td, offpolicy_td, gtd, etd };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::td: return "td";
    case Algorithm::offpolicy_td: return "offpolicy_td";
    case Algorithm::gtd: return "gtd";
    case Algorithm::etd: return "etd";
  }
  return "td";
}

inline Algorithm parse_algorithm(std::string_view name) {
  if (name == "td") return Algorithm::td;
  if (name == "offpolicy_td") return Algorithm::offpolicy_td;
  if (name == "gtd") return Algorithm::gtd;
  if (name == "etd") return Algorithm::etd;
  throw ValidationError("unknown algorithm '" + std::string(name) + "'");
}

struct LearnerConfig {
  Algorithm algorithm = Algorithm::gtd;
  double lambda = 0.0;
  Vector interest;                ///< ETD only; empty means i = 1
  std::uint64_t record_stride = 100;
  std::optional<Vector> theta0;   ///< defaults to zero
  std::optional<Vector> nu0;      ///< GTD only; defaults to zero
};

/// What a per-step observer sees: the transition, the trace e_t used by the
/// update, and the iterate before the update.
struct StepView {
  std::uint64_t n;
  double alpha;
  const AugmentedSample& sample;
  const Vector& trace;
  double followon;
  double emphasis;
  const Vector& x_before;
};

using StepObserver = std::function<void(const StepView&)>;

/// Recorded run. Row j holds x_n for n = steps[j], alpha(n), and the trace
/// e_{n-1} that produced x_n. Window maxima cover every step since the
/// previous row, so recorded maxima are exact despite striding.
struct Trajectory {
  Algorithm algorithm = Algorithm::gtd;
  Index dim = 0;  ///< K, the length of theta
  std::uint64_t requested_steps = 0;
  std::uint64_t completed_steps = 0;
  std::vector<std::uint64_t> steps;
  std::vector<double> alphas;
  std::vector<Vector> iterates;  ///< theta, or [nu; theta] for GTD
  std::vector<double> norm_x;
  std::vector<double> norm_e;
  std::vector<double> followon;  ///< ETD only
  std::vector<double> window_max_norm_x;
  std::vector<double> window_max_norm_e;
  std::vector<char> diverged_flags;
  bool diverged = false;
  std::optional<std::uint64_t> diverged_at;
  double max_norm_x = 0.0;
  double max_norm_e = 0.0;

  bool has_nu() const noexcept { return algorithm == Algorithm::gtd; }

  Vector theta(std::size_t row) const {
    const Vector& x = iterates.at(row);
    return has_nu() ? Vector(x.tail(dim)) : x;
  }
};

namespace detail {

inline void validate_learner(const LearnerConfig& cfg, const FiniteMdp& mdp, const Policy& pi,
                             const Policy& mu, const FeatureMap& features) {
  require_compatible(mdp, pi);
  require_compatible(mdp, mu);
  require_dim("features.states", mdp.n_states(), features.n_states());
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) {
    throw ValidationError("lambda must lie in [0,1]");
  }
  if (cfg.record_stride == 0) throw ValidationError("record_stride must be positive");
  if (cfg.theta0) require_dim("theta0", features.dim(), cfg.theta0->size());
  if (cfg.nu0) {
    if (cfg.algorithm != Algorithm::gtd) throw ValidationError("nu0 is only used by gtd");
    require_dim("nu0", features.dim(), cfg.nu0->size());
  }
  if (cfg.algorithm == Algorithm::etd && cfg.interest.size() != 0) {
    require_dim("interest", mdp.n_states(), cfg.interest.size());
    for (Index s = 0; s < cfg.interest.size(); ++s) {
      if (!(cfg.interest[s] > 0.0)) throw ValidationError("interest must be strictly positive");
    }
  } else if (cfg.interest.size() != 0) {
    throw ValidationError("interest is only used by etd");
  }
  if (cfg.algorithm != Algorithm::td) {
    for (Index s = 0; s < mu.n_states(); ++s) {
      for (Index a = 0; a < mu.n_actions(); ++a) {
        if (!(mu(s, a) > 0.0)) throw CoverageError(s, a);
      }
    }
  }
}

}  // namespace detail

/// Drives one learner for `n_steps` updates of x_{n+1} = x_n + alpha(n) H(x_n, Y_{n+1}).
/// For `Algorithm::td` actions follow pi (on-policy) and `mu` is ignored.
/// Sampling draws from the trajectory stream of `seed`.
inline Trajectory run(const LearnerConfig& cfg, const FiniteMdp& mdp, const Policy& pi,
                      const Policy& mu, const FeatureMap& features, const Schedule& schedule,
                      std::uint64_t n_steps, std::uint64_t seed,
                      const StepObserver& observer = {}) {
  detail::validate_learner(cfg, mdp, pi, mu, features);
  const Index k = features.dim();
  const double gamma = mdp.gamma();
  const double lambda = cfg.lambda;
  const Policy& behaviour = cfg.algorithm == Algorithm::td ? pi : mu;
  const Vector interest =
      cfg.interest.size() != 0 ? cfg.interest : Vector::Ones(mdp.n_states());

  Rng rng(derive_seed(seed, Stream::trajectory));

  TdState td = TdState::initial(k);
  GtdState gtd = GtdState::initial(k);
  EtdState etd = EtdState::initial(k);
  if (cfg.theta0) td.theta = gtd.theta = etd.theta = *cfg.theta0;
  if (cfg.nu0) gtd.nu = *cfg.nu0;

  Trajectory traj;
  traj.algorithm = cfg.algorithm;
  traj.dim = k;
  traj.requested_steps = n_steps;

  Vector x = cfg.algorithm == Algorithm::gtd ? gtd.stacked() : td.theta;
  const Vector* trace = &td.e;
  double window_x = 0.0;
  double window_e = 0.0;

  auto current_x = [&](Vector& out) {
    switch (cfg.algorithm) {
      case Algorithm::td:
      case Algorithm::offpolicy_td: out = td.theta; break;
      case Algorithm::gtd:
        out.head(k) = gtd.nu;
        out.tail(k) = gtd.theta;
        break;
      case Algorithm::etd: out = etd.theta; break;
    }
  };
  auto record = [&](std::uint64_t n, bool diverged) {
    traj.steps.push_back(n);
    traj.alphas.push_back(schedule(n));
    traj.iterates.push_back(x);
    traj.norm_x.push_back(x.norm());
    traj.norm_e.push_back(trace->norm());
    if (cfg.algorithm == Algorithm::etd) traj.followon.push_back(etd.F);
    traj.window_max_norm_x.push_back(window_x);
    traj.window_max_norm_e.push_back(window_e);
    traj.diverged_flags.push_back(diverged ? 1 : 0);
    window_x = 0.0;
    window_e = 0.0;
  };

  switch (cfg.algorithm) {
    case Algorithm::gtd: trace = &gtd.e; break;
    case Algorithm::etd: trace = &etd.e; break;
    default: trace = &td.e; break;
  }

  window_x = x.norm();
  traj.max_norm_x = window_x;
  record(0, false);

  AugmentedSample y;
  Vector x_before = x;
  Index s = rng.categorical(mdp.initial_dist());
  std::uint64_t n = 0;
  bool diverged = false;
  for (; n < n_steps && !diverged; ++n) {
    const double a_n = schedule(n);
    sample_transition_into(y, mdp, pi, behaviour, features, rng, s);
    if (observer) x_before = x;
    switch (cfg.algorithm) {
      case Algorithm::td:
        td = on_policy_td_step(std::move(td), y, a_n, gamma, lambda);
        diverged = td.diverged;
        break;
      case Algorithm::offpolicy_td:
        td = off_policy_td_step(std::move(td), y, a_n, gamma, lambda);
        diverged = td.diverged;
        break;
      case Algorithm::gtd:
        gtd = gtd_step(std::move(gtd), y, a_n, gamma, lambda);
        diverged = gtd.diverged;
        break;
      case Algorithm::etd:
        etd = etd_step(std::move(etd), y, a_n, gamma, lambda, interest[s]);
        diverged = etd.diverged;
        break;
    }
    current_x(x);
    if (observer) {
      observer(StepView{n, a_n, y, *trace, etd.F, etd.M, x_before});
    }
    const double nx = x.norm();
    const double ne = trace->norm();
    window_x = std::max(window_x, nx);
    window_e = std::max(window_e, ne);
    traj.max_norm_x = std::max(traj.max_norm_x, nx);
    traj.max_norm_e = std::max(traj.max_norm_e, ne);
    s = y.s_next;
    const std::uint64_t next = n + 1;
    if (diverged || next % cfg.record_stride == 0 || next == n_steps) record(next, diverged);
  }
  traj.completed_steps = n;
  traj.diverged = diverged;
  if (diverged) traj.diverged_at = n;
  return traj;
}

}  // namespace sarl
