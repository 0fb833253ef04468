#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Eigenvalues>

#include "sarl/core.hpp"
#include "sarl/rng.hpp"
#include "sarl/schedule.hpp"

namespace sarl {

// ---------------------------------------------------------------------------
// Time partition
// ---------------------------------------------------------------------------

/// Knots t(n) = sum_{i<n} alpha(i) for n = 0..horizon, the index map
/// m(t) = max{i : t(i) <= t}, and segment boundaries T_0 = 0,
/// T_{n+1} = t(m(T_n + T) + 1).
class TimePartition {
 public:
  TimePartition(const Schedule& schedule, double T, std::uint64_t horizon)
      : schedule_(schedule), T_(T) {
    if (!(T > 0.0)) throw ValidationError("segment length T must be positive");
    knots_.resize(horizon + 1);
    knots_[0] = 0.0;
    // Kahan summation keeps t(n) faithful over millions of steps.
    double sum = 0.0;
    double carry = 0.0;
    for (std::uint64_t i = 0; i < horizon; ++i) {
      const double y = schedule(i) - carry;
      const double next = sum + y;
      carry = (next - sum) - y;
      sum = next;
      knots_[i + 1] = sum;
    }
    boundaries_.push_back(0);
    while (true) {
      const double end = knots_[boundaries_.back()] + T_;
      if (!(end < knots_.back())) break;
      const std::uint64_t next = m(end) + 1;
      if (next > horizon) break;
      boundaries_.push_back(next);
    }
    // Keep only segments whose whole window [T_n, T_n + T) is covered.
    while (!boundaries_.empty() && !(knots_[boundaries_.back()] + T_ < knots_.back())) {
      boundaries_.pop_back();
    }
  }

  const Schedule& schedule() const noexcept { return schedule_; }
  double T() const noexcept { return T_; }
  std::uint64_t horizon() const noexcept { return knots_.size() - 1; }
  double t(std::uint64_t n) const { return knots_.at(n); }
  const std::vector<double>& knots() const noexcept { return knots_; }
  double alpha(std::uint64_t n) const { return schedule_(n); }

  /// Largest i with t(i) <= time; 0 for time <= 0. The answer is certified
  /// only while time < t(horizon).
  std::uint64_t m(double time) const {
    if (time <= 0.0) return 0;
    if (!(time < knots_.back())) {
      throw ValidationError("time " + std::to_string(time) + " beyond partition horizon " +
                            std::to_string(knots_.back()));
    }
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), time);
    return static_cast<std::uint64_t>(std::distance(knots_.begin(), it) - 1);
  }

  /// Number of complete segment starts T_0..T_{count-1}.
  std::size_t segment_count() const noexcept { return boundaries_.size(); }
  /// Knot index of T_n, i.e. m(T_n).
  std::uint64_t segment_start(std::size_t n) const { return boundaries_.at(n); }
  double segment_time(std::size_t n) const { return knots_[boundaries_.at(n)]; }

 private:
  Schedule schedule_;
  double T_;
  std::vector<double> knots_;
  std::vector<std::uint64_t> boundaries_;
};

inline TimePartition build_partition(const Schedule& schedule, double T, std::uint64_t horizon) {
  return TimePartition(schedule, T, horizon);
}

// ---------------------------------------------------------------------------
// Interpolation and scaling
// ---------------------------------------------------------------------------

/// Piecewise-constant interpolation xbar(t) = x_{m(t)} of every iterate.
struct InterpolatedPath {
  std::vector<Vector> iterates;  ///< x_0, x_1, ..., consecutive
  TimePartition partition;
};

inline Vector interpolate(const InterpolatedPath& path, double t) {
  const auto n = path.iterates.size();
  if (n == 0) throw ValidationError("empty path");
  if (t > 0.0 && !(t < path.partition.t(std::min<std::uint64_t>(n, path.partition.horizon())))) {
    throw ValidationError("t = " + std::to_string(t) + " beyond the recorded horizon");
  }
  const std::uint64_t idx = path.partition.m(t);
  if (idx >= n) throw ValidationError("t beyond the recorded iterates");
  return path.iterates[idx];
}

/// xhat(T_n + t) = xbar(T_n + t) / r_n on the knots of segment n that lie in
/// [T_n, T_n + T).
struct ScaledSegment {
  std::size_t n = 0;
  double r = 1.0;
  double start_time = 0.0;           ///< T_n
  std::uint64_t start_index = 0;     ///< m(T_n)
  std::vector<double> times;         ///< offsets t(i) - T_n
  std::vector<Vector> values;        ///< xhat at those offsets
};

inline ScaledSegment scaled_segment(const InterpolatedPath& path, std::size_t n) {
  const TimePartition& part = path.partition;
  if (n >= part.segment_count()) {
    throw ValidationError("segment " + std::to_string(n) + " not covered by the partition");
  }
  ScaledSegment seg;
  seg.n = n;
  seg.start_index = part.segment_start(n);
  seg.start_time = part.segment_time(n);
  const double end = seg.start_time + part.T();
  const std::uint64_t last = part.m(end);
  if (last >= path.iterates.size()) {
    throw ValidationError("segment " + std::to_string(n) + " needs iterate " +
                          std::to_string(last) + " which was not recorded");
  }
  seg.r = std::max(1.0, path.iterates[seg.start_index].norm());
  for (std::uint64_t i = seg.start_index; i <= last; ++i) {
    const double offset = part.t(i) - seg.start_time;
    if (!(offset < part.T())) break;
    seg.times.push_back(offset);
    seg.values.push_back(path.iterates[i] / seg.r);
  }
  return seg;
}

// ---------------------------------------------------------------------------
// Vector fields
// ---------------------------------------------------------------------------

/// Tag for c = infinity in h_c(x) = h(c x) / c.
struct AtInfinity {};

using FieldScale = std::variant<double, AtInfinity>;

/// Autonomous vector field. Affine fields h(x) = M x + b keep their matrix
/// form so that h_c and h_infinity are exact.
class VectorField {
 public:
  using Fn = std::function<Vector(const Vector&)>;

  static VectorField affine(Matrix M, Vector b, std::string id = "affine") {
    detail::require_dim("field.columns", M.rows(), M.cols());
    detail::require_dim("field.offset", M.rows(), b.size());
    VectorField f;
    f.id_ = std::move(id);
    f.matrix_ = std::move(M);
    f.offset_ = std::move(b);
    return f;
  }

  static VectorField linear(Matrix M, std::string id = "linear") {
    Vector b = Vector::Zero(M.rows());
    return affine(std::move(M), std::move(b), std::move(id));
  }

  static VectorField general(Fn fn, Index dim, std::string id = "general") {
    VectorField f;
    f.id_ = std::move(id);
    f.fn_ = std::move(fn);
    f.dim_ = dim;
    return f;
  }

  Vector operator()(const Vector& x) const {
    if (fn_) return fn_(x);
    return matrix_ * x + offset_;
  }

  void evaluate_into(const Vector& x, Vector& out) const {
    if (fn_) {
      out = fn_(x);
    } else {
      out.noalias() = matrix_ * x;
      out += offset_;
    }
  }

  bool is_affine() const noexcept { return !fn_; }
  Index dim() const noexcept { return fn_ ? dim_ : matrix_.rows(); }
  const Matrix& matrix() const noexcept { return matrix_; }
  const Vector& offset() const noexcept { return offset_; }
  const std::string& id() const noexcept { return id_; }

 private:
  VectorField() = default;

  std::string id_;
  Fn fn_;
  Index dim_ = 0;
  Matrix matrix_;
  Vector offset_;
};

/// h_c(x) = h(c x) / c for c >= 1; for affine h that is M x + b / c, and
/// c = AtInfinity gives h_infinity(x) = M x.
inline VectorField scaled_field(const VectorField& h, FieldScale c) {
  if (std::holds_alternative<AtInfinity>(c)) {
    if (!h.is_affine()) {
      throw ValidationError("h_infinity is only available for affine fields");
    }
    return VectorField::linear(h.matrix(), h.id() + "@inf");
  }
  const double scale = std::get<double>(c);
  if (!(scale >= 1.0) || !std::isfinite(scale)) {
    throw ValidationError("field scale c must be finite and >= 1, got " + std::to_string(scale));
  }
  const std::string id = h.id() + "@c=" + std::to_string(scale);
  if (h.is_affine()) return VectorField::affine(h.matrix(), h.offset() / scale, id);
  auto base = h;
  return VectorField::general(
      [base, scale](const Vector& x) -> Vector { return base(Vector(scale * x)) / scale; },
      h.dim(), id);
}

// ---------------------------------------------------------------------------
// Adaptive Dormand-Prince 5(4)
// ---------------------------------------------------------------------------

struct OdeSolution {
  std::vector<double> grid;
  std::vector<Vector> values;
  std::string field_id;
  std::uint64_t accepted_steps = 0;
  std::uint64_t rejected_steps = 0;
};

struct OdeOptions {
  double abs_tol = 1e-9;
  double rel_tol = 1e-9;
  double initial_step = 0.0;  ///< 0 picks a step from the field scale
  std::uint64_t max_steps = 10'000'000;
};

namespace detail {

class DormandPrince {
 public:
  DormandPrince(const VectorField& f, const OdeOptions& opt) : f_(f), opt_(opt) {}

  /// Advances y from t0 to t1 in place; h carries the step size across calls.
  void advance(Vector& y, double t0, double t1, double& h, OdeSolution& stats) {
    const Index n = y.size();
    for (auto* k : {&k1_, &k2_, &k3_, &k4_, &k5_, &k6_, &k7_}) k->resize(n);
    tmp_.resize(n);
    y5_.resize(n);
    err_.resize(n);
    double t = t0;
    if (h <= 0.0) h = initial_step(y, t1 - t0);
    f_.evaluate_into(y, k1_);
    while (t < t1) {
      if (stats.accepted_steps + stats.rejected_steps >= opt_.max_steps) {
        throw IntegrationError("step budget exhausted", t);
      }
      bool last = false;
      double step = h;
      if (t + step >= t1) {
        step = t1 - t;
        last = true;
      }
      if (step < 1e-14 * std::max(1.0, std::abs(t))) {
        throw IntegrationError("step size underflow", t);
      }
      tmp_ = y + step * (a21 * k1_);
      f_.evaluate_into(tmp_, k2_);
      tmp_ = y + step * (a31 * k1_ + a32 * k2_);
      f_.evaluate_into(tmp_, k3_);
      tmp_ = y + step * (a41 * k1_ + a42 * k2_ + a43 * k3_);
      f_.evaluate_into(tmp_, k4_);
      tmp_ = y + step * (a51 * k1_ + a52 * k2_ + a53 * k3_ + a54 * k4_);
      f_.evaluate_into(tmp_, k5_);
      tmp_ = y + step * (a61 * k1_ + a62 * k2_ + a63 * k3_ + a64 * k4_ + a65 * k5_);
      f_.evaluate_into(tmp_, k6_);
      y5_ = y + step * (b1 * k1_ + b3 * k3_ + b4 * k4_ + b5 * k5_ + b6 * k6_);
      f_.evaluate_into(y5_, k7_);
      err_ = step * (e1 * k1_ + e3 * k3_ + e4 * k4_ + e5 * k5_ + e6 * k6_ + e7 * k7_);

      double err_norm = 0.0;
      for (Index i = 0; i < n; ++i) {
        const double sc = opt_.abs_tol + opt_.rel_tol * std::max(std::abs(y[i]), std::abs(y5_[i]));
        err_norm = std::max(err_norm, std::abs(err_[i]) / sc);
      }
      if (!std::isfinite(err_norm)) {
        ++stats.rejected_steps;
        h = 0.1 * step;
        continue;
      }
      if (err_norm <= 1.0) {
        ++stats.accepted_steps;
        t = last ? t1 : t + step;
        y.swap(y5_);
        k1_.swap(k7_);  // first-same-as-last
        const double factor =
            err_norm == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, 5.0);
        if (!last || factor < 1.0) h = step * factor;
      } else {
        ++stats.rejected_steps;
        h = step * std::max(0.2, 0.9 * std::pow(err_norm, -0.2));
      }
    }
  }

 private:
  double initial_step(const Vector& y, double span) const {
    Vector f0(y.size());
    f_.evaluate_into(y, f0);
    const double fy = detail::inf_norm(f0);
    const double scale = opt_.abs_tol + opt_.rel_tol * detail::inf_norm(y);
    double h = fy > 0.0 ? 0.01 * std::pow(scale / fy, 0.2) : span;
    if (opt_.initial_step > 0.0) h = opt_.initial_step;
    return std::max(std::min(h, span), 1e-12 * std::max(1.0, span));
  }

  static constexpr double a21 = 1.0 / 5.0;
  static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
  static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
  static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                          a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
  static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                          a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
  static constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                          b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
  static constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                          e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

  const VectorField& f_;
  OdeOptions opt_;
  Vector k1_, k2_, k3_, k4_, k5_, k6_, k7_, tmp_, y5_, err_;
};

}  // namespace detail

/// Integrates dz/dt = h(z), z(grid[0]) = x0, reporting z at every grid point.
/// The grid must be non-decreasing.
inline OdeSolution solve_ode(const VectorField& field, const Vector& x0,
                             const std::vector<double>& grid, const OdeOptions& options = {}) {
  detail::require_dim("initial_state", field.dim(), x0.size());
  OdeSolution sol;
  sol.field_id = field.id();
  sol.grid = grid;
  if (grid.empty()) return sol;
  detail::DormandPrince stepper(field, options);
  Vector y = x0;
  double h = options.initial_step;
  sol.values.push_back(y);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (grid[i] < grid[i - 1]) throw ValidationError("ODE grid must be non-decreasing");
    if (grid[i] > grid[i - 1]) stepper.advance(y, grid[i - 1], grid[i], h, sol);
    sol.values.push_back(y);
  }
  return sol;
}

/// Uniform grid of `points` values on [0, T].
inline OdeSolution solve_ode(const VectorField& field, const Vector& x0, double T, double tol,
                             std::size_t points = 2) {
  if (!(T >= 0.0)) throw ValidationError("integration horizon must be non-negative");
  points = std::max<std::size_t>(points, 2);
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = T * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  OdeOptions opt;
  opt.abs_tol = tol;
  opt.rel_tol = tol;
  return solve_ode(field, x0, grid, opt);
}

// ---------------------------------------------------------------------------
// Discretisation error
// ---------------------------------------------------------------------------

/// f_n(t) = xhat(T_n + t) - z_n(t) on the segment grid.
struct ErrorCurve {
  std::size_t segment = 0;
  std::vector<double> times;
  std::vector<Vector> errors;
  std::vector<double> norms;
  double sup_norm = 0.0;
};

inline ErrorCurve discretization_error(const ScaledSegment& segment, const OdeSolution& ode) {
  if (segment.times.size() != ode.grid.size()) {
    throw DimensionError("grid", static_cast<Index>(segment.times.size()),
                         static_cast<Index>(ode.grid.size()));
  }
  ErrorCurve curve;
  curve.segment = segment.n;
  curve.times = segment.times;
  for (std::size_t i = 0; i < segment.times.size(); ++i) {
    if (std::abs(segment.times[i] - ode.grid[i]) > 1e-12 * std::max(1.0, segment.times[i])) {
      throw ValidationError("segment and ODE grids differ at point " + std::to_string(i));
    }
    curve.errors.push_back(segment.values[i] - ode.values[i]);
    curve.norms.push_back(curve.errors.back().norm());
    curve.sup_norm = std::max(curve.sup_norm, curve.norms.back());
  }
  return curve;
}

/// Scaled segment n of `path`, the solution z_n of dz/dt = h_{r_n}(z) from
/// z_n(0) = xhat(T_n) on the segment knots, and their difference.
struct SegmentTracking {
  ScaledSegment segment;
  OdeSolution ode;
  ErrorCurve error;
};

inline SegmentTracking track_segment(const InterpolatedPath& path, const VectorField& h,
                                     std::size_t n, const OdeOptions& options = {}) {
  SegmentTracking out;
  out.segment = scaled_segment(path, n);
  const VectorField hc = scaled_field(h, out.segment.r);
  out.ode = solve_ode(hc, out.segment.values.front(), out.segment.times, options);
  out.error = discretization_error(out.segment, out.ode);
  return out;
}

// ---------------------------------------------------------------------------
// ODE at infinity probe
// ---------------------------------------------------------------------------

/// Terminal-norm threshold for the probe. Any constant in (0, 1) would do.
inline constexpr double kProbeThreshold = 0.25;

enum class ProbeVerdict { consistent, inconsistent, inconclusive };

inline const char* to_string(ProbeVerdict v) {
  switch (v) {
    case ProbeVerdict::consistent: return "consistent";
    case ProbeVerdict::inconsistent: return "inconsistent";
    case ProbeVerdict::inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

struct ProbeResult {
  ProbeVerdict verdict = ProbeVerdict::inconclusive;
  double horizon = 0.0;
  std::vector<double> terminal_norms;
  double max_terminal_norm = 0.0;
  /// Earliest time after which every probed trajectory stays within the
  /// threshold up to the horizon (consistent verdicts only).
  std::optional<double> settle_time;
};

struct ProbeOptions {
  std::uint64_t seed = 0;
  std::size_t grid_points = 400;
  double tol = 1e-9;
  double blowup_norm = 1e8;
};

/// Integrates dx/dt = h(x) from `n_dirs` random unit vectors over [0, horizon].
/// consistent: every terminal norm <= 1/4. inconsistent: some trajectory
/// failed to contract below its starting norm (or blew up). Otherwise
/// inconclusive.
inline ProbeResult ode_at_infinity_probe(const VectorField& h, std::size_t n_dirs, double horizon,
                                         const ProbeOptions& options = {}) {
  if (!(horizon > 0.0)) throw ValidationError("probe horizon must be positive");
  if (n_dirs == 0) throw ValidationError("probe needs at least one direction");
  const Index d = h.dim();
  Rng rng(derive_seed(options.seed, Stream::probe));
  const std::size_t g = std::max<std::size_t>(options.grid_points, 2);
  std::vector<double> grid(g);
  for (std::size_t i = 0; i < g; ++i) {
    grid[i] = horizon * static_cast<double>(i) / static_cast<double>(g - 1);
  }
  OdeOptions opt;
  opt.abs_tol = options.tol;
  opt.rel_tol = options.tol;

  ProbeResult res;
  res.horizon = horizon;
  std::vector<std::vector<Vector>> paths(n_dirs);
  std::vector<double> max_norm_at(g, 0.0);
  bool blew_up = false;
  for (std::size_t k = 0; k < n_dirs; ++k) {
    Vector x0(d);
    for (Index i = 0; i < d; ++i) x0[i] = rng.normal();
    x0 /= x0.norm();
    detail::DormandPrince stepper(h, opt);
    OdeSolution stats;
    Vector y = x0;
    double step = 0.0;
    paths[k].push_back(y);
    max_norm_at[0] = std::max(max_norm_at[0], 1.0);
    for (std::size_t i = 1; i < g; ++i) {
      try {
        stepper.advance(y, grid[i - 1], grid[i], step, stats);
      } catch (const IntegrationError&) {
        blew_up = true;
        break;
      }
      paths[k].push_back(y);
      max_norm_at[i] = std::max(max_norm_at[i], y.norm());
      if (!(y.norm() < options.blowup_norm)) {
        blew_up = true;
        break;
      }
    }
    const double terminal = paths[k].size() == g ? paths[k].back().norm()
                                                 : std::numeric_limits<double>::infinity();
    res.terminal_norms.push_back(terminal);
    res.max_terminal_norm = std::max(res.max_terminal_norm, terminal);
  }

  if (!blew_up && res.max_terminal_norm <= kProbeThreshold) {
    res.verdict = ProbeVerdict::consistent;
    // Last grid interval on which some trajectory is still outside the
    // threshold, refined by bisection.
    std::size_t last_out = 0;
    for (std::size_t i = 0; i < g; ++i) {
      if (max_norm_at[i] > kProbeThreshold) last_out = i;
    }
    double lo = grid[last_out];
    double hi = grid[std::min(last_out + 1, g - 1)];
    auto max_norm_at_time = [&](double t) {
      double worst = 0.0;
      for (std::size_t k = 0; k < n_dirs; ++k) {
        Vector y = paths[k][last_out];
        double step = 0.0;
        OdeSolution stats;
        detail::DormandPrince stepper(h, opt);
        if (t > grid[last_out]) stepper.advance(y, grid[last_out], t, step, stats);
        worst = std::max(worst, y.norm());
      }
      return worst;
    };
    for (int it = 0; it < 60 && hi - lo > 1e-12 * std::max(1.0, hi); ++it) {
      const double mid = 0.5 * (lo + hi);
      if (max_norm_at_time(mid) <= kProbeThreshold) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    res.settle_time = hi;
  } else if (blew_up || res.max_terminal_norm >= 1.0 - 1e-6) {
    res.verdict = ProbeVerdict::inconsistent;
  } else {
    res.verdict = ProbeVerdict::inconclusive;
  }
  return res;
}

/// Horizon after which ||exp(M t)|| <= 1/4 is guaranteed for diagonalisable
/// Hurwitz M: ln(4 kappa(V)) / |max Re lambda| with V the eigenvector
/// matrix. Infinite when M is not Hurwitz.
inline double probe_horizon_estimate(const Matrix& M) {
  Eigen::EigenSolver<Matrix> eig(M, true);
  const double max_re = eig.eigenvalues().real().maxCoeff();
  if (!(max_re < 0.0)) return std::numeric_limits<double>::infinity();
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(eig.eigenvectors());
  const auto& sv = svd.singularValues();
  const double kappa = sv[sv.size() - 1] > 0.0 ? sv[0] / sv[sv.size() - 1]
                                               : std::numeric_limits<double>::infinity();
  return std::log(4.0 * kappa) / -max_re;
}

}  // namespace sarl
