#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "sarl/learners.hpp"
#include "sarl/ode.hpp"
#include "sarl/schedule.hpp"

namespace sarl {

// ---------------------------------------------------------------------------
// Trend fitting
// ---------------------------------------------------------------------------

/// Decay is declared when the log-log slope falls below this.
inline constexpr double kDecaySlope = -0.05;

struct LogLogTrend {
  std::optional<double> slope;
  std::optional<double> p_value;  ///< one-sided, H1: slope < 0
  std::size_t points = 0;
};

/// Ordinary least squares of log(value) on log(n), ignoring non-positive values.
inline LogLogTrend fit_log_log(const std::vector<std::uint64_t>& n, const std::vector<double>& value) {
  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t i = 0; i < n.size() && i < value.size(); ++i) {
    if (n[i] > 0 && value[i] > 0.0 && std::isfinite(value[i])) {
      xs.push_back(std::log(static_cast<double>(n[i])));
      ys.push_back(std::log(value[i]));
    }
  }
  LogLogTrend trend;
  trend.points = xs.size();
  if (xs.size() < 2) return trend;
  const double k = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= k;
  my /= k;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx <= 0.0) return trend;
  const double slope = sxy / sxx;
  trend.slope = slope;
  if (xs.size() > 2) {
    double sse = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double r = ys[i] - (my + slope * (xs[i] - mx));
      sse += r * r;
    }
    const double se = std::sqrt(sse / (k - 2.0) / sxx);
    if (se > 0.0) {
      boost::math::students_t dist(k - 2.0);
      trend.p_value = boost::math::cdf(dist, slope / se);
    } else {
      trend.p_value = slope < 0.0 ? 0.0 : 1.0;
    }
  }
  return trend;
}

/// `count` indices spaced geometrically over [first, last], deduplicated.
inline std::vector<std::uint64_t> geometric_points(std::uint64_t first, std::uint64_t last,
                                                   std::size_t count) {
  std::vector<std::uint64_t> pts;
  if (first == 0 || last < first || count == 0) return pts;
  if (count == 1) return {last};
  const double lf = std::log(static_cast<double>(first));
  const double ll = std::log(static_cast<double>(last));
  for (std::size_t i = 0; i < count; ++i) {
    const double v = std::exp(lf + (ll - lf) * static_cast<double>(i) / static_cast<double>(count - 1));
    const auto p = static_cast<std::uint64_t>(std::llround(v));
    if (pts.empty() || p > pts.back()) pts.push_back(std::clamp(p, first, last));
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Asymptotic rate of change
// ---------------------------------------------------------------------------

/// For each evaluation index n, the exact value of
///   sup_{-tau <= t1 <= t2 <= tau} || sum_{i=m(t(n)+t1)}^{m(t(n)+t2)-1} alpha(i) (g_i - gbar) ||_inf
/// where g_i = g(Y_{i+1}) is column i of the sample matrix.
struct RateOfChangeReport {
  double tau = 0.0;
  Vector centering;
  bool analytic_centering = false;
  std::vector<std::uint64_t> eval_points;
  std::vector<double> values;
  LogLogTrend trend;
  bool decays = false;
};

namespace detail {

inline void finish_rate_report(RateOfChangeReport& rep) {
  rep.trend = fit_log_log(rep.eval_points, rep.values);
  const bool all_zero = std::all_of(rep.values.begin(), rep.values.end(),
                                    [](double v) { return v == 0.0; });
  rep.decays = all_zero || (rep.trend.slope && *rep.trend.slope < kDecaySlope);
}

}  // namespace detail

/// Streaming form of `rate_of_change` for a known centering constant and a
/// known sample count; samples are pushed in order and never stored.
class RateOfChangeAccumulator {
 public:
  RateOfChangeAccumulator(const Schedule& schedule, double tau, std::vector<std::uint64_t> eval_points,
                          Vector centering, std::uint64_t sample_count)
      : schedule_(schedule), tau_(tau), centering_(std::move(centering)) {
    if (!(tau > 0.0)) throw ValidationError("rate_of_change needs tau > 0");
    const TimePartition part(schedule, tau, sample_count);
    const Index dim = centering_.size();
    for (const std::uint64_t n : eval_points) {
      if (n > sample_count) throw ValidationError("evaluation index beyond the sample count");
      const double centre = part.t(n);
      if (!(centre + tau < part.t(sample_count))) {
        throw ValidationError("insufficient samples to cover the window at n = " + std::to_string(n));
      }
      windows_.push_back(Window{n, part.m(centre - tau), part.m(centre + tau), Vector::Zero(dim),
                                Vector::Zero(dim), Vector::Zero(dim)});
    }
  }

  void push(const Eigen::Ref<const Vector>& g) {
    detail::require_dim("sample", centering_.size(), g.size());
    if (!g.allFinite()) throw ValidationError("rate_of_change samples must be finite");
    const std::uint64_t i = count_++;
    double a = 0.0;
    bool have_a = false;
    for (auto& w : windows_) {
      if (i < w.lo || i >= w.hi) continue;
      if (!have_a) {
        a = schedule_(i);
        have_a = true;
      }
      for (Index k = 0; k < g.size(); ++k) {
        w.running[k] += a * (g[k] - centering_[k]);
        w.low[k] = std::min(w.low[k], w.running[k]);
        w.high[k] = std::max(w.high[k], w.running[k]);
      }
    }
  }

  std::uint64_t count() const noexcept { return count_; }

  RateOfChangeReport report(bool analytic_centering = true) const {
    RateOfChangeReport rep;
    rep.tau = tau_;
    rep.centering = centering_;
    rep.analytic_centering = analytic_centering;
    for (const auto& w : windows_) {
      if (count_ < w.hi) throw ValidationError("window at n = " + std::to_string(w.n) + " not yet filled");
      rep.eval_points.push_back(w.n);
      rep.values.push_back(w.running.size() > 0 ? (w.high - w.low).maxCoeff() : 0.0);
    }
    detail::finish_rate_report(rep);
    return rep;
  }

 private:
  struct Window {
    std::uint64_t n;
    std::uint64_t lo;
    std::uint64_t hi;
    Vector running;
    Vector low;
    Vector high;
  };

  Schedule schedule_;
  double tau_;
  Vector centering_;
  std::vector<Window> windows_;
  std::uint64_t count_ = 0;
};

inline RateOfChangeReport rate_of_change(const Matrix& g_samples, const Schedule& schedule,
                                         double tau, const std::vector<std::uint64_t>& eval_points,
                                         const std::optional<Vector>& centering = std::nullopt) {
  if (!(tau > 0.0)) throw ValidationError("rate_of_change needs tau > 0");
  if (!g_samples.allFinite()) throw ValidationError("rate_of_change samples must be finite");
  const Index dim = g_samples.rows();
  const auto count = static_cast<std::uint64_t>(g_samples.cols());
  Vector c;
  if (centering) {
    detail::require_dim("centering", dim, centering->size());
    c = *centering;
  } else {
    c = count > 0 ? Vector(g_samples.rowwise().mean()) : Vector::Zero(dim);
  }
  RateOfChangeAccumulator acc(schedule, tau, eval_points, c, count);
  for (Index i = 0; i < g_samples.cols(); ++i) acc.push(g_samples.col(i));
  return acc.report(centering.has_value());
}

// ---------------------------------------------------------------------------
// Law of large numbers
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kMinLlnSamples = 10'000;

/// Streaming running mean that snapshots (1/n) sum_{i<=n} g_i at checkpoints.
class RunningMeanTracker {
 public:
  RunningMeanTracker(Index dim, std::vector<std::uint64_t> checkpoints)
      : sum_(Vector::Zero(dim)), checkpoints_(std::move(checkpoints)) {
    std::sort(checkpoints_.begin(), checkpoints_.end());
  }

  void push(const Eigen::Ref<const Vector>& g) {
    detail::require_dim("sample", sum_.size(), g.size());
    sum_ += g;
    ++count_;
    while (next_ < checkpoints_.size() && checkpoints_[next_] <= count_) {
      if (checkpoints_[next_] == count_) {
        recorded_at_.push_back(count_);
        means_.push_back(sum_ / static_cast<double>(count_));
      }
      ++next_;
    }
  }

  std::uint64_t count() const noexcept { return count_; }
  Vector mean() const {
    return count_ > 0 ? Vector(sum_ / static_cast<double>(count_)) : Vector::Zero(sum_.size());
  }
  const std::vector<std::uint64_t>& recorded_at() const noexcept { return recorded_at_; }
  const std::vector<Vector>& means() const noexcept { return means_; }

 private:
  Vector sum_;
  std::uint64_t count_ = 0;
  std::vector<std::uint64_t> checkpoints_;
  std::size_t next_ = 0;
  std::vector<std::uint64_t> recorded_at_;
  std::vector<Vector> means_;
};

struct LlnReport {
  std::uint64_t samples = 0;
  std::vector<std::uint64_t> checkpoints;
  std::vector<Vector> running_means;
  Vector terminal_mean;
  std::optional<Vector> reference;
  std::vector<double> relative_errors;  ///< at checkpoints, when a reference is given
  std::optional<double> terminal_relative_error;
};

inline LlnReport lln_check(const RunningMeanTracker& tracker,
                           const std::optional<Vector>& reference = std::nullopt) {
  if (tracker.count() < kMinLlnSamples) {
    throw ValidationError("lln_check needs at least 10^4 samples");
  }
  LlnReport rep;
  rep.samples = tracker.count();
  rep.checkpoints = tracker.recorded_at();
  rep.running_means = tracker.means();
  rep.terminal_mean = tracker.mean();
  if (reference) {
    detail::require_dim("reference", rep.terminal_mean.size(), reference->size());
    rep.reference = *reference;
    const double scale = reference->norm();
    auto rel = [&](const Vector& m) {
      return scale > 0.0 ? (m - *reference).norm() / scale : (m - *reference).norm();
    };
    for (const auto& m : rep.running_means) rep.relative_errors.push_back(rel(m));
    rep.terminal_relative_error = rel(rep.terminal_mean);
  }
  return rep;
}

/// Column i of `g_samples` is g(Y_{i+1}). Default checkpoints are spaced
/// geometrically from 10 up to the sample count.
inline LlnReport lln_check(const Matrix& g_samples,
                           const std::optional<Vector>& reference = std::nullopt,
                           std::vector<std::uint64_t> checkpoints = {}) {
  const auto count = static_cast<std::uint64_t>(g_samples.cols());
  if (checkpoints.empty()) checkpoints = geometric_points(10, std::max<std::uint64_t>(count, 10), 25);
  RunningMeanTracker tracker(g_samples.rows(), std::move(checkpoints));
  for (Index i = 0; i < g_samples.cols(); ++i) tracker.push(g_samples.col(i));
  return lln_check(tracker, reference);
}

/// Flattens a matrix column-major so that matrix-valued g fits the vector API.
inline Vector flatten(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

// ---------------------------------------------------------------------------
// Stability and traces
// ---------------------------------------------------------------------------

enum class StabilityVerdict { bounded_consistent, diverged };

inline const char* to_string(StabilityVerdict v) {
  return v == StabilityVerdict::bounded_consistent ? "bounded-consistent" : "diverged";
}

struct StabilityReport {
  std::vector<std::uint64_t> steps;
  std::vector<double> running_max;   ///< max ||x_n|| up to each recorded row
  std::vector<double> decile_max;    ///< max ||x_n|| within each tenth of the run
  double overall_max = 0.0;
  double last_decile_max = 0.0;
  double middle_decile_max = 0.0;    ///< decile covering the run's midpoint
  bool tail_not_above_middle = false;
  bool diverged = false;
  std::optional<std::uint64_t> guard_crossed_at;
  StabilityVerdict verdict = StabilityVerdict::diverged;
};

namespace detail {

/// Which tenth of [0, total] a step falls into; step 0 belongs to the first.
inline std::size_t decile_of(std::uint64_t step, std::uint64_t total) {
  if (total == 0 || step == 0) return 0;
  const auto d = static_cast<std::size_t>((10 * (step - 1)) / total);
  return std::min<std::size_t>(d, 9);
}

}  // namespace detail

inline StabilityReport stability_monitor(const Trajectory& traj) {
  StabilityReport rep;
  rep.decile_max.assign(10, 0.0);
  const std::uint64_t total = traj.steps.empty() ? 0 : traj.steps.back();
  double running = 0.0;
  for (std::size_t j = 0; j < traj.steps.size(); ++j) {
    const double window = j < traj.window_max_norm_x.size()
                              ? std::max(traj.window_max_norm_x[j], traj.norm_x[j])
                              : traj.norm_x[j];
    if (!(window <= kOverflowGuard) && !rep.guard_crossed_at) rep.guard_crossed_at = traj.steps[j];
    running = std::isfinite(window) ? std::max(running, window)
                                    : std::numeric_limits<double>::infinity();
    rep.steps.push_back(traj.steps[j]);
    rep.running_max.push_back(running);
    auto& slot = rep.decile_max[detail::decile_of(traj.steps[j], total)];
    slot = std::isfinite(window) ? std::max(slot, window) : std::numeric_limits<double>::infinity();
  }
  rep.overall_max = running;
  rep.last_decile_max = rep.decile_max[9];
  rep.middle_decile_max = rep.decile_max[4];
  rep.tail_not_above_middle = rep.last_decile_max <= rep.middle_decile_max;
  const bool any_flag =
      std::any_of(traj.diverged_flags.begin(), traj.diverged_flags.end(), [](char c) { return c != 0; });
  rep.diverged = traj.diverged || any_flag || rep.guard_crossed_at.has_value();
  rep.verdict = !rep.diverged && rep.last_decile_max <= rep.overall_max
                    ? StabilityVerdict::bounded_consistent
                    : StabilityVerdict::diverged;
  return rep;
}

struct TraceReport {
  double q50 = 0.0;
  double q90 = 0.0;
  double q99 = 0.0;
  double max_norm = 0.0;
  std::vector<std::uint64_t> steps;
  std::vector<double> running_max;
  std::optional<double> followon_q99;
  std::optional<double> followon_max;
  double early_running_max = 0.0;  ///< running max after the first tenth of the run
  bool heavy_tail = false;
};

/// Growth factor of the running trace maximum, from the first tenth of the
/// run to its end, above which the trace is flagged heavy-tailed.
inline constexpr double kHeavyTailBand = 1.5;

namespace detail {

inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * values[lo] + w * values[hi];
}

}  // namespace detail

inline TraceReport trace_statistics(const Trajectory& traj) {
  TraceReport rep;
  rep.q50 = detail::quantile(traj.norm_e, 0.5);
  rep.q90 = detail::quantile(traj.norm_e, 0.9);
  rep.q99 = detail::quantile(traj.norm_e, 0.99);
  const std::uint64_t total = traj.steps.empty() ? 0 : traj.steps.back();
  double running = 0.0;
  for (std::size_t j = 0; j < traj.steps.size(); ++j) {
    const double w = j < traj.window_max_norm_e.size() ? std::max(traj.window_max_norm_e[j], traj.norm_e[j])
                                                       : traj.norm_e[j];
    running = std::max(running, w);
    rep.steps.push_back(traj.steps[j]);
    rep.running_max.push_back(running);
    if (10 * traj.steps[j] <= total) rep.early_running_max = running;
  }
  rep.max_norm = running;
  if (!traj.followon.empty()) {
    rep.followon_q99 = detail::quantile(traj.followon, 0.99);
    rep.followon_max = *std::max_element(traj.followon.begin(), traj.followon.end());
  }
  rep.heavy_tail = rep.early_running_max > 0.0 && rep.max_norm > kHeavyTailBand * rep.early_running_max;
  return rep;
}

}  // namespace sarl
