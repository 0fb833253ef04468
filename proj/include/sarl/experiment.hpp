#pragma once

#include <cstdint>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>

#include "sarl/diagnostics.hpp"
#include "sarl/environments.hpp"
#include "sarl/io.hpp"
#include "sarl/learners.hpp"
#include "sarl/ode.hpp"
#include "sarl/schedule.hpp"
#include "sarl/spectral.hpp"

namespace sarl {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct EnvironmentSpec {
  std::string name;                    ///< builtin name; empty when `file` is used
  std::string file;                    ///< MDP specification file
  std::string target = "pi";           ///< policy names inside `file`
  std::string behaviour = "mu";
  std::optional<std::uint64_t> seed;   ///< random_offpolicy instance; default: the run seed
  RandomOffPolicyOptions sizes;
};

struct DiagnosticsSpec {
  bool rate_of_change = false;
  double tau = 1.0;
  std::size_t eval_count = 12;
  bool lln = false;
  bool ode_tracking = false;
  double segment_length = 1.0;         ///< T
  std::uint64_t ode_max_steps = 200'000;
};

struct ExperimentConfig {
  EnvironmentSpec environment;
  Algorithm algorithm = Algorithm::gtd;
  double lambda = 0.0;
  double B1 = 1.0;
  double B2 = 1.0;
  double beta = 1.0;
  std::uint64_t n_steps = 0;
  std::vector<std::uint64_t> seeds;
  std::uint64_t record_stride = 100;
  std::optional<Vector> interest;
  std::optional<Vector> theta0;        ///< overrides the bundle suggestion
  std::string output_dir;
  DiagnosticsSpec diagnostics;

  Schedule schedule() const { return Schedule::make(B1, B2, beta); }
};

namespace detail {

template <class T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ValidationError(std::string("config field '") + key + "' has the wrong type");
  }
}

inline Vector json_vector(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + " must be an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Index>(i)] = number_at(j[i], where + "[" + std::to_string(i) + "]");
  }
  return v;
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& j) {
  using detail::get_or;
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  ExperimentConfig c;
  const Json& env = detail::require_field(j, "environment");
  if (env.is_string()) {
    c.environment.name = env.get<std::string>();
  } else if (env.is_object()) {
    c.environment.name = get_or<std::string>(env, "name", "");
    c.environment.file = get_or<std::string>(env, "file", "");
    c.environment.target = get_or<std::string>(env, "target", "pi");
    c.environment.behaviour = get_or<std::string>(env, "behaviour", "mu");
    if (env.contains("seed")) c.environment.seed = get_or<std::uint64_t>(env, "seed", 0);
    auto& z = c.environment.sizes;
    z.n_states = get_or<Index>(env, "n_states", z.n_states);
    z.n_actions = get_or<Index>(env, "n_actions", z.n_actions);
    z.n_features = get_or<Index>(env, "n_features", z.n_features);
    z.gamma = get_or<double>(env, "gamma", z.gamma);
  } else {
    throw ValidationError("'environment' must be a name or an object");
  }
  if (c.environment.name.empty() == c.environment.file.empty()) {
    throw ValidationError("environment needs exactly one of 'name' or 'file'");
  }
  c.algorithm = parse_algorithm(detail::require_field(j, "algorithm").get<std::string>());
  c.lambda = get_or<double>(j, "lambda", 0.0);
  const Json& sch = detail::require_field(j, "schedule");
  c.B1 = detail::number_at(detail::require_field(sch, "B1"), "schedule.B1");
  c.B2 = detail::number_at(detail::require_field(sch, "B2"), "schedule.B2");
  c.beta = detail::number_at(detail::require_field(sch, "beta"), "schedule.beta");
  c.n_steps = get_or<std::uint64_t>(j, "n_steps", 0);
  const Json& seeds = detail::require_field(j, "seeds");
  if (!seeds.is_array()) throw ValidationError("'seeds' must be an array");
  for (const auto& s : seeds) {
    if (!s.is_number_unsigned()) throw ValidationError("seeds must be non-negative integers");
    c.seeds.push_back(s.get<std::uint64_t>());
  }
  c.record_stride = get_or<std::uint64_t>(j, "record_stride", 100);
  if (j.contains("interest")) c.interest = detail::json_vector(j.at("interest"), "interest");
  if (j.contains("theta0")) c.theta0 = detail::json_vector(j.at("theta0"), "theta0");
  c.output_dir = get_or<std::string>(j, "output_dir", "");
  if (j.contains("diagnostics")) {
    const Json& d = j.at("diagnostics");
    auto& g = c.diagnostics;
    g.rate_of_change = get_or<bool>(d, "rate_of_change", g.rate_of_change);
    g.tau = get_or<double>(d, "tau", g.tau);
    g.eval_count = get_or<std::size_t>(d, "eval_count", g.eval_count);
    g.lln = get_or<bool>(d, "lln", g.lln);
    g.ode_tracking = get_or<bool>(d, "ode_tracking", g.ode_tracking);
    g.segment_length = get_or<double>(d, "segment_length", g.segment_length);
    g.ode_max_steps = get_or<std::uint64_t>(d, "ode_max_steps", g.ode_max_steps);
  }
  return c;
}

inline Json to_json(const ExperimentConfig& c) {
  Json env;
  if (!c.environment.file.empty()) {
    env = Json{{"file", c.environment.file},
               {"target", c.environment.target},
               {"behaviour", c.environment.behaviour}};
  } else {
    env = Json{{"name", c.environment.name}};
    if (c.environment.name == "random_offpolicy") {
      env["n_states"] = c.environment.sizes.n_states;
      env["n_actions"] = c.environment.sizes.n_actions;
      env["n_features"] = c.environment.sizes.n_features;
      env["gamma"] = c.environment.sizes.gamma;
    }
  }
  if (c.environment.seed) env["seed"] = *c.environment.seed;
  Json j{{"environment", env},
         {"algorithm", std::string(to_string(c.algorithm))},
         {"lambda", c.lambda},
         {"schedule", {{"B1", c.B1}, {"B2", c.B2}, {"beta", c.beta}}},
         {"n_steps", c.n_steps},
         {"seeds", c.seeds},
         {"record_stride", c.record_stride}};
  if (c.interest) j["interest"] = to_json(*c.interest);
  if (c.theta0) j["theta0"] = to_json(*c.theta0);
  j["output_dir"] = c.output_dir;
  const auto& d = c.diagnostics;
  j["diagnostics"] = Json{{"rate_of_change", d.rate_of_change}, {"tau", d.tau},
                          {"eval_count", d.eval_count},         {"lln", d.lln},
                          {"ode_tracking", d.ode_tracking},     {"segment_length", d.segment_length},
                          {"ode_max_steps", d.ode_max_steps}};
  return j;
}

/// 64-bit FNV-1a of the canonical config text, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  Json j = to_json(c);
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline EnvironmentBundle resolve_environment(const ExperimentConfig& c, std::uint64_t run_seed) {
  const auto& e = c.environment;
  if (!e.file.empty()) {
    return bundle_from_spec(load_mdp_file(e.file), e.file, e.target, e.behaviour);
  }
  return builtin_environment(e.name, e.seed.value_or(run_seed), e.sizes);
}

/// Checks everything that can be checked without running: parameter ranges,
/// seed list, algorithm and environment compatibility.
inline void validate_config(const ExperimentConfig& c) {
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) throw ValidationError("lambda must lie in [0,1]");
  (void)c.schedule();
  if (c.n_steps == 0) throw ValidationError("n_steps must be positive");
  if (c.seeds.empty()) throw ValidationError("seeds must be non-empty");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    throw ValidationError("seeds must be distinct");
  }
  if (c.record_stride == 0) throw ValidationError("record_stride must be positive");
  if (c.output_dir.empty()) throw ValidationError("output_dir must be set");
  if (c.interest && c.algorithm != Algorithm::etd) {
    throw ValidationError("interest is only meaningful for etd");
  }
  const auto& d = c.diagnostics;
  if (d.rate_of_change && !(d.tau > 0.0)) throw ValidationError("diagnostics.tau must be positive");
  if (d.ode_tracking && !(d.segment_length > 0.0)) {
    throw ValidationError("diagnostics.segment_length must be positive");
  }
  const bool per_seed = c.environment.name == "random_offpolicy" && !c.environment.seed;
  const std::vector<std::uint64_t> env_seeds =
      per_seed ? c.seeds : std::vector<std::uint64_t>{c.seeds.front()};
  for (const std::uint64_t s : env_seeds) {
    const EnvironmentBundle b = resolve_environment(c, s);
    LearnerConfig lc{c.algorithm, c.lambda, c.interest.value_or(Vector()), c.record_stride,
                     c.theta0 ? c.theta0 : b.theta0, std::nullopt};
    if (c.algorithm != Algorithm::etd) lc.interest = Vector();
    detail::validate_learner(lc, b.mdp, b.pi, b.mu, b.features);
  }
}

// ---------------------------------------------------------------------------
// Single-seed runs
// ---------------------------------------------------------------------------

/// Mean-field data for the configured algorithm: the SA field h(x) = Mx + c
/// and, when it exists, the fixed point theta* = -A^{-1} b.
struct MeanField {
  std::optional<VectorField> field;
  std::optional<Matrix> A;         ///< expected A(Y); the LLN reference
  std::optional<Vector> b;
  std::optional<Vector> theta_star;
  Json spectral = Json::object();
};

inline MeanField mean_field(const ExperimentConfig& c, const EnvironmentBundle& b) {
  MeanField mf;
  const Policy& behaviour = c.algorithm == Algorithm::td ? b.pi : b.mu;
  const Vector interest = c.interest.value_or(b.interest);
  mf.spectral["algorithm"] = std::string(to_string(c.algorithm));
  mf.spectral["lambda"] = c.lambda;
  try {
    switch (c.algorithm) {
      case Algorithm::td:
      case Algorithm::offpolicy_td: {
        const TdSystem sys = off_policy_td_system(b.mdp, b.pi, behaviour, c.lambda, b.features);
        mf.A = sys.A;
        mf.b = sys.b;
        mf.field = VectorField::affine(sys.A, sys.b, "td_mean_field");
        mf.spectral["mean_field"] = to_json(spectral_report(sys.A, sys.b));
        break;
      }
      case Algorithm::gtd: {
        const TdSystem td = off_policy_td_system(b.mdp, b.pi, b.mu, c.lambda, b.features);
        mf.A = td.A;
        mf.b = td.b;
        if (b.features.first_dependent_column() >= 0) {
          mf.spectral["A"] = to_json(spectral_report(td.A, td.b));
          const Matrix C = b.features.matrix().transpose() *
                           detail::behaviour_distribution(b.mdp, b.mu).asDiagonal() *
                           b.features.matrix();
          const Matrix blk = gtd_block_matrix(td.A, 0.5 * (C + C.transpose()));
          Vector bb = Vector::Zero(2 * td.b.size());
          bb.head(td.b.size()) = td.b;
          mf.field = VectorField::affine(blk, bb, "gtd_mean_field");
          mf.spectral["mean_field"] = to_json(spectral_report(blk, bb));
        } else {
          const GtdSystem sys = gtd_expected_system(b.mdp, b.pi, b.mu, c.lambda, b.features);
          mf.field = VectorField::affine(sys.A_block, sys.b_block, "gtd_mean_field");
          mf.spectral["A"] = to_json(spectral_report(sys.A, sys.b));
          mf.spectral["mean_field"] = to_json(spectral_report(sys.A_block, sys.b_block));
        }
        break;
      }
      case Algorithm::etd: {
        if (b.features.first_dependent_column() >= 0) {
          const TdSystem sys = off_policy_td_system(b.mdp, b.pi, b.mu, c.lambda, b.features);
          mf.spectral["note"] = "features rank deficient; emphatic system unavailable";
          mf.spectral["mean_field"] = to_json(spectral_report(sys.A, sys.b));
        } else {
          const EtdSystem sys = etd_expected_system(b.mdp, b.pi, b.mu, c.lambda, interest, b.features);
          mf.A = sys.A;
          mf.b = sys.b;
          mf.field = VectorField::affine(sys.A, sys.b, "etd_mean_field");
          mf.spectral["mean_field"] = to_json(spectral_report(sys.A, sys.b));
          mf.spectral["emphatic_weighting"] = to_json(sys.m);
        }
        break;
      }
    }
  } catch (const Error& e) {
    mf.spectral["error"] = e.what();
  }
  if (mf.A && mf.b && b.features.first_dependent_column() < 0) {
    mf.theta_star = fixed_point(*mf.A, *mf.b);
  }
  mf.spectral["theta_star"] = mf.theta_star ? to_json(*mf.theta_star) : Json(nullptr);
  return mf;
}

inline std::string trajectory_csv(const Trajectory& t) {
  std::string out = "step,alpha";
  const Index k = t.dim;
  for (Index i = 0; i < k; ++i) out += ",theta_" + std::to_string(i);
  if (t.has_nu()) {
    for (Index i = 0; i < k; ++i) out += ",nu_" + std::to_string(i);
  }
  out += ",norm_x,norm_e";
  const bool etd = t.algorithm == Algorithm::etd;
  if (etd) out += ",F";
  out += ",diverged\n";
  for (std::size_t j = 0; j < t.steps.size(); ++j) {
    out += std::to_string(t.steps[j]) + "," + format_double(t.alphas[j]);
    const Vector& x = t.iterates[j];
    const Index off = t.has_nu() ? k : 0;
    for (Index i = 0; i < k; ++i) out += "," + format_double(x[off + i]);
    if (t.has_nu()) {
      for (Index i = 0; i < k; ++i) out += "," + format_double(x[i]);
    }
    out += "," + format_double(t.norm_x[j]) + "," + format_double(t.norm_e[j]);
    if (etd) out += "," + format_double(t.followon[j]);
    out += t.diverged_flags[j] ? ",1\n" : ",0\n";
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::ptrdiff_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<std::ptrdiff_t>(i);
    }
    return -1;
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::istringstream in(read_text(path));
  CsvTable t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  if (!std::getline(in, line)) throw ValidationError(path + " is empty");
  t.header = split(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != t.header.size()) {
      throw ValidationError(path + ":" + std::to_string(lineno) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(t.header.size()));
    }
    std::vector<double> row;
    for (const auto& c : cells) row.push_back(parse_double(c));
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// Per-seed products of one run. `trajectory` is kept for in-process callers.
struct SeedResult {
  std::uint64_t seed = 0;
  std::string directory;
  Trajectory trajectory;
  std::optional<Vector> theta_star;
  bool diverged = false;
  std::optional<double> terminal_error;
  std::optional<double> relative_error;
  StabilityReport stability;
  TraceReport traces;
};

inline std::string seed_directory(const std::string& root, std::uint64_t seed) {
  return (std::filesystem::path(root) / ("seed_" + std::to_string(seed))).string();
}

/// Runs one seed and writes its directory: trajectory.csv, metadata.json,
/// bundle.json, spectral.json, assumptions.json, diagnostics.json and, when
/// requested, rate_of_change.csv, lln.json and ode_tracking.csv.
inline SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  namespace fs = std::filesystem;
  SeedResult res;
  res.seed = seed;
  res.directory = seed_directory(cfg.output_dir, seed);
  fs::create_directories(res.directory);
  const auto path = [&](const char* name) { return (fs::path(res.directory) / name).string(); };

  const EnvironmentBundle bundle = resolve_environment(cfg, seed);
  const Schedule schedule = cfg.schedule();
  const MeanField mf = mean_field(cfg, bundle);
  const Index k = bundle.features.dim();

  LearnerConfig lc;
  lc.algorithm = cfg.algorithm;
  lc.lambda = cfg.lambda;
  lc.record_stride = cfg.record_stride;
  if (cfg.algorithm == Algorithm::etd) lc.interest = cfg.interest.value_or(bundle.interest);
  lc.theta0 = cfg.theta0 ? cfg.theta0 : bundle.theta0;

  const auto& dg = cfg.diagnostics;
  const bool want_roc = dg.rate_of_change && mf.A.has_value();
  const bool want_lln = dg.lln && mf.A.has_value() && cfg.n_steps >= kMinLlnSamples;
  const bool want_ode = dg.ode_tracking && mf.field.has_value() && cfg.n_steps <= dg.ode_max_steps;

  std::optional<RateOfChangeAccumulator> roc;
  if (want_roc) {
    // Largest n whose window still fits inside the run.
    const TimePartition part(schedule, dg.tau, cfg.n_steps);
    std::uint64_t last = 0;
    const double limit = part.t(cfg.n_steps) - dg.tau;
    if (limit > dg.tau) last = part.m(limit);
    while (last > 0 && !(part.t(last) + dg.tau < part.t(cfg.n_steps))) --last;
    const std::uint64_t first = std::max<std::uint64_t>(1, part.m(dg.tau) + 1);
    if (last > first) {
      roc.emplace(schedule, dg.tau, geometric_points(first, last, dg.eval_count), flatten(*mf.A),
                  cfg.n_steps);
    }
  }
  std::optional<RunningMeanTracker> lln;
  if (want_lln) lln.emplace(k * k, geometric_points(kMinLlnSamples / 10, cfg.n_steps, 13));
  std::vector<Vector> path_iterates;

  Matrix sample_a(k, k);
  Vector diff(k);
  StepObserver observer;
  if (roc || lln || want_ode) {
    observer = [&](const StepView& v) {
      if (roc || lln) {
        diff = bundle.mdp.gamma() * v.sample.phi_next - v.sample.phi;
        sample_a.noalias() = v.sample.rho * v.trace * diff.transpose();
        const Vector g = flatten(sample_a);
        if (roc) roc->push(g);
        if (lln) lln->push(g);
      }
      if (want_ode) path_iterates.push_back(v.x_before);
    };
  }

  res.trajectory = run(lc, bundle.mdp, bundle.pi, bundle.mu, bundle.features, schedule, cfg.n_steps,
                       seed, observer);
  const Trajectory& traj = res.trajectory;
  write_text(path("trajectory.csv"), trajectory_csv(traj));

  ExperimentConfig single = cfg;
  single.seeds = {seed};
  Json meta{{"config", to_json(single)},
            {"config_hash", config_hash(cfg)},
            {"seed", seed},
            {"environment_seed", derive_seed(cfg.environment.seed.value_or(seed), Stream::environment)},
            {"trajectory_seed", derive_seed(seed, Stream::trajectory)},
            {"rng", std::string(Rng::name)},
            {"version", kVersion},
            {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                  std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                  std::to_string(EIGEN_MINOR_VERSION)},
            {"compiler", __VERSION__},
            {"timestamp", static_cast<std::int64_t>(std::time(nullptr))}};
  write_json(path("metadata.json"), meta);
  write_json(path("bundle.json"), to_json(bundle));
  write_json(path("spectral.json"), mf.spectral);
  write_json(path("assumptions.json"), to_json(check_assumptions(bundle, cfg.lambda, schedule)));

  res.theta_star = mf.theta_star;
  res.diverged = traj.diverged;
  if (mf.theta_star && !traj.iterates.empty()) {
    const Vector theta = traj.theta(traj.iterates.size() - 1);
    res.terminal_error = (theta - *mf.theta_star).norm();
    const double scale = mf.theta_star->norm();
    if (scale > 0.0) res.relative_error = *res.terminal_error / scale;
  }
  res.stability = stability_monitor(traj);
  res.traces = trace_statistics(traj);
  Json diag{{"stability", to_json(res.stability)}, {"traces", to_json(res.traces)}};

  if (roc && roc->count() == cfg.n_steps) {
    const RateOfChangeReport r = roc->report(true);
    diag["rate_of_change"] = to_json(r);
    write_text(path("rate_of_change.csv"), curve_csv(r));
  }
  if (lln && !traj.diverged) {
    const LlnReport r = lln_check(*lln, flatten(*mf.A));
    diag["lln"] = to_json(r);
    write_json(path("lln.json"), to_json(r));
  }
  if (want_ode && !traj.diverged) {
    path_iterates.push_back(traj.iterates.back());
    const TimePartition part(schedule, dg.segment_length, path_iterates.size() - 1);
    const InterpolatedPath ip{std::move(path_iterates), part};
    std::string csv = "segment,start_step,start_time,r,sup_norm\n";
    Json sups = Json::array();
    for (std::size_t n = 0; n < part.segment_count(); ++n) {
      const SegmentTracking st = track_segment(ip, *mf.field, n);
      csv += std::to_string(n) + "," + std::to_string(st.segment.start_index) + "," +
             format_double(st.segment.start_time) + "," + format_double(st.segment.r) + "," +
             format_double(st.error.sup_norm) + "\n";
      sups.push_back(json_number(st.error.sup_norm));
    }
    write_text(path("ode_tracking.csv"), csv);
    diag["ode_tracking"] = Json{{"segment_length", dg.segment_length}, {"sup_norms", sups}};
  }
  write_json(path("diagnostics.json"), diag);
  return res;
}

// ---------------------------------------------------------------------------
// Batch runs
// ---------------------------------------------------------------------------

struct ExperimentResult {
  std::string directory;
  std::vector<SeedResult> seeds;
  Json summary;
};

inline Json summary_entry(const SeedResult& r) {
  Json e{{"seed", r.seed},
         {"diverged", r.diverged},
         {"diverged_at", r.trajectory.diverged_at ? Json(*r.trajectory.diverged_at) : Json(nullptr)},
         {"completed_steps", r.trajectory.completed_steps},
         {"stability", to_string(r.stability.verdict)},
         {"max_norm_x", json_number(r.trajectory.max_norm_x)},
         {"max_norm_e", json_number(r.trajectory.max_norm_e)},
         {"terminal_error", r.terminal_error ? json_number(*r.terminal_error) : Json(nullptr)},
         {"relative_error", r.relative_error ? json_number(*r.relative_error) : Json(nullptr)}};
  if (!r.trajectory.iterates.empty()) {
    e["final_theta"] = to_json(r.trajectory.theta(r.trajectory.iterates.size() - 1));
  }
  return e;
}

/// Validates, runs every seed (in parallel, each inside its own
/// subdirectory) and reduces the results into summary.json.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, unsigned max_threads = 0) {
  validate_config(cfg);
  std::filesystem::create_directories(cfg.output_dir);
  write_json((std::filesystem::path(cfg.output_dir) / "config.json").string(), to_json(cfg));

  const std::size_t n = cfg.seeds.size();
  std::vector<std::optional<SeedResult>> results(n);
  std::vector<std::exception_ptr> errors(n);
  unsigned workers = max_threads ? max_threads : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  std::size_t next = 0;
  std::mutex lock;
  auto worker = [&]() {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> g(lock);
        if (next >= n) return;
        i = next++;
      }
      try {
        results[i] = run_seed(cfg, cfg.seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ExperimentResult out;
  out.directory = cfg.output_dir;
  Json entries = Json::array();
  for (auto& r : results) {
    entries.push_back(summary_entry(*r));
    out.seeds.push_back(std::move(*r));
  }
  out.summary = Json{{"config_hash", config_hash(cfg)},
                     {"algorithm", std::string(to_string(cfg.algorithm))},
                     {"lambda", cfg.lambda},
                     {"n_steps", cfg.n_steps},
                     {"seeds", entries}};
  write_json((std::filesystem::path(cfg.output_dir) / "summary.json").string(), out.summary);
  return out;
}

/// Loads a config file, or the "config" object of a per-seed metadata file.
inline ExperimentConfig load_config(const std::string& path) {
  const Json j = read_json(path);
  return parse_config(j.contains("config") && j.at("config").is_object() ? j.at("config") : j);
}

// ---------------------------------------------------------------------------
// Post-processing over artifact directories
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::filesystem::path> seed_dirs(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw ValidationError("artifact directory '" + root + "' not found");
  std::vector<std::pair<std::uint64_t, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && name.rfind("seed_", 0) == 0) {
      try {
        found.emplace_back(std::stoull(name.substr(5)), entry.path());
      } catch (const std::exception&) {
      }
    }
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& f : found) out.push_back(f.second);
  return out;
}

inline Trajectory trajectory_from_csv(const CsvTable& t, Algorithm algorithm) {
  Trajectory traj;
  traj.algorithm = algorithm;
  Index k = 0;
  while (t.column("theta_" + std::to_string(k)) >= 0) ++k;
  traj.dim = k;
  const auto c_norm_x = t.column("norm_x");
  const auto c_norm_e = t.column("norm_e");
  const auto c_f = t.column("F");
  const auto c_div = t.column("diverged");
  const auto c_step = t.column("step");
  const auto c_alpha = t.column("alpha");
  if (c_norm_x < 0 || c_norm_e < 0 || c_div < 0 || c_step < 0 || c_alpha < 0) {
    throw ValidationError("trajectory CSV is missing required columns");
  }
  for (const auto& row : t.rows) {
    traj.steps.push_back(static_cast<std::uint64_t>(row[static_cast<std::size_t>(c_step)]));
    traj.alphas.push_back(row[static_cast<std::size_t>(c_alpha)]);
    Vector x(traj.has_nu() ? 2 * k : k);
    const Index off = traj.has_nu() ? k : 0;
    for (Index i = 0; i < k; ++i) {
      x[off + i] = row[static_cast<std::size_t>(t.column("theta_" + std::to_string(i)))];
      if (traj.has_nu()) x[i] = row[static_cast<std::size_t>(t.column("nu_" + std::to_string(i)))];
    }
    traj.iterates.push_back(x);
    traj.norm_x.push_back(row[static_cast<std::size_t>(c_norm_x)]);
    traj.norm_e.push_back(row[static_cast<std::size_t>(c_norm_e)]);
    if (c_f >= 0) traj.followon.push_back(row[static_cast<std::size_t>(c_f)]);
    const bool flag = row[static_cast<std::size_t>(c_div)] != 0.0;
    traj.diverged_flags.push_back(flag ? 1 : 0);
    if (flag && !traj.diverged) {
      traj.diverged = true;
      traj.diverged_at = traj.steps.back();
    }
    traj.max_norm_x = std::max(traj.max_norm_x, traj.norm_x.back());
    traj.max_norm_e = std::max(traj.max_norm_e, traj.norm_e.back());
  }
  traj.completed_steps = traj.steps.empty() ? 0 : traj.steps.back();
  return traj;
}

}  // namespace detail

struct DiagnoseResult {
  std::size_t seeds = 0;
  std::size_t reproduced = 0;   ///< seeds whose replay matched trajectory.csv byte for byte
  Json report = Json::array();
};

/// Replays every seed of an artifact directory from its metadata with all
/// diagnostics switched on, checks the replayed trajectory against the stored
/// CSV, and refreshes the per-seed diagnostics files.
inline DiagnoseResult diagnose(const std::string& root, double tau = 1.0, double segment_length = 1.0) {
  DiagnoseResult out;
  for (const auto& dir : detail::seed_dirs(root)) {
    const std::string meta_path = (dir / "metadata.json").string();
    ExperimentConfig cfg = load_config(meta_path);
    const std::string stored = read_text((dir / "trajectory.csv").string());
    cfg.output_dir = dir.parent_path().string();
    cfg.diagnostics.rate_of_change = true;
    cfg.diagnostics.tau = tau;
    cfg.diagnostics.lln = true;
    cfg.diagnostics.ode_tracking = true;
    cfg.diagnostics.segment_length = segment_length;
    const SeedResult r = run_seed(cfg, cfg.seeds.front());
    const bool same = trajectory_csv(r.trajectory) == stored;
    out.seeds += 1;
    out.reproduced += same ? 1 : 0;
    Json entry{{"seed", r.seed}, {"reproduced", same}, {"stability", to_string(r.stability.verdict)}};
    out.report.push_back(entry);
  }
  write_json((std::filesystem::path(root) / "diagnose.json").string(),
             Json{{"seeds", out.seeds}, {"reproduced", out.reproduced}, {"runs", out.report}});
  return out;
}

/// Long-format plot table (seed, step, series, value) over every seed in an
/// artifact directory. Series: theta_error, norm_x, norm_e, rate_of_change,
/// f_sup (keyed by segment start step).
inline std::string plot_data(const std::string& root) {
  namespace fs = std::filesystem;
  std::string out = "seed,step,series,value\n";
  for (const auto& dir : detail::seed_dirs(root)) {
    const Json meta = read_json((dir / "metadata.json").string());
    const std::string seed = std::to_string(meta.at("seed").get<std::uint64_t>());
    const Algorithm alg = parse_algorithm(meta.at("config").at("algorithm").get<std::string>());
    const Trajectory traj =
        detail::trajectory_from_csv(read_csv((dir / "trajectory.csv").string()), alg);
    std::optional<Vector> theta_star;
    const Json spectral = read_json((dir / "spectral.json").string());
    if (spectral.contains("theta_star") && spectral.at("theta_star").is_array()) {
      theta_star = detail::json_vector(spectral.at("theta_star"), "theta_star");
    }
    for (std::size_t j = 0; j < traj.steps.size(); ++j) {
      const std::string step = std::to_string(traj.steps[j]);
      if (theta_star && theta_star->size() == traj.dim) {
        out += seed + "," + step + ",theta_error," + format_double((traj.theta(j) - *theta_star).norm()) + "\n";
      }
      out += seed + "," + step + ",norm_x," + format_double(traj.norm_x[j]) + "\n";
      out += seed + "," + step + ",norm_e," + format_double(traj.norm_e[j]) + "\n";
    }
    if (fs::exists(dir / "rate_of_change.csv")) {
      const CsvTable t = read_csv((dir / "rate_of_change.csv").string());
      for (const auto& row : t.rows) {
        out += seed + "," + std::to_string(static_cast<std::uint64_t>(row[0])) + ",rate_of_change," +
               format_double(row[1]) + "\n";
      }
    }
    if (fs::exists(dir / "ode_tracking.csv")) {
      const CsvTable t = read_csv((dir / "ode_tracking.csv").string());
      const auto c_step = t.column("start_step");
      const auto c_sup = t.column("sup_norm");
      for (const auto& row : t.rows) {
        out += seed + "," + std::to_string(static_cast<std::uint64_t>(row[static_cast<std::size_t>(c_step)])) +
               ",f_sup," + format_double(row[static_cast<std::size_t>(c_sup)]) + "\n";
      }
    }
  }
  return out;
}

/// Writes plot_data(root) to root/plot_data.csv and returns the path.
inline std::string emit_plot_data(const std::string& root) {
  const std::string text = plot_data(root);
  const std::string path = (std::filesystem::path(root) / "plot_data.csv").string();
  write_text(path, text);
  return path;
}

}  // namespace sarl
