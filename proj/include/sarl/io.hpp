#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sarl/diagnostics.hpp"
#include "sarl/environments.hpp"
#include "sarl/mdp.hpp"
#include "sarl/ode.hpp"
#include "sarl/spectral.hpp"

namespace sarl {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Number formatting
// ---------------------------------------------------------------------------

/// Shortest-form-independent text for a double: 17 significant digits, so the
/// value round-trips exactly. Non-finite values print as nan, inf, -inf.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& text) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ValidationError("not a number: '" + text + "'");
  }
  return v;
}

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

/// Finite doubles stay numbers; non-finite ones become strings so that the
/// document stays valid JSON.
inline Json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

inline Json to_json(const Vector& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(json_number(v[i]));
  return out;
}

inline Json to_json(const Matrix& m) {
  Json out = Json::array();
  for (Index i = 0; i < m.rows(); ++i) out.push_back(to_json(Vector(m.row(i).transpose())));
  return out;
}

inline Json to_json(const SpectralReport& r) {
  Json eig = Json::array();
  for (Index i = 0; i < r.eigenvalues.size(); ++i) {
    eig.push_back({json_number(r.eigenvalues[i].real()), json_number(r.eigenvalues[i].imag())});
  }
  Json out{{"eigenvalues", eig},
           {"max_real_part", json_number(r.max_real_part)},
           {"max_symmetric_eigenvalue", json_number(r.max_symmetric_eigenvalue)},
           {"hurwitz", to_string(r.hurwitz)},
           {"negative_definite", to_string(r.negative_definite)},
           {"is_hurwitz", r.is_hurwitz},
           {"is_negative_definite", r.is_negative_definite},
           {"condition_number", json_number(r.condition_number)},
           {"ill_conditioned", r.ill_conditioned},
           {"singular", r.singular}};
  out["fixed_point"] = r.fixed_point ? to_json(*r.fixed_point) : Json(nullptr);
  return out;
}

inline Json to_json(const AssumptionReport& r) {
  Json items = Json::array();
  for (const auto& it : r.items) {
    items.push_back({{"id", it.id}, {"description", it.description}, {"passed", it.passed},
                     {"detail", it.detail}});
  }
  return Json{{"all_passed", r.all_passed()}, {"items", items}};
}

inline Json to_json(const LogLogTrend& t) {
  return Json{{"slope", t.slope ? json_number(*t.slope) : Json(nullptr)},
              {"p_value", t.p_value ? json_number(*t.p_value) : Json(nullptr)},
              {"points", t.points}};
}

inline Json to_json(const RateOfChangeReport& r) {
  Json values = Json::array();
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    values.push_back({{"n", r.eval_points[i]}, {"value", json_number(r.values[i])}});
  }
  return Json{{"tau", r.tau},
              {"analytic_centering", r.analytic_centering},
              {"centering", to_json(r.centering)},
              {"values", values},
              {"trend", to_json(r.trend)},
              {"decays", r.decays}};
}

inline Json to_json(const LlnReport& r) {
  Json out{{"samples", r.samples}, {"checkpoints", r.checkpoints},
           {"terminal_mean", to_json(r.terminal_mean)}};
  Json errs = Json::array();
  for (double e : r.relative_errors) errs.push_back(json_number(e));
  out["relative_errors"] = errs;
  out["terminal_relative_error"] =
      r.terminal_relative_error ? json_number(*r.terminal_relative_error) : Json(nullptr);
  return out;
}

inline Json to_json(const StabilityReport& r) {
  Json deciles = Json::array();
  for (double d : r.decile_max) deciles.push_back(json_number(d));
  return Json{{"verdict", to_string(r.verdict)},
              {"diverged", r.diverged},
              {"guard_crossed_at", r.guard_crossed_at ? Json(*r.guard_crossed_at) : Json(nullptr)},
              {"overall_max", json_number(r.overall_max)},
              {"last_decile_max", json_number(r.last_decile_max)},
              {"middle_decile_max", json_number(r.middle_decile_max)},
              {"tail_not_above_middle", r.tail_not_above_middle},
              {"decile_max", deciles}};
}

inline Json to_json(const TraceReport& r) {
  return Json{{"q50", json_number(r.q50)},
              {"q90", json_number(r.q90)},
              {"q99", json_number(r.q99)},
              {"max_norm", json_number(r.max_norm)},
              {"early_running_max", json_number(r.early_running_max)},
              {"heavy_tail", r.heavy_tail},
              {"followon_q99", r.followon_q99 ? json_number(*r.followon_q99) : Json(nullptr)},
              {"followon_max", r.followon_max ? json_number(*r.followon_max) : Json(nullptr)}};
}

inline Json to_json(const ProbeResult& r) {
  Json norms = Json::array();
  for (double v : r.terminal_norms) norms.push_back(json_number(v));
  return Json{{"verdict", to_string(r.verdict)},
              {"horizon", r.horizon},
              {"max_terminal_norm", json_number(r.max_terminal_norm)},
              {"settle_time", r.settle_time ? json_number(*r.settle_time) : Json(nullptr)},
              {"terminal_norms", norms}};
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw Error("write to '" + path + "' failed");
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_json(const std::string& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

inline Json read_json(const std::string& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
}

/// Two-column (t, value) CSV.
inline std::string curve_csv(const std::string& x_name, const std::vector<double>& x,
                             const std::vector<double>& y) {
  std::string out = x_name + ",value\n";
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
    out += format_double(x[i]) + "," + format_double(y[i]) + "\n";
  }
  return out;
}

inline std::string curve_csv(const ErrorCurve& c) { return curve_csv("t", c.times, c.norms); }

inline std::string curve_csv(const RateOfChangeReport& r) {
  std::string out = "n,value\n";
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    out += std::to_string(r.eval_points[i]) + "," + format_double(r.values[i]) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// MDP specification files
// ---------------------------------------------------------------------------

struct MdpSpec {
  FiniteMdp mdp;
  std::map<std::string, Policy> policies;
  std::optional<FeatureMap> features;
  std::optional<Vector> interest;
};

namespace detail {

inline const Json& require_field(const Json& j, const std::string& key) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError("missing field '" + key + "'");
  return j.at(key);
}

inline double number_at(const Json& j, const std::string& where) {
  if (!j.is_number()) throw ValidationError(where + " is not a number");
  return j.get<double>();
}

inline Index count_field(const Json& j, const std::string& key) {
  const Json& v = require_field(j, key);
  if (!v.is_number_integer() || v.get<long long>() < 1) {
    throw ValidationError("'" + key + "' must be a positive integer");
  }
  return static_cast<Index>(v.get<long long>());
}

inline void require_array(const Json& j, std::size_t size, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + " is not an array");
  if (j.size() != size) {
    throw ValidationError(where + " has length " + std::to_string(j.size()) + ", expected " +
                          std::to_string(size));
  }
}

inline Vector parse_vector(const Json& j, Index n, const std::string& where) {
  require_array(j, static_cast<std::size_t>(n), where);
  Vector v(n);
  for (Index i = 0; i < n; ++i) {
    v[i] = number_at(j[static_cast<std::size_t>(i)], where + "[" + std::to_string(i) + "]");
  }
  return v;
}

/// Array of `rows` arrays of width `cols`; row counts are checked first.
inline Matrix parse_matrix(const Json& j, Index rows, const std::string& where,
                           std::optional<Index> cols = std::nullopt) {
  if (!j.is_array()) throw ValidationError(where + " is not an array");
  require_array(j, static_cast<std::size_t>(rows), where);
  if (!cols) {
    if (rows == 0 || !j[0].is_array()) throw ValidationError(where + "[0] is not an array");
    cols = static_cast<Index>(j[0].size());
  }
  Matrix m(rows, *cols);
  for (Index r = 0; r < rows; ++r) {
    const std::string row_where = where + "[" + std::to_string(r) + "]";
    m.row(r) = parse_vector(j[static_cast<std::size_t>(r)], *cols, row_where).transpose();
  }
  return m;
}

}  // namespace detail

/// Parses and validates an MDP specification document. Errors name the
/// first offending entry by index.
inline MdpSpec parse_mdp_spec(const Json& j) {
  using namespace detail;
  const Index n = count_field(j, "n_states");
  const Index m = count_field(j, "n_actions");

  const Json& tr = require_field(j, "transition");
  require_array(tr, static_cast<std::size_t>(n), "transition");
  std::vector<Matrix> kernel(static_cast<std::size_t>(m), Matrix(n, n));
  for (Index s = 0; s < n; ++s) {
    const Json& row = tr[static_cast<std::size_t>(s)];
    const std::string where = "transition[" + std::to_string(s) + "]";
    require_array(row, static_cast<std::size_t>(m), where);
    for (Index a = 0; a < m; ++a) {
      kernel[static_cast<std::size_t>(a)].row(s) =
          parse_vector(row[static_cast<std::size_t>(a)], n, where + "[" + std::to_string(a) + "]")
              .transpose();
    }
  }
  const Matrix reward = parse_matrix(require_field(j, "reward"), n, "reward", m);
  const double gamma = number_at(require_field(j, "gamma"), "gamma");
  const Vector init = parse_vector(require_field(j, "initial_dist"), n, "initial_dist");

  MdpSpec spec{FiniteMdp(std::move(kernel), reward, gamma, init), {}, std::nullopt, std::nullopt};

  if (j.contains("policies")) {
    const Json& pols = j.at("policies");
    if (!pols.is_object()) throw ValidationError("'policies' must be an object");
    for (const auto& [name, value] : pols.items()) {
      const Matrix probs = parse_matrix(value, n, "policies." + name, m);
      try {
        spec.policies.emplace(name, Policy(probs));
      } catch (const ValidationError& e) {
        throw ValidationError("policies." + name + ": " + e.what());
      }
    }
  }
  if (j.contains("features")) {
    spec.features = FeatureMap(parse_matrix(j.at("features"), n, "features"));
  }
  if (j.contains("interest")) {
    spec.interest = parse_vector(j.at("interest"), n, "interest");
    for (Index s = 0; s < n; ++s) {
      if (!((*spec.interest)[s] > 0.0)) {
        throw ValidationError("interest[" + std::to_string(s) + "] must be positive");
      }
    }
  }
  return spec;
}

inline MdpSpec load_mdp_file(const std::string& path) {
  try {
    return parse_mdp_spec(read_json(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline Json to_json(const FiniteMdp& mdp) {
  Json tr = Json::array();
  for (Index s = 0; s < mdp.n_states(); ++s) {
    Json row = Json::array();
    for (Index a = 0; a < mdp.n_actions(); ++a) {
      row.push_back(to_json(Vector(mdp.kernel(a).row(s).transpose())));
    }
    tr.push_back(row);
  }
  return Json{{"n_states", mdp.n_states()},
              {"n_actions", mdp.n_actions()},
              {"transition", tr},
              {"reward", to_json(mdp.reward())},
              {"gamma", mdp.gamma()},
              {"initial_dist", to_json(mdp.initial_dist())}};
}

/// Bundle in the specification-file layout with policies "pi" and "mu".
inline Json to_json(const EnvironmentBundle& b) {
  Json j = to_json(b.mdp);
  j["policies"] = Json{{"pi", to_json(b.pi.probs())}, {"mu", to_json(b.mu.probs())}};
  j["features"] = to_json(b.features.matrix());
  j["interest"] = to_json(b.interest);
  if (b.theta0) j["theta0"] = to_json(*b.theta0);
  j["name"] = b.name;
  j["generator_retries"] = b.generator_retries;
  return j;
}

/// Builds a bundle from a specification file, picking the named policies.
inline EnvironmentBundle bundle_from_spec(const MdpSpec& spec, const std::string& name,
                                          const std::string& target = "pi",
                                          const std::string& behaviour = "mu") {
  auto pick = [&](const std::string& key) -> const Policy& {
    const auto it = spec.policies.find(key);
    if (it == spec.policies.end()) throw ValidationError("policy '" + key + "' not found");
    return it->second;
  };
  if (!spec.features) throw ValidationError("missing field 'features'");
  return EnvironmentBundle{name,
                           spec.mdp,
                           pick(target),
                           pick(behaviour),
                           *spec.features,
                           spec.interest.value_or(Vector::Ones(spec.mdp.n_states())),
                           std::nullopt};
}

}  // namespace sarl
