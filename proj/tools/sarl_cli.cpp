// Command-line front end: analyze, run, diagnose, plotdata.
// Exit codes: 0 success, 1 validation failure, 2 runtime failure.

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sarl/sarl.hpp"

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct AnalyzeArgs {
  std::string env = "random_offpolicy";
  std::string file;
  std::string target = "pi";
  std::string behaviour = "mu";
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double B1 = 1.0, B2 = 1.0, beta = 1.0;
  std::size_t probe_dirs = 16;
  std::string output;
};

sarl::Json probe_json(const sarl::Matrix& M, std::size_t dirs, std::uint64_t seed) {
  const sarl::VectorField h = sarl::VectorField::linear(M, "h_inf");
  const sarl::VectorField neg = sarl::VectorField::linear(-M, "neg_h_inf");
  sarl::ProbeOptions opt;
  opt.seed = seed;
  // Non-Hurwitz M has no finite estimate; fall back to a fixed horizon.
  const double estimate = sarl::probe_horizon_estimate(M);
  const double horizon = std::isfinite(estimate) ? 2.0 * estimate : 50.0;
  return sarl::Json{{"h_inf", sarl::to_json(sarl::ode_at_infinity_probe(h, dirs, horizon, opt))},
                    {"negated", sarl::to_json(sarl::ode_at_infinity_probe(neg, dirs, horizon, opt))}};
}

int analyze(const AnalyzeArgs& a) {
  const sarl::EnvironmentBundle b =
      a.file.empty() ? sarl::builtin_environment(a.env, a.seed)
                     : sarl::bundle_from_spec(sarl::load_mdp_file(a.file), a.file, a.target, a.behaviour);
  const sarl::Schedule schedule = sarl::Schedule::make(a.B1, a.B2, a.beta);
  sarl::Json out{{"environment", b.name}, {"lambda", a.lambda}};
  out["assumptions"] = sarl::to_json(sarl::check_assumptions(b, a.lambda, schedule));
  const sarl::TdSystem td = sarl::off_policy_td_system(b.mdp, b.pi, b.mu, a.lambda, b.features);
  out["offpolicy_td"] = sarl::to_json(sarl::spectral_report(td.A, td.b));
  if (b.features.first_dependent_column() < 0) {
    const sarl::GtdSystem g = sarl::gtd_expected_system(b.mdp, b.pi, b.mu, a.lambda, b.features);
    out["gtd"] = sarl::Json{{"A", sarl::to_json(sarl::spectral_report(g.A, g.b))},
                            {"block", sarl::to_json(sarl::spectral_report(g.A_block, g.b_block))},
                            {"probe", probe_json(g.A_block, a.probe_dirs, a.seed)}};
    const sarl::EtdSystem e =
        sarl::etd_expected_system(b.mdp, b.pi, b.mu, a.lambda, b.interest, b.features);
    out["etd"] = sarl::Json{{"A", sarl::to_json(sarl::spectral_report(e.A, e.b))},
                            {"probe", probe_json(e.A, a.probe_dirs, a.seed)}};
  } else {
    out["gtd"] = out["etd"] = "unavailable: features are not full column rank";
  }
  const std::string text = out.dump(2) + "\n";
  if (a.output.empty()) {
    std::cout << text;
  } else {
    sarl::write_text(a.output, text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic approximation and off-policy TD experiments"};
  app.require_subcommand(1);

  AnalyzeArgs aa;
  auto* analyze_cmd = app.add_subcommand("analyze", "Spectral report and assumption checks for a bundle");
  analyze_cmd->add_option("--env", aa.env, "Builtin environment name")
      ->check(CLI::IsMember({"divergence_star", "random_offpolicy", "tabular_chain"}));
  analyze_cmd->add_option("--file", aa.file, "MDP specification file (overrides --env)");
  analyze_cmd->add_option("--target", aa.target, "Target policy name inside --file");
  analyze_cmd->add_option("--behaviour", aa.behaviour, "Behaviour policy name inside --file");
  analyze_cmd->add_option("--seed", aa.seed, "Generator seed for random_offpolicy");
  analyze_cmd->add_option("--lambda", aa.lambda, "Trace decay")->check(CLI::Range(0.0, 1.0));
  analyze_cmd->add_option("--B1", aa.B1);
  analyze_cmd->add_option("--B2", aa.B2);
  analyze_cmd->add_option("--beta", aa.beta);
  analyze_cmd->add_option("--probe-dirs", aa.probe_dirs, "Initial directions for the ODE@inf probe");
  analyze_cmd->add_option("-o,--output", aa.output, "Write the JSON report here instead of stdout");

  std::string config_path, output_override;
  unsigned threads = 0;
  auto* run_cmd = app.add_subcommand("run", "Execute an experiment config (or replay a metadata file)");
  run_cmd->add_option("config", config_path, "Config JSON or per-seed metadata.json")->required();
  run_cmd->add_option("-o,--output", output_override, "Override output_dir");
  run_cmd->add_option("--threads", threads, "Parallel seeds (0 = hardware concurrency)");

  std::string dir;
  double tau = 1.0, segment = 1.0;
  auto* diag_cmd = app.add_subcommand("diagnose", "Replay runs with rate-of-change, LLN and ODE tracking");
  diag_cmd->add_option("dir", dir, "Artifact directory")->required();
  diag_cmd->add_option("--tau", tau, "Rate-of-change window half-width");
  diag_cmd->add_option("--segment-length", segment, "ODE tracking segment length T");

  std::string plot_dir;
  auto* plot_cmd = app.add_subcommand("plotdata", "Write plot_data.csv for an artifact directory");
  plot_cmd->add_option("dir", plot_dir, "Artifact directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*analyze_cmd) return analyze(aa);
    if (*run_cmd) {
      sarl::ExperimentConfig cfg = sarl::load_config(config_path);
      if (!output_override.empty()) cfg.output_dir = output_override;
      const sarl::ExperimentResult res = sarl::run_experiment(cfg, threads);
      std::cout << res.summary.dump(2) << "\n";
      return 0;
    }
    if (*diag_cmd) {
      const sarl::DiagnoseResult res = sarl::diagnose(dir, tau, segment);
      std::cout << "diagnosed " << res.seeds << " seed(s), " << res.reproduced
                << " reproduced byte-identically\n";
      return res.reproduced == res.seeds ? 0 : kExitRuntime;
    }
    if (*plot_cmd) {
      std::cout << sarl::emit_plot_data(plot_dir) << "\n";
      return 0;
    }
  } catch (const sarl::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const sarl::DimensionError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const sarl::CoverageError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const sarl::RankError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
