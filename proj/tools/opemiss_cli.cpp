#include "opemiss/opemiss.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

using namespace opemiss;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON configuration file");
  app->add_option("--out", c.out, "Output directory")->capture_default_str();
  app->add_option("--seed", c.seed, "Master seed (overrides config)");
  app->add_option("--threads", c.threads, "Worker threads (overrides config)")->check(CLI::PositiveNumber);
}

nlohmann::json load_json(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("cannot parse '" + path + "': " + ex.what());
  }
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = experiment_config_from_json(load_json(c.config));
  if (c.seed) cfg.master_seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  std::ofstream f(dir / name);
  if (!f) throw ConfigError("cannot write '" + (dir / name).string() + "'");
  return f;
}

void write_json(const fs::path& dir, const std::string& name, const nlohmann::json& j) {
  open_out(dir, name) << j.dump(2) << '\n';
}

int cmd_mc_truth(const Common& c) {
  ExperimentConfig cfg = resolve(c);
  cfg.truth_value.reset();
  const McEstimate mc = experiment_truth(cfg);
  const nlohmann::json j = {{"value", mc.value},        {"se", mc.se},
                            {"n_rollouts", mc.n_rollouts}, {"horizon", cfg.mc_horizon},
                            {"gamma", cfg.estimation.gamma}, {"seed", cfg.master_seed}};
  write_json(c.out, "truth.json", j);
  open_out(c.out, "truth.csv") << "value,se,n_rollouts,horizon\n"
                               << format_double(mc.value) << ',' << format_double(mc.se) << ',' << mc.n_rollouts
                               << ',' << cfg.mc_horizon << '\n';
  std::printf("V = %.6f (se %.6f)\n", mc.value, mc.se);
  return 0;
}

int cmd_simulate(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  const auto [n, T] = cfg.grid.front();
  const DropoutKind kind = cfg.dropout_kinds.front();
  const EnvConfig ec{n, T, cfg.estimation.gamma, cfg.master_seed, DropoutSpec{kind, cfg.psi, 1}};
  ec.validate();
  Dataset data = generate_complete(ec, cfg.env);
  if (kind != DropoutKind::None) data = apply_dropout(data, ec.dropout, cfg.master_seed);
  std::ofstream csv = open_out(c.out, "dataset.csv");
  write_dataset_csv(csv, data);
  write_json(c.out, "dataset.json", dataset_sidecar(data, ec));
  std::printf("wrote %zu trajectories to %s\n", data.size(), (fs::path(c.out) / "dataset.csv").c_str());
  return 0;
}

int cmd_estimate(const Common& c, const std::string& data_path, int horizon, const std::string& mechanism) {
  const ExperimentConfig cfg = resolve(c);
  const Dataset data = read_dataset_csv(data_path, horizon);
  const Eigen::MatrixXd ref = reference_states(cfg.estimation.n_reference, cfg.master_seed);
  const auto recs = estimate_dataset(data, dropout_kind_from_string(mechanism), cfg.estimation, ref);
  nlohmann::json arr = nlohmann::json::array();
  std::ofstream csv = open_out(c.out, "estimates.csv");
  csv << "estimator,v_hat,se,ci_lo,ci_hi,n,T,alpha,ok\n";
  int bad = 0;
  for (const auto& r : recs) {
    ValueReport v{to_string(r.method), r.v_hat, r.se, r.ci_lo, r.ci_hi, data.size(), data.front().horizon,
                  cfg.estimation.alpha};
    nlohmann::json j = to_json(v);
    j["ok"] = r.ok;
    if (!r.error.empty()) j["error"] = r.error;
    if (!r.warnings.empty()) j["warnings"] = r.warnings;
    if (!r.dropout_model.is_null()) j["dropout_model"] = r.dropout_model;
    arr.push_back(j);
    csv << v.estimator << ',' << format_double(v.v_hat) << ',' << format_double(v.se) << ','
        << format_double(v.ci_lo) << ',' << format_double(v.ci_hi) << ',' << v.n << ',' << v.T << ','
        << format_double(v.alpha) << ',' << (r.ok ? 1 : 0) << '\n';
    if (r.ok) {
      std::printf("%-6s V = %.6f  se %.6f  [%.6f, %.6f]\n", v.estimator.c_str(), v.v_hat, v.se, v.ci_lo, v.ci_hi);
    } else {
      std::fprintf(stderr, "%-6s failed: %s\n", v.estimator.c_str(), r.error.c_str());
      ++bad;
    }
  }
  write_json(c.out, "estimates.json", arr);
  return bad == 0 ? 0 : 1;
}

int cmd_experiment(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  const ExperimentResult res = run_experiment(cfg);
  std::ofstream summary = open_out(c.out, "summary.csv");
  write_summary_csv(summary, res.summaries);
  std::ofstream reps = open_out(c.out, "replications.csv");
  write_replications_csv(reps, res.records, res.truth.value);
  write_json(c.out, "results.json", to_json(res, cfg));
  write_summary_csv(std::cout, res.summaries);
  return 0;
}

int cmd_coverage(const Common& c, std::string results_path, const std::vector<double>& alphas) {
  if (results_path.empty()) results_path = (fs::path(c.out) / "results.json").string();
  const ExperimentResult res = experiment_result_from_json(load_json(results_path));
  const auto pts = coverage_curve(res.records, res.truth.value, alphas);
  std::ofstream csv = open_out(c.out, "coverage.csv");
  write_coverage_csv(csv, pts);
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : pts) {
    const auto [lo, hi] = binomial_band(1.0 - p.alpha, std::max<std::size_t>(p.n_ok, 1));
    arr.push_back({{"n", p.n},
                   {"T", p.T},
                   {"dropout", to_string(p.kind)},
                   {"estimator", to_string(p.method)},
                   {"alpha", p.alpha},
                   {"nominal", 1.0 - p.alpha},
                   {"ecp", p.ecp},
                   {"band_99", {lo, hi}},
                   {"n_ok", p.n_ok}});
  }
  write_json(c.out, "coverage.json", {{"truth", res.truth.value}, {"points", arr}});
  write_coverage_csv(std::cout, pts);
  return 0;
}

int cmd_validate(const Common& c) {
  ValidationOptions opt;
  if (!c.config.empty()) {
    const nlohmann::json j = load_json(c.config);
    if (j.contains("contraction")) opt.contraction = j.at("contraction").get<double>();
    if (j.contains("psi")) {
      const auto p = j.at("psi").get<std::vector<double>>();
      if (p.size() != 3) throw ConfigError("psi needs 3 entries");
      opt.psi = Eigen::Vector3d(p[0], p[1], p[2]);
    }
  }
  if (c.seed) opt.seed = *c.seed;
  const ValidationReport rep = validate_oracles(opt);
  write_json(c.out, "validate.json", to_json(rep));
  std::ofstream csv = open_out(c.out, "validate.csv");
  csv << "check,pass,value,tolerance\n";
  for (const auto& ch : rep.checks) {
    csv << ch.name << ',' << (ch.pass ? 1 : 0) << ',' << format_double(ch.value) << ','
        << format_double(ch.tolerance) << '\n';
    std::printf("%s %-28s %.3e (tol %.0e) %s\n", ch.pass ? "PASS" : "FAIL", ch.name.c_str(), ch.value,
                ch.tolerance, ch.detail.c_str());
  }
  return rep.all_passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Off-policy evaluation with monotone dropout"};
  app.require_subcommand(1);

  Common mc, sim, est, exp, cov, val;
  add_common(app.add_subcommand("mc-truth", "Monte Carlo value of the target policy"), mc);
  add_common(app.add_subcommand("simulate", "Generate a dataset with dropout"), sim);

  auto* est_cmd = app.add_subcommand("estimate", "Estimate the policy value from a dataset CSV");
  add_common(est_cmd, est);
  std::string data_path;
  int horizon = 0;
  est_cmd->add_option("--data", data_path, "Dataset CSV")->required()->check(CLI::ExistingFile);
  est_cmd->add_option("--horizon", horizon, "Trajectory horizon (default: longest trajectory)");
  std::string mechanism = "mnar";
  est_cmd->add_option("--dropout", mechanism, "Assumed dropout mechanism for IPW-P")
      ->check(CLI::IsMember({"none", "mar", "mnar"}))
      ->capture_default_str();

  add_common(app.add_subcommand("experiment", "Replicated simulation study"), exp);

  auto* cov_cmd = app.add_subcommand("coverage", "Coverage curve from experiment results");
  add_common(cov_cmd, cov);
  std::string results_path;
  std::vector<double> alphas = {0.01, 0.05, 0.1, 0.2};
  cov_cmd->add_option("--results", results_path, "results.json (default: <out>/results.json)");
  cov_cmd->add_option("--alphas", alphas, "Significance levels")->capture_default_str();

  add_common(app.add_subcommand("validate", "Oracle and property checks"), val);

  CLI11_PARSE(app, argc, argv);
  try {
    if (app.got_subcommand("mc-truth")) return cmd_mc_truth(mc);
    if (app.got_subcommand("simulate")) return cmd_simulate(sim);
    if (app.got_subcommand("estimate")) return cmd_estimate(est, data_path, horizon, mechanism);
    if (app.got_subcommand("experiment")) return cmd_experiment(exp);
    if (app.got_subcommand("coverage")) return cmd_coverage(cov, results_path, alphas);
    if (app.got_subcommand("validate")) return cmd_validate(val);
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 2;
  }
  return 1;
}
