// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "opemiss/experiment.hpp"
#include "opemiss/validate.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>
#include <string>
#include <thread>

using namespace opemiss;

namespace {

int failures = 0;

void report(const std::string& id, bool pass, const std::string& detail) {
  std::printf("%s criterion %s: %s\n", pass ? "PASS" : "FAIL", id.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const CellSummary& cell(const ExperimentResult& r, std::size_t n, DropoutKind k, Method m) {
  for (const auto& s : r.summaries)
    if (s.n == n && s.kind == k && s.method == m) return s;
  throw std::runtime_error("missing cell");
}

ExperimentConfig base_config(int threads) {
  ExperimentConfig c;
  c.n_replications = 250;
  c.psi = Eigen::Vector3d(2.2, 0.15, -0.3);
  c.env.contraction = 0.75;
  c.mc_rollouts = 100000;
  c.mc_horizon = 200;
  c.threads = threads;
  return c;
}

std::string replications_text(const ExperimentResult& r) {
  std::ostringstream os;
  write_replications_csv(os, r.records, r.truth.value);
  write_summary_csv(os, r.summaries);
  return os.str();
}

double min_eigenvalue(const Eigen::MatrixXd& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues().minCoeff();
}

}  // namespace

int main() {
  const int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const auto t_all = std::chrono::steady_clock::now();

  ExperimentConfig c = base_config(threads);
  const McEstimate truth = experiment_truth(c);
  std::printf("truth V = %.5f (MC se %.5f, %zu rollouts x %d steps), threads %d\n", truth.value, truth.se,
              truth.n_rollouts, c.mc_horizon, threads);

  // MNAR at (1000, 10): all estimators.
  ExperimentConfig c_mnar = c;
  c_mnar.grid = {{1000, 10}};
  c_mnar.dropout_kinds = {DropoutKind::MNAR};
  auto t0 = std::chrono::steady_clock::now();
  const ExperimentResult mnar = run_experiment(c_mnar, truth);
  const double t_mnar = seconds_since(t0);
  std::printf("MNAR (1000,10) x 250 in %.1f s\n", t_mnar);

  // MNAR at (500, 10): parametric IPW.
  ExperimentConfig c_500 = c;
  c_500.grid = {{500, 10}};
  c_500.dropout_kinds = {DropoutKind::MNAR};
  c_500.estimation.methods = {Method::IPW_P};
  const ExperimentResult mnar500 = run_experiment(c_500, truth);

  // MAR at (1000, 10): complete-case.
  ExperimentConfig c_mar = c;
  c_mar.grid = {{1000, 10}};
  c_mar.dropout_kinds = {DropoutKind::MAR};
  c_mar.estimation.methods = {Method::CC};
  const ExperimentResult mar = run_experiment(c_mar, truth);

  for (const auto* r : {&mnar, &mnar500, &mar})
    for (const auto& s : r->summaries)
      std::printf("  n=%zu %s %-6s bias %+.4f sd %.4f mse %.4f ecp %.3f mean_se %.4f ok %zu\n", s.n,
                  to_string(s.kind).c_str(), to_string(s.method).c_str(), s.bias, s.sd, s.mse, s.ecp, s.mean_se,
                  s.n_ok);

  // 1. Reproduction at (1000, 10) under MNAR.
  {
    const auto& cc = cell(mnar, 1000, DropoutKind::MNAR, Method::CC);
    report("1 (CC/MNAR)", cc.bias >= -0.80 && cc.bias <= -0.45 && cc.ecp <= 0.88,
           fmt("bias %.4f in [-0.80,-0.45], ECP %.3f <= 0.88", cc.bias, cc.ecp));
    const auto& p = cell(mnar, 1000, DropoutKind::MNAR, Method::IPW_P);
    report("1 (IPW-P/MNAR)", std::abs(p.bias) <= 0.12 && p.ecp >= 0.90 && p.ecp <= 0.98,
           fmt("|bias| %.4f <= 0.12, ECP %.3f in [0.90,0.98]", std::abs(p.bias), p.ecp));
    const auto& sp = cell(mnar, 1000, DropoutKind::MNAR, Method::IPW_SP);
    report("1 (IPW-SP/MNAR)", std::abs(sp.bias) <= 0.12 && sp.ecp >= 0.89 && sp.ecp <= 0.97,
           fmt("|bias| %.4f <= 0.12, ECP %.3f in [0.89,0.97]", std::abs(sp.bias), sp.ecp));
    report("1 (runtime)", t_mnar <= 1800.0, fmt("%.1f s <= 1800 s", t_mnar));
  }

  // 2. Complete-case validity under MAR.
  {
    const auto& cc = cell(mar, 1000, DropoutKind::MAR, Method::CC);
    const auto [lo, hi] = binomial_band(0.95, cc.n_ok);
    report("2 (CC/MAR)", std::abs(cc.bias) <= 0.12 && cc.ecp >= lo && cc.ecp <= hi,
           fmt("|bias| %.4f <= 0.12, ECP %.3f in [%.3f,%.3f]", std::abs(cc.bias), cc.ecp, lo, hi));
  }

  // 3. Coverage curve.
  {
    const std::vector<double> alphas = {0.01, 0.05, 0.1, 0.2};
    const auto pts = coverage_curve(mnar.records, truth.value, alphas);
    for (Method m : {Method::IPW_P, Method::IPW_SP}) {
      bool ok = true;
      std::string detail;
      for (const auto& p : pts) {
        if (p.method != m) continue;
        const auto [lo, hi] = binomial_band(1.0 - p.alpha, p.n_ok);
        ok = ok && p.ecp >= lo && p.ecp <= hi;
        detail += fmt("a=%.2f ECP %.3f in [%.3f,%.3f]; ", p.alpha, p.ecp, lo, hi);
      }
      report("3 (" + to_string(m) + "/MNAR)", ok, detail);
    }
    bool ok = true;
    std::string detail;
    for (const auto& p : pts) {
      if (p.method != Method::CC) continue;
      ok = ok && p.ecp < 1.0 - p.alpha;
      detail += fmt("a=%.2f ECP %.3f < %.2f; ", p.alpha, p.ecp, 1.0 - p.alpha);
    }
    report("3 (CC/MNAR under-covers)", ok, detail);
  }

  // 4. Consistency scaling of parametric IPW.
  {
    const auto& big = cell(mnar, 1000, DropoutKind::MNAR, Method::IPW_P);
    const auto& small = cell(mnar500, 500, DropoutKind::MNAR, Method::IPW_P);
    const double ratio = big.sd / small.sd;
    report("4 (IPW-P scaling)", std::sqrt(big.mse) < std::sqrt(small.mse) && ratio >= 0.55 && ratio <= 0.90,
           fmt("RMSE %.4f < %.4f, SD ratio %.3f in [0.55,0.90]", std::sqrt(big.mse), std::sqrt(small.mse), ratio));
  }

  // 5. Dropout-model recovery at n = 1000, T = 10.
  {
    constexpr int reps = 20;
    double worst_p = 0.0, worst_sp = 0.0;
    int over_p = 0, over_sp = 0;
    for (int r = 0; r < reps; ++r) {
      const std::uint64_t seed = derive_seed(c.master_seed, static_cast<std::uint64_t>(r), Stream::Diagnostics);
      const EnvConfig ec{1000, 10, 0.9, seed, DropoutSpec::mnar(c.psi)};
      const Dataset full = generate_complete(ec, c.env);
      const Dataset data = apply_dropout(full, ec.dropout, seed);
      const AtRiskSet ar = at_risk_rows(data);
      const AtRiskSet ar_full = at_risk_rows(full);
      const PropensityFit pf = fit_parametric_gmm(ar, HazardFeatures::NextReward, simulation_moment_function());
      const TiltingFit sf = fit_semiparametric(ar);
      double se_p = 0.0, se_sp = 0.0;
      for (const auto& row : ar.rows) {
        const AtRiskRow& fr = ar_full.rows[row.traj * static_cast<std::size_t>(ec.T - 1) + static_cast<std::size_t>(row.t - 1)];
        const double truth_l = simulation_hazard(ec.dropout, full[row.traj], static_cast<std::size_t>(row.t));
        se_p += std::pow(pf.model.hazard(fr) - truth_l, 2);
        se_sp += std::pow(sf.model.hazard(fr) - truth_l, 2);
      }
      se_p /= static_cast<double>(ar.size());
      se_sp /= static_cast<double>(ar.size());
      over_p += se_p > 0.01 ? 1 : 0;
      over_sp += se_sp > 0.01 ? 1 : 0;
      worst_p = std::max(worst_p, se_p);
      worst_sp = std::max(worst_sp, se_sp);
    }
    report("5 (parametric hazard)", worst_p <= 0.01, fmt("max MSE over %d fits %.5f <= 0.01 (%d above)", reps, worst_p, over_p));
    report("5 (semiparametric hazard)", worst_sp <= 0.01, fmt("max MSE over %d fits %.5f <= 0.01 (%d above)", reps, worst_sp, over_sp));
  }

  // 6. Tabular oracle.
  {
    t0 = std::chrono::steady_clock::now();
    ValidationOptions opt;
    const ValidationReport rep = validate_oracles(opt);
    double cc = 1e300, ipw = 1e300;
    for (const auto& ch : rep.checks) {
      if (ch.name == "tabular_cc_q") cc = ch.value;
      if (ch.name == "tabular_ipw_q") ipw = ch.value;
    }
    // A second, larger tabular problem solved on its own.
    const TabularOracleEnv env = TabularOracleEnv::random(20, 3, 0.95, 11);
    const Eigen::MatrixXd pi = random_policy(20, 3, 11);
    const TabularDesign td = tabular_design(env, pi);
    const BetaEstimate est = estimate_beta(td.design, EstimatorKind::CC, td.mass, 0.0);
    cc = std::max(cc, (tabular_q(est, 20, 3) - oracle_q(env, pi)).cwiseAbs().maxCoeff());
    const double secs = seconds_since(t0);
    report("6 (tabular oracle)", cc <= 1e-6 && ipw <= 1e-6 && secs <= 10.0,
           fmt("CC %.2e, IPW %.2e <= 1e-6, %.2f s <= 10 s", cc, ipw, secs));

    // 7. Property suite.
    bool ok = true;
    std::string detail;
    for (const auto& ch : rep.checks) {
      if (ch.name.rfind("tabular", 0) == 0) continue;
      ok = ok && ch.pass;
      detail += fmt("%s %.2e<=%.0e; ", ch.name.c_str(), ch.value, ch.tolerance);
    }
    // Ω PSD on one MNAR replication.
    const EnvConfig ec{1000, 10, 0.9, 17, DropoutSpec::mnar(c.psi)};
    const Dataset data = apply_dropout(generate_complete(ec, c.env), ec.dropout, 17);
    const SieveBasis basis = SieveBasis::fit(observed_states(data), SplineSpec{});
    const SieveDesign design = assemble_design(data, basis, TargetPolicy{}, 0.9);
    const AtRiskSet ar = at_risk_rows(data);
    const MomentFunction h = simulation_moment_function();
    const PropensityFit fit = fit_parametric_gmm(ar, HazardFeatures::NextReward, h);
    const Eigen::VectorXd w = observation_weights(ar, fit.model);
    const BetaEstimate b = estimate_beta(design, EstimatorKind::IPW, w);
    const Eigen::VectorXd e = residuals(b, design);
    const double eig_full = min_eigenvalue(omega_full(design, w, e, gmm_influence(design, ar, fit.model, h)).omega);
    const double eig_tilde = min_eigenvalue(omega_tilde(design, w, e));
    ok = ok && eig_full >= -1e-10 && eig_tilde >= -1e-10;
    detail += fmt("min eig(Omega) %.2e, %.2e >= -1e-10; ", eig_full, eig_tilde);
    // Unit weights reproduce CC exactly.
    const Dataset complete = generate_complete(EnvConfig{300, 10, 0.9, 18, {}}, c.env);
    const SieveDesign dc = assemble_design(complete, SieveBasis::fit(observed_states(complete), SplineSpec{}),
                                           TargetPolicy{}, 0.9);
    const bool same = estimate_beta(dc, EstimatorKind::CC, dc.eta).beta ==
                      estimate_beta(dc, EstimatorKind::IPW, Eigen::VectorXd::Ones(dc.size())).beta;
    ok = ok && same;
    detail += fmt("CC==IPW at unit weights %s; ", same ? "yes" : "no");
    // Byte-level determinism across repeats and thread counts.
    ExperimentConfig cd = c;
    cd.grid = {{200, 5}};
    cd.n_replications = 4;
    cd.dropout_kinds = {DropoutKind::MAR, DropoutKind::MNAR};
    cd.estimation.n_reference = 1000;
    cd.threads = 1;
    const std::string a = replications_text(run_experiment(cd, truth));
    const std::string a2 = replications_text(run_experiment(cd, truth));
    cd.threads = 4;
    const std::string a4 = replications_text(run_experiment(cd, truth));
    const bool det = a == a2 && a == a4;
    ok = ok && det;
    detail += fmt("byte-identical output %s", det ? "yes" : "no");
    report("7 (property suite)", ok, detail);
  }

  // 8. Variance calibration.
  for (Method m : {Method::IPW_P, Method::IPW_SP}) {
    const auto& s = cell(mnar, 1000, DropoutKind::MNAR, m);
    const double ratio = s.mean_se / s.sd;
    report("8 (" + to_string(m) + "/MNAR)", ratio >= 0.8 && ratio <= 1.25,
           fmt("mean se %.4f / replication SD %.4f = %.3f in [0.80,1.25]", s.mean_se, s.sd, ratio));
  }

  std::printf("total %.1f s, %d failing\n", seconds_since(t_all), failures);
  return failures == 0 ? 0 : 1;
}
