#pragma once

#include "opemiss/common.hpp"
#include "opemiss/dropout_propensity.hpp"
#include "opemiss/env_sim.hpp"
#include "opemiss/inference.hpp"
#include "opemiss/sieve_basis.hpp"
#include "opemiss/value_estimators.hpp"

#include <json.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace opemiss {

// ---------------------------------------------------------------------------
// Tabular design
// ---------------------------------------------------------------------------

/// Population design of a tabular MDP with one indicator basis per state:
/// one row per (s, a, s') carrying mass d(s, a) P(s'|s, a) with d uniform.
/// Column a·|S| + s of ξ is the indicator of (s, a).
struct TabularDesign {
  SieveDesign design;
  Eigen::VectorXd mass;
};

inline TabularDesign tabular_design(const TabularOracleEnv& env, const Eigen::MatrixXd& policy) {
  env.validate();
  const int S = env.n_states;
  const int A = env.n_actions;
  const int rows = S * A * S;
  TabularDesign td;
  auto& d = td.design;
  d.n_actions = A;
  d.basis_size = S;
  d.gamma = env.gamma;
  d.nT = 1.0;
  d.xi = Eigen::MatrixXd::Zero(rows, S * A);
  d.u_next = Eigen::MatrixXd::Zero(rows, S * A);
  d.rewards = Eigen::VectorXd::Zero(rows);
  d.eta = Eigen::VectorXd::Ones(rows);
  td.mass = Eigen::VectorXd::Zero(rows);
  int row = 0;
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a)
      for (int sp = 0; sp < S; ++sp, ++row) {
        d.xi(row, a * S + s) = 1.0;
        for (int ap = 0; ap < A; ++ap) d.u_next(row, ap * S + sp) = policy(sp, ap);
        d.rewards(row) = env.r(s, a);
        td.mass(row) = env.P[static_cast<std::size_t>(a)](s, sp) / (S * A);
        d.rows.push_back({static_cast<std::size_t>(s), a});
      }
  return td;
}

/// Q̂(s, a) table from an estimate on a tabular design.
inline Eigen::MatrixXd tabular_q(const BetaEstimate& est, int n_states, int n_actions) {
  Eigen::MatrixXd q(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) q(s, a) = est.beta(a * n_states + s);
  return q;
}

/// Random stochastic policy table.
inline Eigen::MatrixXd random_policy(int n_states, int n_actions, std::uint64_t seed) {
  auto rng = make_rng(seed, 1, Stream::Tabular);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Eigen::MatrixXd p(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) p(s, a) = u(rng);
    p.row(s) /= p.row(s).sum();
  }
  return p;
}

// ---------------------------------------------------------------------------
// Oracle suite
// ---------------------------------------------------------------------------

struct CheckResult {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct ValidationReport {
  std::vector<CheckResult> checks;
  bool all_passed() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return !checks.empty();
  }
};

/// Deliberate corruption used to prove that the checks can fail.
struct FaultInjection {
  /// Added to the last copy of each left boundary knot of the fitted basis.
  double knot_shift = 0.0;
  /// Added to every IPW weight in the tabular check.
  double weight_perturbation = 0.0;
};

struct ValidationOptions {
  std::uint64_t seed = 7;
  std::size_t n = 1000;
  int T = 10;
  double contraction = 0.75;
  Eigen::Vector3d psi = Eigen::Vector3d(2.2, 0.15, -0.3);
  FaultInjection fault;
};

/// Σ_j B_j(x) by the plain recursive definition, without domain clamping.
inline double naive_partition_sum(const std::vector<double>& knots, int degree, double x) {
  const int m = static_cast<int>(knots.size());
  std::vector<double> b(static_cast<std::size_t>(m - 1));
  for (int j = 0; j + 1 < m; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    b[ju] = (knots[ju] <= x && x < knots[ju + 1]) ? 1.0 : 0.0;
  }
  for (int p = 1; p <= degree; ++p)
    for (int j = 0; j + p + 1 < m; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      const auto pu = static_cast<std::size_t>(p);
      double v = 0.0;
      const double d1 = knots[ju + pu] - knots[ju];
      const double d2 = knots[ju + pu + 1] - knots[ju + 1];
      if (d1 > 0.0) v += (x - knots[ju]) / d1 * b[ju];
      if (d2 > 0.0) v += (knots[ju + pu + 1] - x) / d2 * b[ju + 1];
      b[ju] = v;
    }
  double sum = 0.0;
  for (int j = 0; j < m - degree - 1; ++j) sum += b[static_cast<std::size_t>(j)];
  return sum;
}

inline ValidationReport validate_oracles(const ValidationOptions& opt = {}) {
  ValidationReport rep;
  auto add = [&](std::string name, double value, double tol, std::string detail = {}) {
    rep.checks.push_back({std::move(name), value <= tol, value, tol, std::move(detail)});
  };
  auto guarded = [&](const std::string& name, double tol, auto&& body) {
    try {
      add(name, body(), tol);
    } catch (const std::exception& ex) {
      rep.checks.push_back({name, false, std::numeric_limits<double>::infinity(), tol, ex.what()});
    }
  };

  // Tabular oracle equivalence.
  const TabularOracleEnv tab = TabularOracleEnv::random(6, 2, 0.9, opt.seed);
  const Eigen::MatrixXd pol = random_policy(6, 2, opt.seed);
  guarded("tabular_cc_q", 1e-6, [&] {
    const TabularDesign td = tabular_design(tab, pol);
    const BetaEstimate est = estimate_beta(td.design, EstimatorKind::CC, td.mass, 0.0);
    return (tabular_q(est, 6, 2) - oracle_q(tab, pol)).cwiseAbs().maxCoeff();
  });
  guarded("tabular_ipw_q", 1e-6, [&] {
    // Observed mass (1 − λ) d P with λ depending on (s, a, s'), reweighted by 1/(1 − λ).
    TabularDesign td = tabular_design(tab, pol);
    Eigen::VectorXd w(td.mass.size());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double lam = logistic_hazard(1.0 + 0.3 * static_cast<double>(i % 5) - 0.2 * td.design.rewards(i));
      w(i) = td.mass(i) * (1.0 - lam) * (1.0 / std::max(1.0 - lam, kWeightFloor) + opt.fault.weight_perturbation);
    }
    const BetaEstimate est = estimate_beta(td.design, EstimatorKind::IPW, w, 0.0);
    return (tabular_q(est, 6, 2) - oracle_q(tab, pol)).cwiseAbs().maxCoeff();
  });
  guarded("tabular_gamma0_q_equals_r", 0.0, [&] {
    TabularOracleEnv t0 = tab;
    t0.gamma = 0.0;
    return (oracle_q(t0, pol) - t0.r).cwiseAbs().maxCoeff();
  });

  // Simulated MNAR data for the remaining checks.
  LinearEnv2D env;
  env.contraction = opt.contraction;
  const EnvConfig cfg{opt.n, opt.T, 0.9, opt.seed, DropoutSpec::mnar(opt.psi)};
  const Dataset data = apply_dropout(generate_complete(cfg, env), cfg.dropout, opt.seed);

  guarded("partition_of_unity", 1e-10, [&] {
    SieveBasis basis = SieveBasis::fit(observed_states(data), SplineSpec{});
    if (opt.fault.knot_shift != 0.0) {
      std::vector<BSpline1D> dims;
      for (const auto& b : basis.spline.dims()) {
        auto k = b.knots();
        k[static_cast<std::size_t>(b.degree())] += opt.fault.knot_shift;
        dims.emplace_back(b.degree(), k);
      }
      basis.spline = SplineBasis(std::move(dims), basis.spline.tensor_product());
    }
    double worst = 0.0;
    for (int i = 0; i <= 40; ++i)
      for (int j = 0; j <= 40; ++j) {
        const Eigen::Vector2d x(i / 40.0, j / 40.0);
        worst = std::max(worst, std::abs(basis.spline.evaluate(x).sum() - 1.0));
      }
    for (const auto& b : basis.spline.dims())
      for (int i = 0; i < 400; ++i)
        worst = std::max(worst, std::abs(naive_partition_sum(b.knots(), b.degree(), i / 400.0) - 1.0));
    return worst;
  });

  const AtRiskSet at_risk = at_risk_rows(data);
  guarded("gmm_moment_residual", 1e-6, [&] {
    return fit_parametric_gmm(at_risk, HazardFeatures::NextReward, simulation_moment_function()).moment_inf_norm;
  });

  guarded("tilting_self_consistency_z", 3.0, [&] {
    const TiltingFit fit = fit_semiparametric(at_risk);
    // Largest |mean|/SE over the overall moment and each used bin.
    const Binned binned = [&] {
      std::vector<double> z;
      for (const auto& r : at_risk.rows) z.push_back(r.s(1));
      return discretize_shadow(z, fit.model.bins.n_bins());
    }();
    const int k = fit.model.bins.n_bins() - 1;
    std::vector<std::vector<double>> groups(static_cast<std::size_t>(k + 1));
    for (std::size_t i = 0; i < at_risk.rows.size(); ++i) {
      const auto& r = at_risk.rows[i];
      const double v = r.eta ? 1.0 / (1.0 - fit.model.hazard(r)) - 1.0 : -1.0;
      groups[static_cast<std::size_t>(k)].push_back(v);
      const int l = binned.index[i];
      if (l < k) groups[static_cast<std::size_t>(l)].push_back(v);
    }
    double worst = 0.0;
    for (const auto& g : groups) {
      double s = 0.0, sq = 0.0;
      for (double v : g) {
        s += v;
        sq += v * v;
      }
      const double n = static_cast<double>(g.size());
      const double mean = s / n;
      const double se = std::sqrt(std::max(sq / n - mean * mean, 0.0) / n);
      worst = std::max(worst, std::abs(mean) / se);
    }
    return worst;
  });

  guarded("residual_orthogonality", 1e-8, [&] {
    const SieveBasis basis = SieveBasis::fit(observed_states(data), SplineSpec{});
    const SieveDesign design = assemble_design(data, basis, TargetPolicy{}, 0.9);
    const BetaEstimate est = estimate_beta(design, EstimatorKind::CC, design.eta, 0.0);
    const Eigen::VectorXd e = residuals(est, design);
    const Eigen::VectorXd score = design.xi.transpose() * design.eta.cwiseProduct(e) / design.nT;
    return score.cwiseAbs().maxCoeff();
  });

  return rep;
}

inline nlohmann::json to_json(const ValidationReport& rep) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : rep.checks)
    checks.push_back({{"name", c.name},
                      {"pass", c.pass},
                      {"value", std::isfinite(c.value) ? nlohmann::json(c.value) : nlohmann::json()},
                      {"tolerance", c.tolerance},
                      {"detail", c.detail}});
  return {{"all_passed", rep.all_passed()}, {"checks", checks}};
}

}  // namespace opemiss
