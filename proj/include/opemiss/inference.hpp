#pragma once

#include "opemiss/common.hpp"
#include "opemiss/dropout_propensity.hpp"
#include "opemiss/sieve_basis.hpp"
#include "opemiss/value_estimators.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace opemiss {

/// ε̂ = R + γ U_πᵀβ̂ − ξᵀβ̂ on observed rows, 0 elsewhere.
inline Eigen::VectorXd residuals(const BetaEstimate& est, const SieveDesign& design) {
  Eigen::VectorXd e = design.rewards + design.gamma * (design.u_next * est.beta) - design.xi * est.beta;
  return (design.eta.array() > 0.5).select(e, 0.0);
}

/// Ω̃ = (1/nT) Σ ω² ε̂² ξ ξᵀ.
inline Eigen::MatrixXd omega_tilde(const SieveDesign& design, const Eigen::VectorXd& weights,
                                   const Eigen::VectorXd& resid) {
  const Eigen::VectorXd c = weights.cwiseProduct(resid);
  const Eigen::MatrixXd xc = design.xi.array().colwise() * c.array();
  Eigen::MatrixXd om = (xc.transpose() * xc) / design.nT;
  return 0.5 * (om + om.transpose());
}

/// First-order effect of the estimated dropout parameter on the weights.
///
/// Rows align with the design. `m` holds the per-row estimating function
/// used to fit ψ, `grad_omega` the per-row ∇_ψ ω, and `jacobian` the
/// average (1/nT) Σ ∂m/∂ψ. For the moment (ω − 1)h the jacobian is
/// (1/nT) Σ h ∇_ψ ωᵀ.
struct PsiInfluence {
  Eigen::MatrixXd m;
  Eigen::MatrixXd grad_omega;
  Eigen::MatrixXd jacobian;
};

struct OmegaResult {
  Eigen::MatrixXd omega;
  Eigen::MatrixXd H2;
  std::vector<std::string> warnings;
};

inline constexpr double kInverseRidge = 1e-8;

/// Ω̂ = (1/nT) Σ (ω ξ ε̂ − Ĥ₂ m)(ω ξ ε̂ − Ĥ₂ m)ᵀ with
/// Ĥ₂ = [(1/nT) Σ ξ ε̂ ∇_ψωᵀ] J⁻¹.
inline OmegaResult omega_full(const SieveDesign& design, const Eigen::VectorXd& weights,
                              const Eigen::VectorXd& resid, const PsiInfluence& infl) {
  const Eigen::Index N = design.size();
  if (infl.m.rows() != N || infl.grad_omega.rows() != N) throw ShapeError("influence rows must align with design");
  const Eigen::Index q = infl.m.cols();
  if (infl.jacobian.rows() != q || infl.jacobian.cols() != q) throw ShapeError("jacobian must be q x q");
  OmegaResult out;
  const Eigen::MatrixXd xe = design.xi.array().colwise() * resid.array();
  const Eigen::MatrixXd A = (xe.transpose() * infl.grad_omega) / design.nT;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(infl.jacobian);
  Eigen::MatrixXd jinv;
  if (lu.isInvertible()) {
    jinv = lu.inverse();
  } else {
    out.warnings.push_back("dropout jacobian singular; ridge-stabilized inverse used");
    jinv = (infl.jacobian + kInverseRidge * Eigen::MatrixXd::Identity(q, q)).fullPivLu().inverse();
  }
  out.H2 = A * jinv;
  const Eigen::MatrixXd z =
      (design.xi.array().colwise() * weights.cwiseProduct(resid).array()).matrix() -
      infl.m * out.H2.transpose();
  out.omega = (z.transpose() * z) / design.nT;
  out.omega = 0.5 * (out.omega + out.omega.transpose());
  return out;
}

/// Influence of ψ̂ from the shadow-variable GMM, m = {η/(1 − λ) − 1} h.
/// Rows outside the at-risk window have m = 0 and ∇ω = 0.
inline PsiInfluence gmm_influence(const SieveDesign& design, const AtRiskSet& at_risk,
                                  const PropensityModelParametric& model, const MomentFunction& h) {
  const Eigen::Index N = design.size();
  if (static_cast<Eigen::Index>(at_risk.n_design_rows) != N) throw ShapeError("at-risk set does not match design");
  const Eigen::Index q = model.psi.size();
  PsiInfluence out;
  out.grad_omega = Eigen::MatrixXd::Zero(N, q);
  Eigen::MatrixXd hrows;
  for (const auto& r : at_risk.rows) {
    const Eigen::VectorXd hi = h(r);
    if (out.m.size() == 0) {
      out.m = Eigen::MatrixXd::Zero(N, hi.size());
      hrows = Eigen::MatrixXd::Zero(N, hi.size());
    }
    const auto i = static_cast<Eigen::Index>(r.design_row);
    hrows.row(i) = hi.transpose();
    if (r.eta) {
      const double l = model.hazard(r);
      out.m.row(i) = (1.0 / (1.0 - l) - 1.0) * hi.transpose();
      out.grad_omega.row(i) = (model.hazard_gradient(r) / ((1.0 - l) * (1.0 - l))).transpose();
    } else {
      out.m.row(i) = -hi.transpose();
    }
  }
  if (out.m.size() == 0) throw DegenerateDataError("no at-risk transitions");
  if (out.m.cols() != q) throw ShapeError("influence correction needs a just-identified moment");
  out.jacobian = hrows.transpose() * out.grad_omega / design.nT;
  return out;
}

/// Influence of ψ̂ from the logistic likelihood, score (λ − 1{η = 0}) x.
inline PsiInfluence logistic_influence(const SieveDesign& design, const AtRiskSet& at_risk,
                                       const PropensityModelParametric& model) {
  const Eigen::Index N = design.size();
  if (static_cast<Eigen::Index>(at_risk.n_design_rows) != N) throw ShapeError("at-risk set does not match design");
  const Eigen::Index q = model.psi.size();
  PsiInfluence out;
  out.m = Eigen::MatrixXd::Zero(N, q);
  out.grad_omega = Eigen::MatrixXd::Zero(N, q);
  out.jacobian = Eigen::MatrixXd::Zero(q, q);
  for (const auto& r : at_risk.rows) {
    const auto i = static_cast<Eigen::Index>(r.design_row);
    const Eigen::VectorXd x = hazard_features(model.features, r);
    const double l = model.hazard_from(x);
    out.m.row(i) = ((l - (r.eta ? 0.0 : 1.0)) * x).transpose();
    out.jacobian -= l * (1.0 - l) * x * x.transpose();
    if (r.eta) out.grad_omega.row(i) = (-l / (1.0 - l) * x).transpose();
  }
  out.jacobian /= design.nT;
  return out;
}

/// σ̂² = ūᵀ Σ̂⁻¹ Ω (Σ̂ᵀ)⁻¹ ū, with Σ̂ replaced by Σ̂ + ridge·I in the solve.
inline double sigma_hat(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& omega,
                        const Eigen::VectorXd& u_bar, double ridge = 0.0) {
  const Eigen::MatrixXd lhs = sigma + ridge * Eigen::MatrixXd::Identity(sigma.rows(), sigma.cols());
  Eigen::FullPivLU<Eigen::MatrixXd> lu(lhs.transpose());
  if (!lu.isInvertible()) throw NumericalError("Sigma is singular");
  const Eigen::VectorXd v = lu.solve(u_bar);
  const double s2 = v.dot(omega * v);
  if (s2 < -1e-10) throw NumericalError("negative variance estimate");
  return std::max(s2, 0.0);
}

inline double sigma_hat(const BetaEstimate& est, const Eigen::MatrixXd& omega, const Eigen::VectorXd& u_bar) {
  return sigma_hat(est.sigma, omega, u_bar, est.ridge);
}

/// z_{α/2}: the (1 − α/2) standard normal quantile; 0 at α = 1.
inline double normal_critical(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  if (alpha == 1.0) return 0.0;
  return boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - alpha / 2.0);
}

inline std::pair<double, double> confidence_interval(double v_hat, double sigma, double nT, double alpha) {
  const double half = normal_critical(alpha) * sigma / std::sqrt(nT);
  return {v_hat - half, v_hat + half};
}

}  // namespace opemiss
