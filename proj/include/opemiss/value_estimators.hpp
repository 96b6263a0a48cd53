#pragma once

#include "opemiss/common.hpp"
#include "opemiss/sieve_basis.hpp"

#include <json.hpp>

#include <cstdint>
#include <random>
#include <string>

namespace opemiss {

inline constexpr double kDefaultRidge = 1e-5;

enum class EstimatorKind { CC, IPW };

inline std::string to_string(EstimatorKind k) { return k == EstimatorKind::CC ? "CC" : "IPW"; }

struct BetaEstimate {
  Eigen::VectorXd beta;
  /// Σ̂ = (1/nT) Σ w ξ (ξ − γU)ᵀ, stored without the ridge.
  Eigen::MatrixXd sigma;
  Eigen::VectorXd rhs;
  double ridge = kDefaultRidge;
  EstimatorKind kind = EstimatorKind::CC;
  Eigen::VectorXd weights;

  Eigen::MatrixXd ridged_sigma() const {
    return sigma + ridge * Eigen::MatrixXd::Identity(sigma.rows(), sigma.cols());
  }
};

/// Solves (Σ̂ + ridge·I) β = (1/nT) Σ w ξ R. CC passes w = η, IPW passes ω.
inline BetaEstimate estimate_beta(const SieveDesign& design, EstimatorKind kind,
                                  const Eigen::VectorXd& weights, double ridge = kDefaultRidge) {
  if (weights.size() != design.size()) throw ShapeError("one weight per design row required");
  BetaEstimate est;
  est.kind = kind;
  est.ridge = ridge;
  est.weights = weights;
  // Unobserved rows carry zero weight and zeroed placeholders.
  const Eigen::MatrixXd xw = design.xi.array().colwise() * weights.array();
  const Eigen::MatrixXd diff = design.xi - design.gamma * design.u_next;
  est.sigma = (xw.transpose() * diff) / design.nT;
  est.rhs = (xw.transpose() * design.rewards) / design.nT;
  const Eigen::MatrixXd lhs = est.ridged_sigma();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(lhs);
  if (!lu.isInvertible()) throw NumericalError("estimating-equation matrix is singular");
  est.beta = lu.solve(est.rhs);
  const double scale = std::max(est.rhs.norm(), 1e-300);
  if ((lhs * est.beta - est.rhs).norm() / scale > 1e-8)
    throw NumericalError("estimating-equation solve is numerically unstable");
  return est;
}

inline double q_value(const BetaEstimate& est, const SieveBasis& basis, const Eigen::VectorXd& s, int a) {
  const int L = basis.size();
  return basis.evaluate(s).dot(est.beta.segment(a * L, L));
}

template <Policy Pi>
double state_value(const BetaEstimate& est, const SieveBasis& basis, const Eigen::VectorXd& s,
                   const Pi& policy) {
  const int m = static_cast<int>(est.beta.size() / basis.size());
  return u_features(basis, s, policy, m).dot(est.beta);
}

/// n_ref draws from the standard bivariate normal reference distribution.
inline Eigen::MatrixXd reference_states(std::size_t n_ref, std::uint64_t seed) {
  if (n_ref < 1) throw ConfigError("n_ref must be at least 1");
  auto rng = make_rng(seed, 0, Stream::Reference);
  std::normal_distribution<double> z;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n_ref), 2);
  for (Eigen::Index k = 0; k < out.rows(); ++k) {
    out(k, 0) = z(rng);
    out(k, 1) = z(rng);
  }
  return out;
}

/// ū = (1/n_ref) Σ_k U_π(s_k).
template <Policy Pi>
Eigen::VectorXd reference_average(const SieveBasis& basis, const Pi& policy,
                                  const Eigen::MatrixXd& ref_states, int n_actions = 2) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n_actions * basis.size());
  for (Eigen::Index k = 0; k < ref_states.rows(); ++k)
    acc += u_features(basis, Eigen::VectorXd(ref_states.row(k).transpose()), policy, n_actions);
  return acc / static_cast<double>(ref_states.rows());
}

struct IntegratedValue {
  double value = 0.0;
  Eigen::VectorXd u_bar;
};

template <Policy Pi>
IntegratedValue integrated_value(const BetaEstimate& est, const SieveBasis& basis, const Pi& policy,
                                 const Eigen::MatrixXd& ref_states) {
  IntegratedValue out;
  const int m = static_cast<int>(est.beta.size() / basis.size());
  out.u_bar = reference_average(basis, policy, ref_states, m);
  out.value = out.u_bar.dot(est.beta);
  return out;
}

struct ValueReport {
  std::string estimator;
  double v_hat = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t n = 0;
  int T = 0;
  double alpha = 0.05;
};

inline nlohmann::json to_json(const BetaEstimate& est) {
  return {{"kind", to_string(est.kind)},
          {"ridge", est.ridge},
          {"beta", std::vector<double>(est.beta.data(), est.beta.data() + est.beta.size())}};
}

inline nlohmann::json to_json(const ValueReport& r) {
  return {{"estimator", r.estimator}, {"v_hat", r.v_hat}, {"se", r.se},       {"ci_lo", r.ci_lo},
          {"ci_hi", r.ci_hi},         {"n", r.n},         {"T", r.T},         {"alpha", r.alpha}};
}

}  // namespace opemiss
