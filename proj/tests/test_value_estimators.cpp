#include <gtest/gtest.h>

#include "opemiss/env_sim.hpp"
#include "opemiss/sieve_basis.hpp"
#include "opemiss/value_estimators.hpp"

#include <cmath>

using namespace opemiss;

namespace {

struct Fixture {
  Dataset data;
  SieveBasis basis;
  SieveDesign design;
};

Fixture make_fixture(std::size_t n, bool dropout, std::uint64_t seed = 21) {
  EnvConfig c;
  c.n = n;
  c.T = 10;
  c.seed = seed;
  LinearEnv2D env;
  env.contraction = 0.75;
  Fixture f;
  f.data = generate_complete(c, env);
  if (dropout) f.data = apply_dropout(f.data, DropoutSpec::mnar(Eigen::Vector3d(2.2, 0.15, -0.3)), seed);
  f.basis = SieveBasis::fit(observed_states(f.data), SplineSpec{});
  f.design = assemble_design(f.data, f.basis, TargetPolicy{}, 0.9);
  return f;
}

/// Independent tabular design: indicator features, population mass per (s, a, s').
struct Tabular {
  SieveDesign design;
  Eigen::VectorXd mass;
};

Tabular tabular(const TabularOracleEnv& env, const Eigen::MatrixXd& pi) {
  const int S = env.n_states, A = env.n_actions;
  Tabular t;
  t.design.n_actions = A;
  t.design.basis_size = S;
  t.design.gamma = env.gamma;
  t.design.nT = 1.0;
  const int N = S * A * S;
  t.design.xi = Eigen::MatrixXd::Zero(N, S * A);
  t.design.u_next = Eigen::MatrixXd::Zero(N, S * A);
  t.design.rewards.resize(N);
  t.design.eta = Eigen::VectorXd::Ones(N);
  t.mass.resize(N);
  int row = 0;
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a)
      for (int sp = 0; sp < S; ++sp, ++row) {
        t.design.xi(row, a * S + s) = 1.0;
        for (int ap = 0; ap < A; ++ap) t.design.u_next(row, ap * S + sp) = pi(sp, ap);
        t.design.rewards(row) = env.r(s, a);
        t.mass(row) = env.P[static_cast<std::size_t>(a)](s, sp);
      }
  return t;
}

}  // namespace

TEST(EstimateBeta, RidgedSystemSolved) {
  const Fixture f = make_fixture(200, true);
  const BetaEstimate e = estimate_beta(f.design, EstimatorKind::CC, f.design.eta);
  EXPECT_EQ(e.beta.size(), 72);
  const Eigen::VectorXd res = e.ridged_sigma() * e.beta - e.rhs;
  EXPECT_LT(res.norm() / e.rhs.norm(), 1e-8);
}

TEST(EstimateBeta, UnitWeightsCcEqualsIpwBitwise) {
  const Fixture f = make_fixture(200, false);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(f.design.size());
  const BetaEstimate cc = estimate_beta(f.design, EstimatorKind::CC, f.design.eta);
  const BetaEstimate ipw = estimate_beta(f.design, EstimatorKind::IPW, ones);
  EXPECT_EQ(cc.beta, ipw.beta);
}

TEST(EstimateBeta, ResidualOrthogonalityWithoutRidge) {
  const Fixture f = make_fixture(300, true);
  const BetaEstimate e = estimate_beta(f.design, EstimatorKind::CC, f.design.eta, 0.0);
  const Eigen::VectorXd resid =
      f.design.rewards - (f.design.xi - f.design.gamma * f.design.u_next) * e.beta;
  const Eigen::VectorXd score = f.design.xi.transpose() * f.design.eta.cwiseProduct(resid) / f.design.nT;
  EXPECT_LT(score.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(EstimateBeta, RewardScalingIsLinear) {
  Fixture f = make_fixture(300, true);
  const BetaEstimate e1 = estimate_beta(f.design, EstimatorKind::CC, f.design.eta);
  f.design.rewards *= 3.5;
  const BetaEstimate e2 = estimate_beta(f.design, EstimatorKind::CC, f.design.eta);
  EXPECT_LT((e2.beta - 3.5 * e1.beta).norm() / (3.5 * e1.beta.norm()), 1e-6);
}

TEST(EstimateBeta, SigmaStoredWithoutRidge) {
  const Fixture f = make_fixture(100, false);
  const BetaEstimate e = estimate_beta(f.design, EstimatorKind::CC, f.design.eta);
  const Eigen::MatrixXd direct =
      f.design.xi.transpose() * (f.design.xi - 0.9 * f.design.u_next) / f.design.nT;
  EXPECT_LT((e.sigma - direct).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(EstimateBeta, SingularWithoutRidge) {
  Fixture f = make_fixture(50, false);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(f.design.size());
  EXPECT_THROW(estimate_beta(f.design, EstimatorKind::CC, zero, 0.0), NumericalError);
  EXPECT_THROW(estimate_beta(f.design, EstimatorKind::CC, Eigen::VectorXd::Ones(3)), ShapeError);
}

TEST(EstimateBeta, TabularOracleBothEstimators) {
  const TabularOracleEnv env = TabularOracleEnv::random(7, 2, 0.9, 5);
  Eigen::MatrixXd pi(7, 2);
  for (int s = 0; s < 7; ++s) pi.row(s) << (s % 3) / 3.0, 1.0 - (s % 3) / 3.0;
  const Tabular t = tabular(env, pi);
  const Eigen::MatrixXd q = oracle_q(env, pi);
  // IPW: observed mass (1 − λ)·P reweighted by 1/(1 − λ).
  Eigen::VectorXd ipw_w(t.mass.size());
  for (Eigen::Index i = 0; i < ipw_w.size(); ++i) {
    const double lam = 0.1 + 0.05 * static_cast<double>(i % 7);
    ipw_w(i) = t.mass(i) * (1.0 - lam) / (1.0 - lam);
  }
  for (const auto& [kind, w] : {std::pair{EstimatorKind::CC, t.mass}, std::pair{EstimatorKind::IPW, ipw_w}}) {
    const BetaEstimate e = estimate_beta(t.design, kind, w, 0.0);
    for (int s = 0; s < 7; ++s)
      for (int a = 0; a < 2; ++a) EXPECT_NEAR(e.beta(a * 7 + s), q(s, a), 1e-6);
  }
}

TEST(QValue, ZeroBetaAndBlockExtraction) {
  const Fixture f = make_fixture(100, false);
  BetaEstimate e;
  e.beta = Eigen::VectorXd::Zero(72);
  EXPECT_EQ(q_value(e, f.basis, Eigen::Vector2d(0.1, 0.2), 1), 0.0);
  e.beta = Eigen::VectorXd::LinSpaced(72, -1.0, 1.0);
  const Eigen::Vector2d s(0.3, -0.4);
  for (int a = 0; a < 2; ++a)
    EXPECT_NEAR(q_value(e, f.basis, s, a), xi_features(f.basis, s, a, 2).dot(e.beta), 1e-14);
}

TEST(StateValue, PolicyWeightedQ) {
  const Fixture f = make_fixture(100, false);
  BetaEstimate e;
  e.beta = Eigen::VectorXd::LinSpaced(72, -2.0, 3.0);
  const auto mixed = [](const Eigen::VectorXd& s) {
    const double p = 1.0 / (1.0 + std::exp(-s(0)));
    return Eigen::Vector2d(1.0 - p, p).eval();
  };
  for (double x : {-1.0, 0.0, 0.7}) {
    const Eigen::Vector2d s(x, 0.5 * x);
    const Eigen::VectorXd p = mixed(s);
    const double expect = p(0) * q_value(e, f.basis, s, 0) + p(1) * q_value(e, f.basis, s, 1);
    EXPECT_NEAR(state_value(e, f.basis, s, mixed), expect, 1e-12);
  }
}

TEST(IntegratedValue, ConstantFunction) {
  const Fixture f = make_fixture(100, false);
  BetaEstimate e;
  e.beta = Eigen::VectorXd::Constant(72, 2.5);  // Φ sums to one in each block
  const Eigen::MatrixXd ref = reference_states(500, 3);
  EXPECT_NEAR(integrated_value(e, f.basis, TargetPolicy{}, ref).value, 2.5, 1e-12);
}

TEST(IntegratedValue, ReferencePrefixReproducible) {
  const Eigen::MatrixXd a = reference_states(1000, 9);
  const Eigen::MatrixXd b = reference_states(2000, 9);
  EXPECT_EQ(a, b.topRows(1000));
}

TEST(IntegratedValue, DoublingReferenceIsMcNoise) {
  const Fixture f = make_fixture(300, false);
  const BetaEstimate e = estimate_beta(f.design, EstimatorKind::CC, f.design.eta);
  const double v1 = integrated_value(e, f.basis, TargetPolicy{}, reference_states(10000, 4)).value;
  const double v2 = integrated_value(e, f.basis, TargetPolicy{}, reference_states(20000, 4)).value;
  EXPECT_LT(std::abs(v1 - v2), 0.1);
}

TEST(IntegratedValue, ReturnsAveragedU) {
  const Fixture f = make_fixture(100, false);
  const Eigen::MatrixXd ref = reference_states(50, 2);
  BetaEstimate e;
  e.beta = Eigen::VectorXd::Ones(72);
  const IntegratedValue iv = integrated_value(e, f.basis, TargetPolicy{}, ref);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(72);
  for (Eigen::Index k = 0; k < 50; ++k)
    acc += u_features(f.basis, Eigen::VectorXd(ref.row(k).transpose()), TargetPolicy{}, 2);
  EXPECT_LT((iv.u_bar - acc / 50.0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Serialization, BetaJson) {
  BetaEstimate e;
  e.beta = Eigen::Vector3d(1.0, -2.0, 0.5);
  e.kind = EstimatorKind::IPW;
  const nlohmann::json j = to_json(e);
  EXPECT_EQ(j.at("kind"), "IPW");
  EXPECT_EQ(j.at("beta").get<std::vector<double>>(), (std::vector<double>{1.0, -2.0, 0.5}));
  EXPECT_EQ(j.at("ridge").get<double>(), 1e-5);
}
