#include <gtest/gtest.h>

#include "opemiss/env_sim.hpp"
#include "opemiss/sieve_basis.hpp"

#include <cmath>
#include <random>

using namespace opemiss;

namespace {

/// B_{j,p}(x) straight from the recursive definition, half-open spans.
double cox_de_boor(const std::vector<double>& t, int j, int p, double x) {
  const auto J = static_cast<std::size_t>(j);
  const auto P = static_cast<std::size_t>(p);
  if (p == 0) return (t[J] <= x && x < t[J + 1]) ? 1.0 : 0.0;
  double v = 0.0;
  if (t[J + P] > t[J]) v += (x - t[J]) / (t[J + P] - t[J]) * cox_de_boor(t, j, p - 1, x);
  if (t[J + P + 1] > t[J + 1]) v += (t[J + P + 1] - x) / (t[J + P + 1] - t[J + 1]) * cox_de_boor(t, j + 1, p - 1, x);
  return v;
}

Eigen::MatrixXd random_states(int n, std::uint64_t seed) {
  auto rng = make_rng(seed, 0, Stream::Reference);
  std::normal_distribution<double> z;
  Eigen::MatrixXd s(n, 2);
  for (int i = 0; i < n; ++i) s.row(i) << z(rng), 2.0 * z(rng) + 1.0;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scaler
// ---------------------------------------------------------------------------

TEST(StateScaler, AffineMap) {
  Eigen::MatrixXd s(3, 1);
  s << -2.0, 0.0, 2.0;
  const StateScaler sc = fit_scaler(s);
  EXPECT_DOUBLE_EQ(sc.scale(0, -2.0), 0.0);
  EXPECT_DOUBLE_EQ(sc.scale(0, 0.0), 0.5);
  EXPECT_DOUBLE_EQ(sc.scale(0, 2.0), 1.0);
}

TEST(StateScaler, ClampsOutOfRange) {
  Eigen::MatrixXd s(2, 1);
  s << -2.0, 2.0;
  const StateScaler sc = fit_scaler(s);
  EXPECT_DOUBLE_EQ(sc.scale(0, 3.0), 1.0);
  EXPECT_DOUBLE_EQ(sc.scale(0, -7.0), 0.0);
}

TEST(StateScaler, RefitOnScaledIsIdentity) {
  const Eigen::MatrixXd s = random_states(200, 1);
  const StateScaler sc = fit_scaler(s);
  const Eigen::MatrixXd scaled = sc.scale_rows(s);
  const StateScaler again = fit_scaler(scaled);
  EXPECT_LT((again.scale_rows(scaled) - scaled).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(StateScaler, ConstantDimensionRejected) {
  Eigen::MatrixXd s(3, 2);
  s << 1.0, 0.0, 2.0, 0.0, 3.0, 0.0;
  EXPECT_THROW(fit_scaler(s), DegenerateDataError);
}

// ---------------------------------------------------------------------------
// One-dimensional splines
// ---------------------------------------------------------------------------

TEST(BSpline1D, MatchesRecursiveDefinition) {
  const BSpline1D b = BSpline1D::clamped(3, {0.3, 0.55});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const double x = u(rng);
    const Eigen::VectorXd v = b.evaluate(x);
    for (int j = 0; j < b.size(); ++j) EXPECT_NEAR(v(j), cox_de_boor(b.knots(), j, 3, x), 1e-13);
  }
}

TEST(BSpline1D, PartitionOfUnity) {
  const BSpline1D b = BSpline1D::clamped(3, {0.2, 0.7});
  ASSERT_EQ(b.size(), 6);
  for (int i = 0; i <= 1000; ++i) EXPECT_NEAR(b.evaluate(i / 1000.0).sum(), 1.0, 1e-10);
}

TEST(BSpline1D, RightEndpoint) {
  const BSpline1D b = BSpline1D::clamped(3, {0.4, 0.6});
  const Eigen::VectorXd v = b.evaluate(1.0);
  EXPECT_NEAR(v(5), 1.0, 1e-15);
  EXPECT_NEAR(v.sum(), 1.0, 1e-15);
}

TEST(BSpline1D, DegreeZeroIsIndicator) {
  const BSpline1D b(0, {0.0, 0.5, 1.0});
  EXPECT_EQ(b.evaluate(0.25), Eigen::Vector2d(1.0, 0.0));
  EXPECT_EQ(b.evaluate(0.75), Eigen::Vector2d(0.0, 1.0));
  for (double x : {0.0, 0.1, 0.5, 0.99, 1.0}) {
    const Eigen::VectorXd v = b.evaluate(x);
    for (int j = 0; j < 2; ++j) EXPECT_TRUE(v(j) == 0.0 || v(j) == 1.0);
  }
}

TEST(BSpline1D, InvalidKnots) {
  EXPECT_THROW(BSpline1D(3, {0, 0, 1, 1}), BasisError);
  EXPECT_THROW(BSpline1D(1, {0, 1, 0.5, 1}), BasisError);
}

// ---------------------------------------------------------------------------
// Multivariate basis
// ---------------------------------------------------------------------------

TEST(SplineBasis, TensorSizeIs36) {
  const SieveBasis b = SieveBasis::fit(random_states(500, 2), SplineSpec{});
  EXPECT_EQ(b.size(), 36);
}

TEST(SplineBasis, AdditiveSize) {
  SplineSpec spec;
  spec.tensor_product = false;
  const SieveBasis b = SieveBasis::fit(random_states(500, 2), spec);
  EXPECT_EQ(b.size(), 12);
}

TEST(SplineBasis, TensorPartitionOfUnityAndLocalSupport) {
  const SieveBasis b = SieveBasis::fit(random_states(500, 3), SplineSpec{});
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-4.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::VectorXd phi = b.evaluate(Eigen::Vector2d(u(rng), u(rng)));
    EXPECT_NEAR(phi.sum(), 1.0, 1e-10);
    EXPECT_LE((phi.array() != 0.0).count(), 16);
    EXPECT_GE(phi.minCoeff(), 0.0);
  }
}

TEST(SplineBasis, TensorIsProductOfMarginals) {
  const SieveBasis b = SieveBasis::fit(random_states(300, 5), SplineSpec{});
  const Eigen::Vector2d x(0.3, 0.8);
  const Eigen::VectorXd phi = b.spline.evaluate(x);
  const Eigen::VectorXd b0 = b.spline.dims()[0].evaluate(x(0));
  const Eigen::VectorXd b1 = b.spline.dims()[1].evaluate(x(1));
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) EXPECT_NEAR(phi(i * 6 + j), b0(i) * b1(j), 1e-15);
}

TEST(SplineBasis, InteriorKnotsAtQuantiles) {
  Eigen::MatrixXd s(101, 1);
  for (int i = 0; i <= 100; ++i) s(i, 0) = i;
  const SieveBasis b = SieveBasis::fit(s, SplineSpec{});
  const auto& k = b.spline.dims()[0].knots();
  ASSERT_EQ(k.size(), 10u);
  EXPECT_NEAR(k[4], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(k[5], 2.0 / 3.0, 1e-12);
  for (int j = 0; j < 4; ++j) EXPECT_EQ(k[static_cast<std::size_t>(j)], 0.0);
}

TEST(SplineBasis, TiedQuantilesDeduplicatedWithWarning) {
  // Two thirds of the mass at one value puts both interior quantiles on it.
  Eigen::MatrixXd s(30, 1);
  for (int i = 0; i < 30; ++i) s(i, 0) = i < 5 ? 0.0 : (i < 25 ? 0.5 : 1.0);
  const SieveBasis b = SieveBasis::fit(s, SplineSpec{});
  EXPECT_EQ(b.size(), 5);
  EXPECT_EQ(b.spline.warnings().size(), 1u);
}

TEST(SplineBasis, TooFewDistinctQuantiles) {
  Eigen::MatrixXd s(30, 1);
  for (int i = 0; i < 30; ++i) s(i, 0) = i < 15 ? 0.0 : 1.0;
  SplineSpec spec;
  EXPECT_THROW(SieveBasis::fit(s, spec), BasisError);
}

TEST(SplineBasis, JsonRoundTrip) {
  const SieveBasis b = SieveBasis::fit(random_states(200, 6), SplineSpec{});
  const SieveBasis back = sieve_basis_from_json(to_json(b));
  for (double x : {-3.0, -0.2, 0.4, 2.0})
    EXPECT_EQ(b.evaluate(Eigen::Vector2d(x, -x)), back.evaluate(Eigen::Vector2d(x, -x)));
}

// ---------------------------------------------------------------------------
// Design assembly
// ---------------------------------------------------------------------------

namespace {

Dataset sample_data(std::size_t n, std::uint64_t seed, bool dropout) {
  EnvConfig c;
  c.n = n;
  c.T = 6;
  c.seed = seed;
  const Dataset full = generate_complete(c);
  return dropout ? apply_dropout(full, DropoutSpec::mnar(Eigen::Vector3d(0.5, 0.15, -0.3)), seed) : full;
}

}  // namespace

TEST(Design, XiBlockStructure) {
  const Dataset d = sample_data(40, 1, true);
  const SieveBasis b = SieveBasis::fit(observed_states(d), SplineSpec{});
  const SieveDesign des = assemble_design(d, b, TargetPolicy{}, 0.9);
  for (Eigen::Index i = 0; i < des.size(); ++i) {
    const auto& r = des.rows[static_cast<std::size_t>(i)];
    const Transition& tr = d[r.traj].transitions[static_cast<std::size_t>(r.t)];
    const int a = tr.action();
    EXPECT_EQ(des.xi.row(i).segment(a * 36, 36).transpose(), b.evaluate(tr.state()));
    EXPECT_EQ(des.xi.row(i).segment((1 - a) * 36, 36).cwiseAbs().sum(), 0.0);
  }
}

TEST(Design, UnobservedRowsZeroed) {
  const Dataset d = sample_data(200, 2, true);
  const SieveBasis b = SieveBasis::fit(observed_states(d), SplineSpec{});
  const SieveDesign des = assemble_design(d, b, TargetPolicy{}, 0.9);
  int unobserved = 0;
  for (Eigen::Index i = 0; i < des.size(); ++i)
    if (des.eta(i) == 0.0) {
      ++unobserved;
      EXPECT_EQ(des.rewards(i), 0.0);
      EXPECT_EQ(des.u_next.row(i).cwiseAbs().sum(), 0.0);
    }
  EXPECT_GT(unobserved, 0);
  EXPECT_EQ(des.nT, 200.0 * 6.0);
}

TEST(Design, DeterministicPolicyCollapsesU) {
  const Dataset d = sample_data(30, 3, false);
  const SieveBasis b = SieveBasis::fit(observed_states(d), SplineSpec{});
  const TargetPolicy pi;
  const SieveDesign des = assemble_design(d, b, pi, 0.9);
  for (Eigen::Index i = 0; i < des.size(); ++i) {
    const auto& r = des.rows[static_cast<std::size_t>(i)];
    const State sn = d[r.traj].transitions[static_cast<std::size_t>(r.t)].next_state();
    const int a = pi(sn)(1) > 0.5 ? 1 : 0;
    EXPECT_EQ(des.u_next.row(i).transpose(), xi_features(b, sn, a, 2));
  }
}

TEST(Design, StochasticPolicyBlockSumsToPhi) {
  const auto half = [](const Eigen::VectorXd&) { return Eigen::Vector2d(0.3, 0.7).eval(); };
  const Dataset d = sample_data(20, 4, false);
  const SieveBasis b = SieveBasis::fit(observed_states(d), SplineSpec{});
  for (const auto& t : d)
    for (const auto& tr : t.transitions) {
      const Eigen::VectorXd u = u_features(b, tr.next_state(), half, 2);
      const Eigen::VectorXd phi = b.evaluate(tr.next_state());
      EXPECT_LT((u.head(36) + u.tail(36) - phi).cwiseAbs().maxCoeff(), 1e-15);
      EXPECT_LE(u.norm(), phi.norm() + 1e-15);
    }
}

TEST(Design, PermutationEquivariant) {
  Dataset d = sample_data(25, 5, true);
  const SieveBasis b = SieveBasis::fit(observed_states(d), SplineSpec{});
  const SieveDesign des = assemble_design(d, b, TargetPolicy{}, 0.9);
  Dataset rev(d.rbegin(), d.rend());
  const SieveDesign drev = assemble_design(rev, b, TargetPolicy{}, 0.9);
  ASSERT_EQ(des.size(), drev.size());
  // Row blocks appear in reversed trajectory order.
  std::vector<Eigen::Index> start(d.size() + 1, 0);
  for (std::size_t i = 0; i < d.size(); ++i) start[i + 1] = start[i] + static_cast<Eigen::Index>(d[i].transitions.size());
  Eigen::Index row = 0;
  for (std::size_t k = d.size(); k-- > 0;)
    for (Eigen::Index j = start[k]; j < start[k + 1]; ++j, ++row) {
      EXPECT_EQ(des.xi.row(j), drev.xi.row(row));
      EXPECT_EQ(des.u_next.row(j), drev.u_next.row(row));
      EXPECT_EQ(des.rewards(j), drev.rewards(row));
    }
}

TEST(Design, ShapeErrors) {
  const Dataset d = sample_data(10, 6, false);
  const SieveBasis b = SieveBasis::fit(observed_states(d), SplineSpec{});
  EXPECT_THROW(assemble_design(Dataset{}, b, TargetPolicy{}, 0.9), ShapeError);
  Eigen::MatrixXd s3 = Eigen::MatrixXd::Random(50, 3);
  const SieveBasis b3 = SieveBasis::fit(s3, SplineSpec{});
  EXPECT_THROW(assemble_design(d, b3, TargetPolicy{}, 0.9), ShapeError);
  EXPECT_THROW(b.evaluate(Eigen::Vector3d(0, 0, 0)), ShapeError);
}
