#pragma once

#include "opemiss/common.hpp"
#include "opemiss/env_sim.hpp"
#include "opemiss/optimize.hpp"
#include "opemiss/sieve_basis.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace opemiss {

inline constexpr double kWeightFloor = 0.01;

// ---------------------------------------------------------------------------
// At-risk transitions
// ---------------------------------------------------------------------------

/// A transition that could have dropped out (t ≥ first_at_risk, η_t = 1).
/// Reward and next state are present only when `eta` is true.
struct AtRiskRow {
  std::size_t design_row = 0;
  std::size_t traj = 0;
  int t = 0;
  State s = State::Zero();
  int a = 0;
  double prev_reward = 0.0;
  bool eta = true;
  double reward = 0.0;
  State s_next = State::Zero();
};

struct AtRiskSet {
  std::vector<AtRiskRow> rows;
  /// Row count of the matching design (all transitions with observed S_t).
  std::size_t n_design_rows = 0;

  std::size_t size() const { return rows.size(); }
  std::size_t n_dropouts() const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.eta; }));
  }
};

/// Design rows are numbered in the order used by `assemble_design`.
inline AtRiskSet at_risk_rows(const Dataset& data, int first_at_risk = 1) {
  AtRiskSet out;
  std::size_t design_row = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& trs = data[i].transitions;
    for (std::size_t t = 0; t < trs.size(); ++t, ++design_row) {
      if (static_cast<int>(t) < first_at_risk) continue;
      const Transition& tr = trs[t];
      AtRiskRow row;
      row.design_row = design_row;
      row.traj = i;
      row.t = static_cast<int>(t);
      row.s = tr.state();
      row.a = tr.action();
      row.prev_reward = trs[t - 1].reward();
      row.eta = tr.observed();
      if (row.eta) {
        row.reward = tr.reward();
        row.s_next = tr.next_state();
      }
      out.rows.push_back(row);
    }
  }
  out.n_design_rows = design_row;
  return out;
}

// ---------------------------------------------------------------------------
// Parametric logistic-index hazard
// ---------------------------------------------------------------------------

/// Covariates of the linear index ψᵀx in λ = {1 + exp(ψᵀx)}⁻¹.
enum class HazardFeatures {
  NextReward,  // x = (1, S¹_t, R_{t+1}); nonignorable
  PrevReward,  // x = (1, S¹_t, R_t); ignorable
};

inline Eigen::Vector3d hazard_features(HazardFeatures f, const AtRiskRow& row) {
  if (f == HazardFeatures::NextReward) {
    if (!row.eta) throw StateError("nonignorable hazard needs the unobserved reward");
    return {1.0, row.s(0), row.reward};
  }
  return {1.0, row.s(0), row.prev_reward};
}

struct PropensityModelParametric {
  HazardFeatures features = HazardFeatures::NextReward;
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(3);

  std::string family() const {
    return features == HazardFeatures::NextReward ? "logistic_mnar" : "logistic_mar";
  }
  double hazard_from(const Eigen::VectorXd& x) const { return logistic_hazard(psi.dot(x)); }
  double hazard(const AtRiskRow& row) const { return hazard_from(hazard_features(features, row)); }
  /// ∂λ/∂ψ = −λ(1 − λ) x.
  Eigen::VectorXd hazard_gradient(const AtRiskRow& row) const {
    const Eigen::VectorXd x = hazard_features(features, row);
    const double l = hazard_from(x);
    return -l * (1.0 - l) * x;
  }
};

/// h(S_t, A_t, Z_t) for the moment conditions.
using MomentFunction = std::function<Eigen::VectorXd(const AtRiskRow&)>;

/// h = (1, S¹_t, S²_t): intercept, non-shadow covariate, shadow variable.
inline MomentFunction simulation_moment_function() {
  return [](const AtRiskRow& r) { return Eigen::Vector3d(1.0, r.s(0), r.s(1)).eval(); };
}

struct PropensityFit {
  PropensityModelParametric model;
  double objective = 0.0;
  double moment_inf_norm = 0.0;
  std::vector<double> start_objectives;  // objective at each tried start
  std::vector<std::string> warnings;
};

/// Maximum-likelihood logistic regression of the dropout indicator.
inline PropensityFit fit_mar_logistic(const AtRiskSet& data,
                                      HazardFeatures features = HazardFeatures::PrevReward) {
  const std::size_t N = data.size();
  const std::size_t drops = data.n_dropouts();
  if (drops == 0 || drops == N)
    throw FitError("logistic dropout fit needs both outcomes among at-risk rows (separation)");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(N), 3);
  Eigen::VectorXd y(static_cast<Eigen::Index>(N));  // 1 = dropped
  for (std::size_t i = 0; i < N; ++i) {
    X.row(static_cast<Eigen::Index>(i)) = hazard_features(features, data.rows[i]).transpose();
    y(static_cast<Eigen::Index>(i)) = data.rows[i].eta ? 0.0 : 1.0;
  }
  PropensityFit fit;
  fit.model.features = features;
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(3);
  // Newton-Raphson; λ = σ(−xψ) so the score is Σ (λ − y) x.
  for (int it = 0; it < 100; ++it) {
    const Eigen::ArrayXd lam = (1.0 + (X * psi).array().exp()).inverse();
    const Eigen::VectorXd grad = X.transpose() * (lam - y.array()).matrix() / static_cast<double>(N);
    if (grad.norm() < 1e-8) {
      fit.model.psi = psi;
      fit.moment_inf_norm = grad.lpNorm<Eigen::Infinity>();
      return fit;
    }
    const Eigen::ArrayXd w = lam * (1.0 - lam);
    const Eigen::MatrixXd info = X.transpose() * (X.array().colwise() * w).matrix() / static_cast<double>(N);
    psi += info.ldlt().solve(grad);
    if (!psi.allFinite() || psi.norm() > 1e3)
      throw FitError("logistic dropout fit diverged (quasi-complete separation)");
  }
  throw FitError("logistic dropout fit did not converge");
}

// ---------------------------------------------------------------------------
// Parametric GMM on the shadow-variable moment conditions
// ---------------------------------------------------------------------------

namespace detail {

/// W = (S + ridge·I)⁻¹ with S the uncentered covariance of per-row moments.
inline Eigen::MatrixXd gmm_weight(const Eigen::MatrixXd& moments, std::vector<std::string>& warnings) {
  const Eigen::Index k = moments.cols();
  const Eigen::MatrixXd S = moments.transpose() * moments / static_cast<double>(moments.rows());
  Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
  if (lu.rank() < k) warnings.push_back("moment covariance singular; ridge-stabilized inverse used");
  return (S + 1e-8 * Eigen::MatrixXd::Identity(k, k)).ldlt().solve(Eigen::MatrixXd::Identity(k, k));
}

}  // namespace detail

/// Data of the parametric moment m(ψ) = {η/(1 − λ(ψ)) − 1} h.
class ParametricMoments {
 public:
  ParametricMoments(const AtRiskSet& data, HazardFeatures features, const MomentFunction& h) {
    const auto N = static_cast<Eigen::Index>(data.size());
    X_ = Eigen::MatrixXd::Zero(N, 3);
    eta_.resize(N);
    for (Eigen::Index i = 0; i < N; ++i) {
      const auto& r = data.rows[static_cast<std::size_t>(i)];
      eta_(i) = r.eta ? 1.0 : 0.0;
      if (r.eta || features == HazardFeatures::PrevReward) X_.row(i) = hazard_features(features, r).transpose();
      const Eigen::VectorXd hi = h(r);
      if (i == 0) H_.resize(N, hi.size());
      H_.row(i) = hi.transpose();
    }
  }

  Eigen::Index n() const { return X_.rows(); }
  Eigen::Index k() const { return H_.cols(); }

  /// η e^{−xψ} − (1 − η) = η/(1 − λ) − 1.
  Eigen::VectorXd residual_factor(const Eigen::VectorXd& psi) const {
    return (eta_.array() * (-(X_ * psi).array()).exp() - (1.0 - eta_.array())).matrix();
  }
  Eigen::MatrixXd per_row(const Eigen::VectorXd& psi) const {
    return H_.array().colwise() * residual_factor(psi).array();
  }
  Eigen::VectorXd mean(const Eigen::VectorXd& psi) const {
    return H_.transpose() * residual_factor(psi) / static_cast<double>(n());
  }
  /// ∂m̄/∂ψ = −(1/N) Σ η e^{−xψ} h xᵀ.
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& psi) const {
    const Eigen::ArrayXd c = eta_.array() * (-(X_ * psi).array()).exp();
    return -(H_.array().colwise() * c).matrix().transpose() * X_ / static_cast<double>(n());
  }

 private:
  Eigen::MatrixXd X_;
  Eigen::MatrixXd H_;
  Eigen::VectorXd eta_;
};

/// Two-step GMM: W₁ = I, then W₂ = inverse moment covariance at the step-1
/// solution; L-BFGS from several starts in each step, best objective kept.
inline PropensityFit fit_parametric_gmm(const AtRiskSet& data, HazardFeatures features,
                                        const MomentFunction& h,
                                        std::vector<Eigen::VectorXd> starts = {}) {
  if (data.size() == 0) throw EstimationError("no at-risk transitions", std::numeric_limits<double>::quiet_NaN());
  if (data.n_dropouts() == 0)
    throw EstimationError("no dropouts observed: the moment objective has no interior optimum",
                          std::numeric_limits<double>::quiet_NaN());
  const ParametricMoments mom(data, features, h);
  constexpr int q = 3;
  if (mom.k() < q) throw ConfigError("need at least as many moment conditions as parameters");
  if (starts.empty()) starts = default_starts(q);

  PropensityFit fit;
  fit.model.features = features;
  Eigen::MatrixXd W = Eigen::MatrixXd::Identity(mom.k(), mom.k());
  auto objective = [&](const Eigen::VectorXd& psi, Eigen::VectorXd* grad) {
    const Eigen::VectorXd m = mom.mean(psi);
    if (grad != nullptr) *grad = 2.0 * mom.jacobian(psi).transpose() * (W * m);
    return m.dot(W * m);
  };

  const MultiStartResult step1 = minimize_multistart(objective, starts);
  if (!std::isfinite(step1.best.f))
    throw EstimationError("GMM step 1 failed from every start", std::numeric_limits<double>::quiet_NaN());
  W = detail::gmm_weight(mom.per_row(step1.best.x), fit.warnings);
  std::vector<Eigen::VectorXd> starts2 = starts;
  starts2.insert(starts2.begin(), step1.best.x);
  const MultiStartResult step2 = minimize_multistart(objective, starts2);
  Eigen::VectorXd psi = step2.best.x;
  for (const auto& r : step2.runs) fit.start_objectives.push_back(r.f_start);

  if (mom.k() == q) {
    // Just identified: Newton polish of the root m̄(ψ) = 0.
    Eigen::VectorXd m = mom.mean(psi);
    for (int it = 0; it < 30 && m.lpNorm<Eigen::Infinity>() > 1e-13; ++it) {
      const Eigen::VectorXd cand = psi - mom.jacobian(psi).fullPivLu().solve(m);
      const Eigen::VectorXd mc = mom.mean(cand);
      if (!cand.allFinite() || !(mc.norm() < m.norm())) break;
      psi = cand;
      m = mc;
    }
  }
  const Eigen::VectorXd m = mom.mean(psi);
  fit.model.psi = psi;
  fit.objective = m.dot(W * m);
  fit.moment_inf_norm = m.lpNorm<Eigen::Infinity>();
  const bool converged = mom.k() == q ? fit.moment_inf_norm < 1e-6 : (step2.best.usable && psi.allFinite());
  if (!converged) throw EstimationError("GMM did not converge from any start", fit.moment_inf_norm);
  return fit;
}

// ---------------------------------------------------------------------------
// Shadow-variable discretization
// ---------------------------------------------------------------------------

/// Bins (−∞, e₁), [e₁, e₂), …, [e_{k−1}, ∞) at empirical quantiles.
struct ShadowBins {
  std::vector<double> edges;

  int n_bins() const { return static_cast<int>(edges.size()) + 1; }
  int bin(double z) const {
    return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), z) - edges.begin());
  }
};

struct Binned {
  ShadowBins bins;
  std::vector<int> index;
  std::vector<int> counts;
};

inline Binned discretize_shadow(const std::vector<double>& values, int n_bins) {
  if (n_bins < 1) throw BinningError("need at least one bin");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const auto distinct = std::unique(sorted.begin(), sorted.end()) - sorted.begin();
  if (distinct < n_bins) throw BinningError("fewer distinct shadow values than bins");
  sorted = values;
  std::sort(sorted.begin(), sorted.end());
  Binned out;
  for (int l = 1; l < n_bins; ++l)
    out.bins.edges.push_back(sorted_quantile(sorted, static_cast<double>(l) / n_bins));
  out.counts.assign(static_cast<std::size_t>(n_bins), 0);
  out.index.reserve(values.size());
  for (double z : values) {
    out.index.push_back(out.bins.bin(z));
    ++out.counts[static_cast<std::size_t>(out.index.back())];
  }
  for (int c : out.counts)
    if (c == 0) throw BinningError("tied shadow values leave a quantile bin empty");
  return out;
}

// ---------------------------------------------------------------------------
// Exponential tilting with a kernel-profiled baseline
// ---------------------------------------------------------------------------

/// Kernel inputs extracted from the at-risk rows: 𝒰 = S¹_t, V = R_{t+1}, Z = S²_t.
struct TiltingData {
  Eigen::VectorXd u;
  Eigen::VectorXd v;    // zero where eta = 0
  Eigen::VectorXd eta;
  Eigen::VectorXd z;

  static TiltingData from(const AtRiskSet& data) {
    const auto N = static_cast<Eigen::Index>(data.size());
    TiltingData d;
    d.u.resize(N);
    d.v = Eigen::VectorXd::Zero(N);
    d.eta.resize(N);
    d.z.resize(N);
    for (Eigen::Index i = 0; i < N; ++i) {
      const auto& r = data.rows[static_cast<std::size_t>(i)];
      d.u(i) = r.s(0);
      d.z(i) = r.s(1);
      d.eta(i) = r.eta ? 1.0 : 0.0;
      if (r.eta) d.v(i) = r.reward;
    }
    return d;
  }
};

/// ĝ(u) with exp ĝ = Σ η e^{−ψV} K_h(u − 𝒰) / Σ (1 − η) K_h(u − 𝒰), Gaussian K.
/// Returns +∞ when no dropout carries kernel weight at u.
inline double profile_g_kernel(const TiltingData& d, double psi, double h, double u) {
  double num = 0.0;
  double den = 0.0;
  const double inv = 1.0 / (2.0 * h * h);
  for (Eigen::Index i = 0; i < d.u.size(); ++i) {
    const double diff = u - d.u(i);
    const double k = std::exp(-diff * diff * inv);
    if (d.eta(i) > 0.5)
      num += k * std::exp(-psi * d.v(i));
    else
      den += k;
  }
  if (den <= 0.0) return std::numeric_limits<double>::infinity();
  if (num <= 0.0) return -std::numeric_limits<double>::infinity();
  return std::log(num) - std::log(den);
}

struct TiltingOptions {
  int n_bins = 4;
  double bandwidth_constant = 7.5;
  int grid_size = 128;
  std::vector<double> starts = {0.0, 0.5, -0.5, 1.0, -1.0};
  double fd_step = 1e-5;
  double floor = kWeightFloor;
};

/// λ = {1 + exp[ĝ(𝒰) + ψ V]}⁻¹, ĝ stored on a grid per shadow bin (each bin
/// has its own bandwidth) and read back by linear interpolation.
struct TiltingModel {
  double psi = 0.0;
  ShadowBins bins;
  std::vector<double> bandwidths;
  std::vector<double> grid_u;
  std::vector<std::vector<double>> grid_g;  // [bin][grid point]
  int empty_denominator_points = 0;

  double g(double u, int bin) const {
    const auto& gg = grid_g[static_cast<std::size_t>(bin)];
    if (u <= grid_u.front()) return gg.front();
    if (u >= grid_u.back()) return gg.back();
    const double step = (grid_u.back() - grid_u.front()) / static_cast<double>(grid_u.size() - 1);
    const auto k = std::min(static_cast<std::size_t>((u - grid_u.front()) / step), grid_u.size() - 2);
    const double w = (u - grid_u[k]) / (grid_u[k + 1] - grid_u[k]);
    return (1.0 - w) * gg[k] + w * gg[k + 1];
  }

  double hazard(double u, double z, double v) const { return logistic_hazard(g(u, bins.bin(z)) + psi * v); }
  double hazard(const AtRiskRow& row) const {
    if (!row.eta) throw StateError("tilting hazard needs the unobserved reward");
    return hazard(row.s(0), row.s(1), row.reward);
  }
};

/// Precomputed kernel sums on the profiling grid; evaluates the moments
/// 1(Z = l){η/(1 − λ) − 1}, l = 0..L̃−2, for any ψ.
class TiltingProfiler {
 public:
  TiltingProfiler(const TiltingData& d, const Binned& binned, std::vector<double> bandwidths, int grid_size)
      : d_(d), binned_(binned), bandwidths_(std::move(bandwidths)) {
    const double lo = d.u.minCoeff();
    const double hi = d.u.maxCoeff();
    grid_.resize(static_cast<std::size_t>(grid_size));
    for (int k = 0; k < grid_size; ++k) grid_[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / (grid_size - 1);
    const auto N = d.u.size();
    const Eigen::VectorXd not_eta = (1.0 - d.eta.array()).matrix();
    for (double h : bandwidths_) {
      Eigen::MatrixXd K(grid_size, N);
      const double inv = 1.0 / (2.0 * h * h);
      for (Eigen::Index i = 0; i < N; ++i)
        for (int k = 0; k < grid_size; ++k) {
          const double diff = grid_[static_cast<std::size_t>(k)] - d.u(i);
          K(k, i) = std::exp(-diff * diff * inv);
        }
      den_.push_back(K * not_eta);
      kernels_.push_back(std::move(K));
    }
  }

  TiltingModel model(double psi) const {
    TiltingModel m;
    m.psi = psi;
    m.bins = binned_.bins;
    m.bandwidths = bandwidths_;
    m.grid_u = grid_;
    const Eigen::VectorXd a = (d_.eta.array() * (-psi * d_.v.array()).exp()).matrix();
    for (std::size_t l = 0; l < kernels_.size(); ++l) {
      const Eigen::VectorXd num = kernels_[l] * a;
      std::vector<double> g(grid_.size());
      for (std::size_t k = 0; k < grid_.size(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        if (den_[l](kk) <= 0.0) {
          g[k] = 50.0;  // no dropout mass nearby: λ ≈ 0
          ++m.empty_denominator_points;
        } else if (num(kk) <= 0.0) {
          g[k] = -50.0;
        } else {
          g[k] = std::log(num(kk)) - std::log(den_[l](kk));
        }
      }
      m.grid_g.push_back(std::move(g));
    }
    return m;
  }

  /// Per-row moments (N × (L̃−1)).
  Eigen::MatrixXd per_row(const TiltingModel& m) const {
    const auto N = d_.u.size();
    const int k = binned_.bins.n_bins() - 1;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N, k);
    for (Eigen::Index i = 0; i < N; ++i) {
      const int l = binned_.index[static_cast<std::size_t>(i)];
      if (l >= k) continue;
      double f = -1.0;
      if (d_.eta(i) > 0.5) f = std::exp(-m.g(d_.u(i), l) - m.psi * d_.v(i));
      out(i, l) = f;
    }
    return out;
  }

  Eigen::VectorXd mean(double psi) const {
    const Eigen::MatrixXd r = per_row(model(psi));
    return r.colwise().mean().transpose();
  }

 private:
  const TiltingData& d_;
  const Binned& binned_;
  std::vector<double> bandwidths_;
  std::vector<double> grid_;
  std::vector<Eigen::MatrixXd> kernels_;
  std::vector<Eigen::VectorXd> den_;
};

/// h_l = c σ_l n_l^{−1/3} with σ_l, n_l the spread of 𝒰 and the count in bin l.
inline std::vector<double> bin_bandwidths(const TiltingData& d, const Binned& binned, double c) {
  const int L = binned.bins.n_bins();
  std::vector<double> sum(static_cast<std::size_t>(L), 0.0), sq(static_cast<std::size_t>(L), 0.0);
  for (Eigen::Index i = 0; i < d.u.size(); ++i) {
    const auto l = static_cast<std::size_t>(binned.index[static_cast<std::size_t>(i)]);
    sum[l] += d.u(i);
    sq[l] += d.u(i) * d.u(i);
  }
  std::vector<double> h;
  for (int l = 0; l < L; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const double n = binned.counts[li];
    if (n < 2) throw BinningError("shadow bin needs at least two rows for a bandwidth");
    const double mean = sum[li] / n;
    const double sd = std::sqrt(std::max((sq[li] - n * mean * mean) / (n - 1.0), 0.0));
    if (!(sd > 0.0)) throw DegenerateDataError("non-shadow covariate constant within a bin");
    h.push_back(c * sd * std::pow(n, -1.0 / 3.0));
  }
  return h;
}

struct TiltingFit {
  TiltingModel model;
  double objective = 0.0;
  Eigen::VectorXd moments;
  std::vector<double> start_objectives;
  std::vector<std::string> warnings;
};

/// Outer two-step GMM over ψ on the L̃−1 bin-indicator moments; every
/// objective evaluation re-profiles ĝ at the trial ψ.
inline TiltingFit fit_semiparametric(const AtRiskSet& data, const TiltingOptions& opts = {}) {
  if (opts.n_bins < 2) throw EstimationError("a single shadow bin leaves no identifying equations", 0.0);
  if (data.n_dropouts() == 0)
    throw EstimationError("no dropouts observed: the moment objective has no interior optimum",
                          std::numeric_limits<double>::quiet_NaN());
  const TiltingData d = TiltingData::from(data);
  std::vector<double> zs(d.z.data(), d.z.data() + d.z.size());
  const Binned binned = discretize_shadow(zs, opts.n_bins);
  const TiltingProfiler prof(d, binned, bin_bandwidths(d, binned, opts.bandwidth_constant), opts.grid_size);

  const int k = opts.n_bins - 1;
  TiltingFit fit;
  Eigen::MatrixXd W = Eigen::MatrixXd::Identity(k, k);
  auto value = [&](const Eigen::VectorXd& psi) {
    const Eigen::VectorXd m = prof.mean(psi(0));
    return m.dot(W * m);
  };
  auto objective = [&](const Eigen::VectorXd& psi, Eigen::VectorXd* grad) {
    if (grad != nullptr) *grad = central_difference_gradient(value, psi, opts.fd_step);
    return value(psi);
  };
  std::vector<Eigen::VectorXd> starts;
  for (double s : opts.starts) starts.push_back(Eigen::VectorXd::Constant(1, s));

  const MultiStartResult step1 = minimize_multistart(objective, starts);
  if (!std::isfinite(step1.best.f))
    throw EstimationError("tilting GMM step 1 failed from every start", std::numeric_limits<double>::quiet_NaN());
  W = detail::gmm_weight(prof.per_row(prof.model(step1.best.x(0))), fit.warnings);
  std::vector<Eigen::VectorXd> starts2 = starts;
  starts2.insert(starts2.begin(), step1.best.x);
  const MultiStartResult step2 = minimize_multistart(objective, starts2);
  if (!step2.best.usable || !step2.best.x.allFinite())
    throw EstimationError("tilting GMM did not converge from any start", step2.best.f);
  for (const auto& r : step2.runs) fit.start_objectives.push_back(r.f_start);

  fit.model = prof.model(step2.best.x(0));
  fit.moments = prof.mean(fit.model.psi);
  fit.objective = fit.moments.dot(W * fit.moments);
  if (fit.model.empty_denominator_points > 0)
    fit.warnings.push_back("kernel denominator empty at " + std::to_string(fit.model.empty_denominator_points) +
                           " grid point(s); hazard floored");
  return fit;
}

// ---------------------------------------------------------------------------
// Inverse-probability weights
// ---------------------------------------------------------------------------

/// ω = η / max(1 − λ̂, floor) on at-risk rows; rows before the at-risk window
/// are observed with certainty and keep weight 1.
template <class Model>
Eigen::VectorXd observation_weights(const AtRiskSet& data, const Model& model, double floor = kWeightFloor) {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(data.n_design_rows));
  for (const auto& r : data.rows) {
    const auto i = static_cast<Eigen::Index>(r.design_row);
    w(i) = r.eta ? 1.0 / std::max(1.0 - model.hazard(r), floor) : 0.0;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const PropensityModelParametric& m) {
  return {{"family", m.family()}, {"psi", std::vector<double>(m.psi.data(), m.psi.data() + m.psi.size())}};
}

inline PropensityModelParametric parametric_from_json(const nlohmann::json& j) {
  PropensityModelParametric m;
  const auto fam = j.at("family").get<std::string>();
  if (fam == "logistic_mnar") m.features = HazardFeatures::NextReward;
  else if (fam == "logistic_mar") m.features = HazardFeatures::PrevReward;
  else throw ConfigError("unknown parametric family '" + fam + "'");
  const auto psi = j.at("psi").get<std::vector<double>>();
  m.psi = Eigen::Map<const Eigen::VectorXd>(psi.data(), static_cast<Eigen::Index>(psi.size()));
  return m;
}

inline nlohmann::json to_json(const TiltingModel& m) {
  return {{"family", "tilting"},     {"psi", std::vector<double>{m.psi}}, {"bin_edges", m.bins.edges},
          {"bandwidths", m.bandwidths}, {"grid_u", m.grid_u},           {"grid_g", m.grid_g},
          {"interpolation", "linear"}};
}

inline TiltingModel tilting_from_json(const nlohmann::json& j) {
  if (j.at("family").get<std::string>() != "tilting") throw ConfigError("not a tilting model");
  TiltingModel m;
  m.psi = j.at("psi").get<std::vector<double>>().at(0);
  m.bins.edges = j.at("bin_edges").get<std::vector<double>>();
  m.bandwidths = j.at("bandwidths").get<std::vector<double>>();
  m.grid_u = j.at("grid_u").get<std::vector<double>>();
  m.grid_g = j.at("grid_g").get<std::vector<std::vector<double>>>();
  return m;
}

}  // namespace opemiss
