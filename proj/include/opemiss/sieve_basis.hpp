#pragma once

#include "opemiss/common.hpp"
#include "opemiss/env_sim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace opemiss {

// ---------------------------------------------------------------------------
// State scaling
// ---------------------------------------------------------------------------

/// Affine per-dimension map onto [0, 1], clamped outside the fitted range.
struct StateScaler {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  int dim() const { return static_cast<int>(lo.size()); }

  double scale(int d, double x) const {
    const double v = (x - lo(d)) / (hi(d) - lo(d));
    return std::clamp(v, 0.0, 1.0);
  }

  Eigen::VectorXd scale(const Eigen::VectorXd& s) const {
    if (s.size() != lo.size()) throw ShapeError("state dimension does not match scaler");
    Eigen::VectorXd out(s.size());
    for (int d = 0; d < dim(); ++d) out(d) = scale(d, s(d));
    return out;
  }

  Eigen::MatrixXd scale_rows(const Eigen::MatrixXd& states) const {
    Eigen::MatrixXd out(states.rows(), states.cols());
    for (Eigen::Index i = 0; i < states.rows(); ++i) out.row(i) = scale(Eigen::VectorXd(states.row(i).transpose())).transpose();
    return out;
  }
};

/// `states` holds one state per row.
inline StateScaler fit_scaler(const Eigen::MatrixXd& states) {
  if (states.rows() < 2) throw DegenerateDataError("need at least two states to fit a scaler");
  StateScaler sc;
  sc.lo = states.colwise().minCoeff().transpose();
  sc.hi = states.colwise().maxCoeff().transpose();
  for (int d = 0; d < sc.dim(); ++d)
    if (!(sc.hi(d) > sc.lo(d)))
      throw DegenerateDataError("state dimension " + std::to_string(d) + " is constant");
  return sc;
}

// ---------------------------------------------------------------------------
// One-dimensional B-spline basis
// ---------------------------------------------------------------------------

class BSpline1D {
 public:
  BSpline1D() = default;
  BSpline1D(int degree, std::vector<double> knots) : degree_(degree), knots_(std::move(knots)) {
    if (degree_ < 0) throw BasisError("negative spline degree");
    if (static_cast<int>(knots_.size()) < 2 * degree_ + 2)
      throw BasisError("knot vector too short for the spline degree");
    if (!std::is_sorted(knots_.begin(), knots_.end())) throw BasisError("knots must be non-decreasing");
    if (!(knots_[static_cast<std::size_t>(degree_)] < knots_[knots_.size() - 1 - static_cast<std::size_t>(degree_)]))
      throw BasisError("spline domain is empty");
  }

  /// Clamped knot vector: boundaries repeated degree+1 times around `interior`.
  static BSpline1D clamped(int degree, const std::vector<double>& interior, double lo = 0.0,
                           double hi = 1.0) {
    std::vector<double> k(static_cast<std::size_t>(degree + 1), lo);
    k.insert(k.end(), interior.begin(), interior.end());
    k.insert(k.end(), static_cast<std::size_t>(degree + 1), hi);
    return BSpline1D(degree, std::move(k));
  }

  int degree() const { return degree_; }
  int size() const { return static_cast<int>(knots_.size()) - degree_ - 1; }
  const std::vector<double>& knots() const { return knots_; }
  double lower() const { return knots_[static_cast<std::size_t>(degree_)]; }
  double upper() const { return knots_[knots_.size() - 1 - static_cast<std::size_t>(degree_)]; }

  /// Index k with knots[k] <= x < knots[k+1]; the right end of the domain
  /// belongs to the last non-empty span.
  int find_span(double x) const {
    const int n = size();
    if (x >= upper()) {
      int k = n - 1;
      while (k > degree_ && !(knots_[static_cast<std::size_t>(k)] < knots_[static_cast<std::size_t>(k) + 1])) --k;
      return k;
    }
    auto it = std::upper_bound(knots_.begin() + degree_, knots_.begin() + n + 1, x);
    return static_cast<int>(it - knots_.begin()) - 1;
  }

  /// Writes the degree+1 possibly nonzero values B_{k-p..k}(x) into `values`
  /// and returns k - p, the index of the first one.
  int evaluate_nonzero(double x, double* values) const {
    x = std::clamp(x, lower(), upper());
    const int k = find_span(x);
    const int p = degree_;
    // Triangular Cox-de Boor scheme; denominators are positive on a non-empty span.
    double left[32];
    double right[32];
    values[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
      left[j] = x - knots_[static_cast<std::size_t>(k + 1 - j)];
      right[j] = knots_[static_cast<std::size_t>(k + j)] - x;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double tmp = values[r] / (right[r + 1] + left[j - r]);
        values[r] = saved + right[r + 1] * tmp;
        saved = left[j - r] * tmp;
      }
      values[j] = saved;
    }
    return k - p;
  }

  Eigen::VectorXd evaluate(double x) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(size());
    double v[32];
    const int first = evaluate_nonzero(x, v);
    for (int j = 0; j <= degree_; ++j) out(first + j) = v[j];
    return out;
  }

 private:
  int degree_ = 3;
  std::vector<double> knots_;
};

// ---------------------------------------------------------------------------
// Multivariate sieve on [0,1]^d
// ---------------------------------------------------------------------------

struct SplineSpec {
  int degree = 3;
  int bases_per_dim = 6;
  bool tensor_product = true;
};

/// Type-7 (linear interpolation) sample quantile of sorted data.
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

class SplineBasis {
 public:
  SplineBasis() = default;
  SplineBasis(std::vector<BSpline1D> dims, bool tensor_product)
      : dims_(std::move(dims)), tensor_(tensor_product) {
    if (dims_.empty()) throw BasisError("basis needs at least one dimension");
  }

  int dim() const { return static_cast<int>(dims_.size()); }
  bool tensor_product() const { return tensor_; }
  const std::vector<BSpline1D>& dims() const { return dims_; }
  std::vector<std::string>& warnings() { return warnings_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  int size() const {
    int n = tensor_ ? 1 : 0;
    for (const auto& b : dims_) n = tensor_ ? n * b.size() : n + b.size();
    return n;
  }

  /// Φ_L at a point of [0,1]^d, written into out[0..size()).
  void evaluate_into(const double* scaled, double* out) const {
    const int L = size();
    std::fill(out, out + L, 0.0);
    const int d = dim();
    double vals[8][32];
    int first[8];
    for (int k = 0; k < d; ++k) first[k] = dims_[static_cast<std::size_t>(k)].evaluate_nonzero(scaled[k], vals[k]);
    if (!tensor_) {
      int offset = 0;
      for (int k = 0; k < d; ++k) {
        const auto& b = dims_[static_cast<std::size_t>(k)];
        for (int j = 0; j <= b.degree(); ++j) out[offset + first[k] + j] = vals[k][j];
        offset += b.size();
      }
      return;
    }
    // Odometer over the (p+1)^d local tensor cells; last dimension fastest.
    int idx[8] = {0};
    while (true) {
      double v = 1.0;
      int flat = 0;
      for (int k = 0; k < d; ++k) {
        v *= vals[k][idx[k]];
        flat = flat * dims_[static_cast<std::size_t>(k)].size() + first[k] + idx[k];
      }
      out[flat] = v;
      int k = d - 1;
      while (k >= 0) {
        if (++idx[k] <= dims_[static_cast<std::size_t>(k)].degree()) break;
        idx[k] = 0;
        --k;
      }
      if (k < 0) break;
    }
  }

  Eigen::VectorXd evaluate(const Eigen::VectorXd& scaled) const {
    if (scaled.size() != dim()) throw ShapeError("point dimension does not match basis");
    Eigen::VectorXd out(size());
    evaluate_into(scaled.data(), out.data());
    return out;
  }

 private:
  std::vector<BSpline1D> dims_;
  bool tensor_ = true;
  std::vector<std::string> warnings_;
};

/// Clamped cubic (by default) splines with interior knots at equally spaced
/// quantiles of each scaled coordinate. `scaled_states` holds one point per row.
inline SplineBasis build_basis(const Eigen::MatrixXd& scaled_states, const SplineSpec& spec) {
  if (spec.degree < 0 || spec.degree > 30) throw BasisError("unsupported spline degree");
  if (scaled_states.cols() < 1 || scaled_states.cols() > 8) throw BasisError("basis supports 1..8 dimensions");
  if (spec.tensor_product && scaled_states.cols() > 4)
    throw BasisError("tensor product limited to 4 dimensions; use the additive basis");
  const int n_interior = spec.bases_per_dim - spec.degree - 1;
  if (n_interior < 0) throw BasisError("bases_per_dim must be at least degree + 1");
  if (scaled_states.rows() < 2) throw BasisError("not enough states to place knots");

  std::vector<BSpline1D> dims;
  std::vector<std::string> warnings;
  for (Eigen::Index d = 0; d < scaled_states.cols(); ++d) {
    std::vector<double> col(scaled_states.col(d).data(), scaled_states.col(d).data() + scaled_states.rows());
    std::sort(col.begin(), col.end());
    std::vector<double> interior;
    for (int j = 1; j <= n_interior; ++j) {
      const double q = sorted_quantile(col, static_cast<double>(j) / (n_interior + 1));
      constexpr double tol = 1e-12;
      if (q <= tol || q >= 1.0 - tol) continue;
      if (!interior.empty() && q - interior.back() <= tol) continue;
      interior.push_back(q);
    }
    if (static_cast<int>(interior.size()) < n_interior) {
      warnings.push_back("dimension " + std::to_string(d) + ": " +
                         std::to_string(n_interior - static_cast<int>(interior.size())) +
                         " tied interior knot(s) removed");
      if (interior.empty()) throw BasisError("too few distinct quantiles to place interior knots");
    }
    dims.push_back(BSpline1D::clamped(spec.degree, interior));
  }
  SplineBasis basis(std::move(dims), spec.tensor_product);
  basis.warnings() = std::move(warnings);
  return basis;
}

/// Scaler plus spline evaluator: raw state in, Φ_L(s) out.
struct SieveBasis {
  StateScaler scaler;
  SplineBasis spline;

  int size() const { return spline.size(); }
  int dim() const { return scaler.dim(); }

  void evaluate_into(const double* raw, double* out) const {
    double scaled[8];
    for (int d = 0; d < dim(); ++d) scaled[d] = scaler.scale(d, raw[d]);
    spline.evaluate_into(scaled, out);
  }

  Eigen::VectorXd evaluate(const Eigen::VectorXd& raw) const {
    if (raw.size() != dim()) throw ShapeError("state dimension does not match basis");
    Eigen::VectorXd out(size());
    evaluate_into(raw.data(), out.data());
    return out;
  }

  static SieveBasis fit(const Eigen::MatrixXd& states, const SplineSpec& spec) {
    SieveBasis b;
    b.scaler = fit_scaler(states);
    b.spline = build_basis(b.scaler.scale_rows(states), spec);
    return b;
  }
};

inline nlohmann::json to_json(const SieveBasis& b) {
  nlohmann::json j;
  j["degree"] = b.spline.dims().front().degree();
  j["boundary_multiplicity"] = b.spline.dims().front().degree() + 1;
  j["tensor_product"] = b.spline.tensor_product();
  j["scaler_lo"] = std::vector<double>(b.scaler.lo.data(), b.scaler.lo.data() + b.scaler.lo.size());
  j["scaler_hi"] = std::vector<double>(b.scaler.hi.data(), b.scaler.hi.data() + b.scaler.hi.size());
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& d : b.spline.dims()) dims.push_back({{"degree", d.degree()}, {"knots", d.knots()}});
  j["dims"] = dims;
  return j;
}

inline SieveBasis sieve_basis_from_json(const nlohmann::json& j) {
  SieveBasis b;
  const auto lo = j.at("scaler_lo").get<std::vector<double>>();
  const auto hi = j.at("scaler_hi").get<std::vector<double>>();
  b.scaler.lo = Eigen::Map<const Eigen::VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size()));
  b.scaler.hi = Eigen::Map<const Eigen::VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size()));
  std::vector<BSpline1D> dims;
  for (const auto& d : j.at("dims"))
    dims.emplace_back(d.at("degree").get<int>(), d.at("knots").get<std::vector<double>>());
  b.spline = SplineBasis(std::move(dims), j.at("tensor_product").get<bool>());
  return b;
}

// ---------------------------------------------------------------------------
// Design assembly
// ---------------------------------------------------------------------------

struct RowIndex {
  std::size_t traj = 0;
  int t = 0;
};

/// Per-transition features of the linear estimating equation. One row per
/// transition with observed (S_t, A_t), trajectory-major, time-minor.
struct SieveDesign {
  Eigen::MatrixXd xi;       // ξ(S_t, A_t)
  Eigen::MatrixXd u_next;   // U_π(S_{t+1}); zero where eta = 0
  Eigen::VectorXd rewards;  // R_{t+1}; zero where eta = 0
  Eigen::VectorXd eta;      // η_{t+1} ∈ {0, 1}
  std::vector<RowIndex> rows;
  int n_actions = 2;
  int basis_size = 0;
  double gamma = 0.9;
  /// Normalizer nT of every empirical average.
  double nT = 1.0;

  Eigen::Index size() const { return xi.rows(); }
  int dim() const { return n_actions * basis_size; }
};

/// ξ(s, a): Φ_L(s) in block a, zeros elsewhere.
inline Eigen::VectorXd xi_features(const SieveBasis& basis, const Eigen::VectorXd& s, int a, int n_actions) {
  const int L = basis.size();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n_actions * L);
  if (a < 0 || a >= n_actions) throw ShapeError("action out of range");
  basis.evaluate_into(s.data(), out.data() + a * L);
  return out;
}

/// U_π(s): Φ_L(s) π(a|s) stacked over actions.
template <Policy Pi>
Eigen::VectorXd u_features(const SieveBasis& basis, const Eigen::VectorXd& s, const Pi& policy,
                           int n_actions) {
  const int L = basis.size();
  const Eigen::VectorXd phi = basis.evaluate(s);
  const Eigen::VectorXd probs = policy(s);
  if (probs.size() != n_actions) throw ShapeError("policy returned wrong number of actions");
  Eigen::VectorXd out(n_actions * L);
  for (int a = 0; a < n_actions; ++a) out.segment(a * L, L) = probs(a) * phi;
  return out;
}

/// All observed states (S_t of every row and S_{t+1} of observed rows).
inline Eigen::MatrixXd observed_states(const Dataset& data) {
  std::vector<State> pts;
  for (const auto& traj : data)
    for (const auto& tr : traj.transitions) {
      pts.push_back(tr.state());
      if (tr.observed()) pts.push_back(tr.next_state());
    }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(pts.size()), 2);
  for (std::size_t i = 0; i < pts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return out;
}

template <Policy Pi>
SieveDesign assemble_design(const Dataset& data, const SieveBasis& basis, const Pi& policy,
                            double gamma, int n_actions = 2) {
  if (data.empty()) throw ShapeError("empty dataset");
  if (basis.dim() != 2) throw ShapeError("basis dimension does not match the 2D state");
  std::size_t n_rows = 0;
  int horizon = 0;
  for (const auto& traj : data) {
    n_rows += traj.transitions.size();
    horizon = std::max(horizon, traj.horizon);
  }
  const int L = basis.size();
  SieveDesign d;
  d.n_actions = n_actions;
  d.basis_size = L;
  d.gamma = gamma;
  d.nT = static_cast<double>(data.size()) * horizon;
  const auto N = static_cast<Eigen::Index>(n_rows);
  d.xi = Eigen::MatrixXd::Zero(N, n_actions * L);
  d.u_next = Eigen::MatrixXd::Zero(N, n_actions * L);
  d.rewards = Eigen::VectorXd::Zero(N);
  d.eta = Eigen::VectorXd::Zero(N);
  d.rows.reserve(n_rows);
  Eigen::VectorXd phi(L);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& trs = data[i].transitions;
    for (std::size_t t = 0; t < trs.size(); ++t, ++row) {
      const Transition& tr = trs[t];
      if (tr.action() < 0 || tr.action() >= n_actions) throw ShapeError("action out of range");
      basis.evaluate_into(tr.state().data(), phi.data());
      d.xi.row(row).segment(tr.action() * L, L) = phi.transpose();
      d.rows.push_back({i, static_cast<int>(t)});
      if (!tr.observed()) continue;
      d.eta(row) = 1.0;
      d.rewards(row) = tr.reward();
      const Eigen::VectorXd s_next = tr.next_state();
      basis.evaluate_into(s_next.data(), phi.data());
      const Eigen::VectorXd probs = policy(s_next);
      for (int a = 0; a < n_actions; ++a)
        if (probs(a) != 0.0) d.u_next.row(row).segment(a * L, L) = probs(a) * phi.transpose();
    }
  }
  return d;
}

}  // namespace opemiss
