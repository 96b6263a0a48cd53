#pragma once

#include "opemiss/common.hpp"

#include <ceres/ceres.h>

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace opemiss {

/// f(x); writes ∇f(x) into `grad` when it is non-null. Returning a
/// non-finite value marks the point as infeasible for the line search.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct LbfgsOptions {
  int max_iterations = 500;
  double function_tolerance = 1e-15;
  double gradient_tolerance = 1e-13;
  double parameter_tolerance = 1e-14;
};

struct MinimizeResult {
  Eigen::VectorXd start;
  Eigen::VectorXd x;
  double f_start = std::numeric_limits<double>::quiet_NaN();
  double f = std::numeric_limits<double>::quiet_NaN();
  bool usable = false;
  int iterations = 0;
  std::string report;
};

namespace detail {

class CeresObjective final : public ceres::FirstOrderFunction {
 public:
  CeresObjective(const Objective& f, int n) : f_(f), n_(n) {}

  bool Evaluate(const double* params, double* cost, double* gradient) const override {
    const Eigen::Map<const Eigen::VectorXd> x(params, n_);
    Eigen::VectorXd g(n_);
    const double v = f_(x, gradient != nullptr ? &g : nullptr);
    if (!std::isfinite(v)) return false;
    *cost = v;
    if (gradient != nullptr) {
      if (!g.allFinite()) return false;
      Eigen::Map<Eigen::VectorXd>(gradient, n_) = g;
    }
    return true;
  }
  int NumParameters() const override { return n_; }

 private:
  const Objective& f_;
  int n_;
};

}  // namespace detail

/// Limited-memory BFGS from a single start.
inline MinimizeResult minimize_lbfgs(const Objective& f, const Eigen::VectorXd& start,
                                     const LbfgsOptions& opts = {}) {
  MinimizeResult res;
  res.start = start;
  res.f_start = f(start, nullptr);
  res.x = start;
  if (!std::isfinite(res.f_start)) {
    res.report = "objective not finite at start";
    return res;
  }
  ceres::GradientProblem problem(new detail::CeresObjective(f, static_cast<int>(start.size())));
  ceres::GradientProblemSolver::Options o;
  o.line_search_direction_type = ceres::LBFGS;
  o.max_num_iterations = opts.max_iterations;
  o.function_tolerance = opts.function_tolerance;
  o.gradient_tolerance = opts.gradient_tolerance;
  o.parameter_tolerance = opts.parameter_tolerance;
  o.logging_type = ceres::SILENT;
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(o, problem, res.x.data(), &summary);
  res.f = f(res.x, nullptr);
  res.usable = summary.IsSolutionUsable() && std::isfinite(res.f);
  res.iterations = static_cast<int>(summary.iterations.size());
  res.report = summary.BriefReport();
  // A failed line search can leave x at the start; never report worse than it.
  if (!(res.f <= res.f_start)) {
    res.x = start;
    res.f = res.f_start;
  }
  return res;
}

struct MultiStartResult {
  MinimizeResult best;
  std::vector<MinimizeResult> runs;
};

inline MultiStartResult minimize_multistart(const Objective& f, const std::vector<Eigen::VectorXd>& starts,
                                            const LbfgsOptions& opts = {}) {
  MultiStartResult out;
  for (const auto& s : starts) {
    out.runs.push_back(minimize_lbfgs(f, s, opts));
    const auto& r = out.runs.back();
    if (!std::isfinite(r.f)) continue;
    if (!std::isfinite(out.best.f) || r.f < out.best.f) out.best = r;
  }
  return out;
}

/// Central differences with a fixed absolute step.
inline Eigen::VectorXd central_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                                   const Eigen::VectorXd& x, double step = 1e-5) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + step;
    const double fp = f(xp);
    xp(i) = x(i) - step;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// c·(1, …, 1) for c ∈ {0, 0.5, −0.5, 1, −1}.
inline std::vector<Eigen::VectorXd> default_starts(int q) {
  std::vector<Eigen::VectorXd> s;
  for (double c : {0.0, 0.5, -0.5, 1.0, -1.0}) s.push_back(Eigen::VectorXd::Constant(q, c));
  return s;
}

}  // namespace opemiss
