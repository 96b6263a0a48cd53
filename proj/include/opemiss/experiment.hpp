#pragma once

#include "opemiss/common.hpp"
#include "opemiss/dataset_io.hpp"
#include "opemiss/dropout_propensity.hpp"
#include "opemiss/env_sim.hpp"
#include "opemiss/inference.hpp"
#include "opemiss/sieve_basis.hpp"
#include "opemiss/value_estimators.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace opemiss {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Estimators run on every replication.
enum class Method { CC, IPW_P, IPW_SP };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::CC: return "CC";
    case Method::IPW_P: return "IPW-P";
    case Method::IPW_SP: return "IPW-SP";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "CC") return Method::CC;
  if (s == "IPW-P") return Method::IPW_P;
  if (s == "IPW-SP") return Method::IPW_SP;
  throw ConfigError("unknown estimator '" + s + "'");
}

/// Settings shared by a single estimation and by every replication.
struct EstimationOptions {
  std::vector<Method> methods = {Method::CC, Method::IPW_P, Method::IPW_SP};
  double gamma = 0.9;
  double alpha = 0.05;
  SplineSpec spline;
  double ridge = kDefaultRidge;
  double weight_floor = kWeightFloor;
  /// Parametric IPW variance: full Ω̂ (true) or the Ω̃ approximation (false).
  bool full_variance = true;
  TiltingOptions tilting;
  std::size_t n_reference = 10000;
};

struct ExperimentConfig {
  std::vector<std::pair<std::size_t, int>> grid = {{500, 10}, {1000, 10}, {500, 25}, {1000, 25}};
  std::size_t n_replications = 250;
  std::vector<DropoutKind> dropout_kinds = {DropoutKind::None, DropoutKind::MAR, DropoutKind::MNAR};
  Eigen::Vector3d psi = setting_psi(2);
  EstimationOptions estimation;
  LinearEnv2D env;
  std::size_t mc_rollouts = 100000;
  int mc_horizon = 200;
  /// Skips the Monte Carlo run when set.
  std::optional<double> truth_value;
  std::uint64_t master_seed = 20240101;
  int threads = 1;
  /// A cell aborts the run when more than this fraction of replications fail.
  double max_failure_fraction = 0.05;

  void validate() const {
    if (grid.empty()) throw ConfigError("grid must not be empty");
    for (const auto& [n, T] : grid) EnvConfig{n, T, estimation.gamma, 0, {}}.validate();
    if (n_replications < 1) throw ConfigError("n_replications must be at least 1");
    if (dropout_kinds.empty()) throw ConfigError("need at least one dropout kind");
    if (estimation.methods.empty()) throw ConfigError("need at least one estimator");
    if (!(estimation.alpha > 0.0 && estimation.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
    if (estimation.n_reference < 1) throw ConfigError("n_reference must be at least 1");
    if (threads < 1) throw ConfigError("threads must be at least 1");
    if (!(env.transition_sd >= 0.0 && env.reward_sd >= 0.0)) throw ConfigError("noise sd must be non-negative");
  }
};

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

/// Every key is optional; absent keys keep their defaults.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("grid")) {
      c.grid.clear();
      for (const auto& g : j.at("grid")) c.grid.emplace_back(g.at(0).get<std::size_t>(), g.at(1).get<int>());
    }
    detail::read_opt(j, "n_replications", c.n_replications);
    if (j.contains("dropout")) {
      c.dropout_kinds.clear();
      for (const auto& d : j.at("dropout")) c.dropout_kinds.push_back(dropout_kind_from_string(d.get<std::string>()));
    }
    if (j.contains("psi")) {
      const auto p = j.at("psi").get<std::vector<double>>();
      if (p.size() != 3) throw ConfigError("psi needs 3 entries");
      c.psi = Eigen::Vector3d(p[0], p[1], p[2]);
    }
    if (j.contains("setting")) c.psi = setting_psi(j.at("setting").get<int>());
    auto& e = c.estimation;
    if (j.contains("estimators")) {
      e.methods.clear();
      for (const auto& m : j.at("estimators")) e.methods.push_back(method_from_string(m.get<std::string>()));
    }
    detail::read_opt(j, "gamma", e.gamma);
    detail::read_opt(j, "alpha", e.alpha);
    detail::read_opt(j, "bases_per_dim", e.spline.bases_per_dim);
    detail::read_opt(j, "spline_degree", e.spline.degree);
    detail::read_opt(j, "tensor_product", e.spline.tensor_product);
    detail::read_opt(j, "ridge", e.ridge);
    detail::read_opt(j, "weight_floor", e.weight_floor);
    detail::read_opt(j, "full_variance", e.full_variance);
    detail::read_opt(j, "n_reference", e.n_reference);
    detail::read_opt(j, "shadow_bins", e.tilting.n_bins);
    detail::read_opt(j, "bandwidth_constant", e.tilting.bandwidth_constant);
    detail::read_opt(j, "profile_grid", e.tilting.grid_size);
    e.tilting.floor = e.weight_floor;
    detail::read_opt(j, "contraction", c.env.contraction);
    detail::read_opt(j, "transition_sd", c.env.transition_sd);
    detail::read_opt(j, "reward_sd", c.env.reward_sd);
    detail::read_opt(j, "mc_rollouts", c.mc_rollouts);
    detail::read_opt(j, "mc_horizon", c.mc_horizon);
    if (j.contains("truth_value") && !j.at("truth_value").is_null()) c.truth_value = j.at("truth_value").get<double>();
    detail::read_opt(j, "master_seed", c.master_seed);
    detail::read_opt(j, "threads", c.threads);
    detail::read_opt(j, "max_failure_fraction", c.max_failure_fraction);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad config: ") + ex.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config is not valid JSON: ") + ex.what());
  }
  return experiment_config_from_json(j);
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& [n, T] : c.grid) grid.push_back({n, T});
  std::vector<std::string> kinds, methods;
  for (auto k : c.dropout_kinds) kinds.push_back(to_string(k));
  for (auto m : c.estimation.methods) methods.push_back(to_string(m));
  const auto& e = c.estimation;
  nlohmann::json j = {{"grid", grid},
                      {"n_replications", c.n_replications},
                      {"dropout", kinds},
                      {"psi", {c.psi(0), c.psi(1), c.psi(2)}},
                      {"estimators", methods},
                      {"gamma", e.gamma},
                      {"alpha", e.alpha},
                      {"bases_per_dim", e.spline.bases_per_dim},
                      {"spline_degree", e.spline.degree},
                      {"tensor_product", e.spline.tensor_product},
                      {"ridge", e.ridge},
                      {"weight_floor", e.weight_floor},
                      {"full_variance", e.full_variance},
                      {"n_reference", e.n_reference},
                      {"shadow_bins", e.tilting.n_bins},
                      {"bandwidth_constant", e.tilting.bandwidth_constant},
                      {"profile_grid", e.tilting.grid_size},
                      {"contraction", c.env.contraction},
                      {"transition_sd", c.env.transition_sd},
                      {"reward_sd", c.env.reward_sd},
                      {"mc_rollouts", c.mc_rollouts},
                      {"mc_horizon", c.mc_horizon},
                      {"truth_value", c.truth_value ? nlohmann::json(*c.truth_value) : nlohmann::json()},
                      {"master_seed", c.master_seed},
                      {"threads", c.threads},
                      {"max_failure_fraction", c.max_failure_fraction}};
  return j;
}

// ---------------------------------------------------------------------------
// One dataset, all estimators
// ---------------------------------------------------------------------------

struct EstimateRecord {
  Method method = Method::CC;
  bool ok = false;
  std::string error;
  double v_hat = std::numeric_limits<double>::quiet_NaN();
  /// σ̂(𝔾); the standard error of V̂ is σ̂/√(nT).
  double sigma = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
  double ci_lo = std::numeric_limits<double>::quiet_NaN();
  double ci_hi = std::numeric_limits<double>::quiet_NaN();
  double nT = 0.0;
  std::vector<std::string> warnings;
  nlohmann::json dropout_model;
};

/// Fits the sieve basis on the observed states and runs every requested
/// method. MAR data use a logistic fit on the previous reward for IPW-P;
/// complete data use unit weights for both IPW variants.
inline std::vector<EstimateRecord> estimate_dataset(const Dataset& data, DropoutKind kind,
                                                    const EstimationOptions& opts,
                                                    const Eigen::MatrixXd& ref_states) {
  const TargetPolicy policy;
  const SieveBasis basis = SieveBasis::fit(observed_states(data), opts.spline);
  const SieveDesign design = assemble_design(data, basis, policy, opts.gamma);
  const Eigen::VectorXd u_bar = reference_average(basis, policy, ref_states);
  const AtRiskSet at_risk = at_risk_rows(data);
  const bool complete = at_risk.n_dropouts() == 0 && kind == DropoutKind::None;

  std::vector<EstimateRecord> out;
  for (Method m : opts.methods) {
    EstimateRecord rec;
    rec.method = m;
    rec.nT = design.nT;
    try {
      Eigen::VectorXd w = design.eta;
      std::optional<PsiInfluence> infl;
      if (m == Method::IPW_P && !complete) {
        if (kind == DropoutKind::MAR) {
          const PropensityFit fit = fit_mar_logistic(at_risk, HazardFeatures::PrevReward);
          w = observation_weights(at_risk, fit.model, opts.weight_floor);
          if (opts.full_variance) infl = logistic_influence(design, at_risk, fit.model);
          rec.dropout_model = to_json(fit.model);
          rec.warnings = fit.warnings;
        } else {
          const MomentFunction h = simulation_moment_function();
          const PropensityFit fit = fit_parametric_gmm(at_risk, HazardFeatures::NextReward, h);
          w = observation_weights(at_risk, fit.model, opts.weight_floor);
          if (opts.full_variance) infl = gmm_influence(design, at_risk, fit.model, h);
          rec.dropout_model = to_json(fit.model);
          rec.warnings = fit.warnings;
        }
      } else if (m == Method::IPW_SP && !complete) {
        TiltingOptions topt = opts.tilting;
        topt.floor = opts.weight_floor;
        const TiltingFit fit = fit_semiparametric(at_risk, topt);
        w = observation_weights(at_risk, fit.model, opts.weight_floor);
        rec.dropout_model = to_json(fit.model);
        rec.warnings = fit.warnings;
      }
      const BetaEstimate est =
          estimate_beta(design, m == Method::CC ? EstimatorKind::CC : EstimatorKind::IPW, w, opts.ridge);
      const Eigen::VectorXd resid = residuals(est, design);
      Eigen::MatrixXd omega;
      if (infl) {
        OmegaResult om = omega_full(design, w, resid, *infl);
        omega = std::move(om.omega);
        rec.warnings.insert(rec.warnings.end(), om.warnings.begin(), om.warnings.end());
      } else {
        omega = omega_tilde(design, w, resid);
      }
      rec.v_hat = u_bar.dot(est.beta);
      rec.sigma = std::sqrt(sigma_hat(est, omega, u_bar));
      rec.se = rec.sigma / std::sqrt(design.nT);
      std::tie(rec.ci_lo, rec.ci_hi) = confidence_interval(rec.v_hat, rec.sigma, design.nT, opts.alpha);
      rec.ok = std::isfinite(rec.v_hat) && std::isfinite(rec.sigma);
      if (!rec.ok) rec.error = "non-finite estimate";
    } catch (const std::exception& ex) {
      rec.ok = false;
      rec.error = ex.what();
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Replications
// ---------------------------------------------------------------------------

struct ReplicationRecord {
  std::size_t replication = 0;
  std::size_t n = 0;
  int T = 0;
  DropoutKind kind = DropoutKind::None;
  EstimateRecord estimate;
};

struct CellSummary {
  std::size_t n = 0;
  int T = 0;
  DropoutKind kind = DropoutKind::None;
  Method method = Method::CC;
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
  double bias = 0.0;
  double sd = 0.0;
  double mse = 0.0;
  double ecp = 0.0;
  double ecp_se = 0.0;
  double mean_se = 0.0;
};

struct ExperimentResult {
  McEstimate truth;
  std::vector<ReplicationRecord> records;
  std::vector<CellSummary> summaries;
};

struct ExperimentAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Monte Carlo truth in fixed chunks so the sum order ignores the thread count.
template <Environment Env, Policy Pi>
McEstimate monte_carlo_truth_parallel(const Env& env, const Pi& policy, double gamma, std::size_t n_rollouts,
                                      int horizon, std::uint64_t seed, int threads) {
  monte_carlo_truth(env, policy, gamma, 1, horizon, seed);  // validates the arguments
  constexpr std::size_t chunk = 1000;
  const std::size_t n_chunks = (n_rollouts + chunk - 1) / chunk;
  std::vector<RolloutBatch> batches(n_chunks);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c; (c = next.fetch_add(1)) < n_chunks;) {
      const std::size_t first = c * chunk;
      batches[c] = rollout_batch(env, policy, gamma, horizon, seed, first, std::min(chunk, n_rollouts - first));
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  RolloutBatch total;
  for (const auto& b : batches) total += b;
  return finalize(total);
}

/// Runs `task(i)` for i in [0, count) on `threads` workers.
template <class F>
void parallel_for(std::size_t count, int threads, F&& task) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) {
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(static_cast<std::size_t>(threads), std::max<std::size_t>(count, 1));
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

/// Seed of replication r; shared by every cell so cells use common random numbers.
inline std::uint64_t replication_seed(std::uint64_t master, std::size_t r) {
  return derive_seed(master, r, Stream::Replication);
}

/// One replication of one cell: simulate, drop out, estimate.
inline std::vector<EstimateRecord> run_replication(const ExperimentConfig& c, std::size_t n, int T,
                                                   DropoutKind kind, std::size_t r) {
  const std::uint64_t seed = replication_seed(c.master_seed, r);
  EnvConfig ec{n, T, c.estimation.gamma, seed, {}};
  const Dataset full = generate_complete(ec, c.env);
  DropoutSpec spec{kind, c.psi, 1};
  const Dataset data = kind == DropoutKind::None ? full : apply_dropout(full, spec, seed);
  const Eigen::MatrixXd ref = reference_states(c.estimation.n_reference, seed);
  return estimate_dataset(data, kind, c.estimation, ref);
}

inline CellSummary summarize_cell(const std::vector<const ReplicationRecord*>& recs, double truth) {
  CellSummary s;
  if (!recs.empty()) {
    s.n = recs.front()->n;
    s.T = recs.front()->T;
    s.kind = recs.front()->kind;
    s.method = recs.front()->estimate.method;
  }
  std::vector<double> err;
  double covered = 0.0, se_sum = 0.0;
  for (const auto* r : recs) {
    if (!r->estimate.ok) {
      ++s.n_failed;
      continue;
    }
    err.push_back(r->estimate.v_hat - truth);
    covered += (r->estimate.ci_lo <= truth && truth <= r->estimate.ci_hi) ? 1.0 : 0.0;
    se_sum += r->estimate.se;
  }
  s.n_ok = err.size();
  if (s.n_ok == 0) {
    s.bias = s.sd = s.mse = s.ecp = s.ecp_se = s.mean_se = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  const double k = static_cast<double>(s.n_ok);
  double sum = 0.0, sq = 0.0;
  for (double e : err) {
    sum += e;
    sq += e * e;
  }
  s.bias = sum / k;
  s.mse = sq / k;
  double ss = 0.0;
  for (double e : err) ss += (e - s.bias) * (e - s.bias);
  s.sd = s.n_ok > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
  s.ecp = covered / k;
  s.ecp_se = std::sqrt(s.ecp * (1.0 - s.ecp) / k);
  s.mean_se = se_sum / k;
  return s;
}

/// Groups records by (n, T, kind, method) in first-seen order.
inline std::vector<CellSummary> summarize(const std::vector<ReplicationRecord>& records, double truth) {
  std::vector<std::vector<const ReplicationRecord*>> groups;
  std::map<std::tuple<std::size_t, int, int, int>, std::size_t> index;
  for (const auto& r : records) {
    const auto key = std::make_tuple(r.n, r.T, static_cast<int>(r.kind), static_cast<int>(r.estimate.method));
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, groups.size()).first;
      groups.emplace_back();
    }
    groups[it->second].push_back(&r);
  }
  std::vector<CellSummary> out;
  for (const auto& g : groups) out.push_back(summarize_cell(g, truth));
  return out;
}

inline McEstimate experiment_truth(const ExperimentConfig& c) {
  if (c.truth_value) return {*c.truth_value, 0.0, 0};
  return monte_carlo_truth_parallel(c.env, TargetPolicy{}, c.estimation.gamma, c.mc_rollouts, c.mc_horizon,
                                    c.master_seed, c.threads);
}

inline ExperimentResult run_experiment(const ExperimentConfig& c, std::optional<McEstimate> truth = std::nullopt) {
  c.validate();
  ExperimentResult res;
  res.truth = truth ? *truth : experiment_truth(c);
  struct Task {
    std::size_t n;
    int T;
    DropoutKind kind;
    std::size_t r;
  };
  std::vector<Task> tasks;
  for (const auto& [n, T] : c.grid)
    for (DropoutKind k : c.dropout_kinds)
      for (std::size_t r = 0; r < c.n_replications; ++r) tasks.push_back({n, T, k, r});
  std::vector<std::vector<EstimateRecord>> out(tasks.size());
  parallel_for(tasks.size(), c.threads, [&](std::size_t i) {
    const Task& t = tasks[i];
    try {
      out[i] = run_replication(c, t.n, t.T, t.kind, t.r);
    } catch (const std::exception& ex) {
      for (Method m : c.estimation.methods) {
        EstimateRecord rec;
        rec.method = m;
        rec.error = ex.what();
        out[i].push_back(rec);
      }
    }
  });
  for (std::size_t i = 0; i < tasks.size(); ++i)
    for (auto& e : out[i]) res.records.push_back({tasks[i].r, tasks[i].n, tasks[i].T, tasks[i].kind, std::move(e)});
  // Cell-major ordering: (n, T, kind, method, replication).
  std::stable_sort(res.records.begin(), res.records.end(), [](const auto& a, const auto& b) {
    return std::make_tuple(a.n, a.T, static_cast<int>(a.kind), static_cast<int>(a.estimate.method)) <
           std::make_tuple(b.n, b.T, static_cast<int>(b.kind), static_cast<int>(b.estimate.method));
  });
  res.summaries = summarize(res.records, res.truth.value);
  for (const auto& s : res.summaries) {
    const double frac = static_cast<double>(s.n_failed) / static_cast<double>(s.n_failed + s.n_ok);
    if (frac > c.max_failure_fraction)
      throw ExperimentAborted(to_string(s.method) + " failed in " + std::to_string(s.n_failed) + " of " +
                              std::to_string(s.n_failed + s.n_ok) + " replications (n=" + std::to_string(s.n) +
                              ", T=" + std::to_string(s.T) + ", " + to_string(s.kind) + ")");
  }
  return res;
}

// ---------------------------------------------------------------------------
// Coverage curve
// ---------------------------------------------------------------------------

struct CoveragePoint {
  std::size_t n = 0;
  int T = 0;
  DropoutKind kind = DropoutKind::None;
  Method method = Method::CC;
  double alpha = 0.0;
  double ecp = 0.0;
  std::size_t n_ok = 0;
};

/// Recomputes every interval at each α from the stored (V̂, σ̂).
inline std::vector<CoveragePoint> coverage_curve(const std::vector<ReplicationRecord>& records, double truth,
                                                 const std::vector<double>& alphas) {
  std::vector<CoveragePoint> out;
  const auto cells = summarize(records, truth);
  for (const auto& cell : cells)
    for (double alpha : alphas) {
      const double z = normal_critical(alpha);
      CoveragePoint p{cell.n, cell.T, cell.kind, cell.method, alpha, 0.0, 0};
      double covered = 0.0;
      for (const auto& r : records) {
        if (r.n != cell.n || r.T != cell.T || r.kind != cell.kind || r.estimate.method != cell.method) continue;
        if (!r.estimate.ok) continue;
        ++p.n_ok;
        const double half = z * r.estimate.sigma / std::sqrt(r.estimate.nT);
        covered += std::abs(r.estimate.v_hat - truth) <= half ? 1.0 : 0.0;
      }
      p.ecp = p.n_ok > 0 ? covered / static_cast<double>(p.n_ok) : std::numeric_limits<double>::quiet_NaN();
      out.push_back(p);
    }
  return out;
}

/// Binomial band p ± z·√(p(1−p)/k) at two-sided level `level`.
inline std::pair<double, double> binomial_band(double p, std::size_t k, double level = 0.99) {
  const double z = normal_critical(1.0 - level);
  const double half = z * std::sqrt(p * (1.0 - p) / static_cast<double>(k));
  return {p - half, p + half};
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline void write_summary_csv(std::ostream& os, const std::vector<CellSummary>& cells) {
  os << "n,T,dropout,estimator,bias,sd,mse,ecp,ecp_se,mean_se,n_ok,n_failed\n";
  for (const auto& s : cells)
    os << s.n << ',' << s.T << ',' << to_string(s.kind) << ',' << to_string(s.method) << ','
       << format_double(s.bias) << ',' << format_double(s.sd) << ',' << format_double(s.mse) << ','
       << format_double(s.ecp) << ',' << format_double(s.ecp_se) << ',' << format_double(s.mean_se) << ','
       << s.n_ok << ',' << s.n_failed << '\n';
}

inline void write_replications_csv(std::ostream& os, const std::vector<ReplicationRecord>& records, double truth) {
  os << "replication,n,T,dropout_kind,estimator,v_hat,se,ci_lo,ci_hi,covered,ok\n";
  for (const auto& r : records) {
    const auto& e = r.estimate;
    const bool covered = e.ok && e.ci_lo <= truth && truth <= e.ci_hi;
    os << r.replication << ',' << r.n << ',' << r.T << ',' << to_string(r.kind) << ',' << to_string(e.method)
       << ',' << format_double(e.v_hat) << ',' << format_double(e.se) << ',' << format_double(e.ci_lo) << ','
       << format_double(e.ci_hi) << ',' << (covered ? 1 : 0) << ',' << (e.ok ? 1 : 0) << '\n';
  }
}

inline void write_coverage_csv(std::ostream& os, const std::vector<CoveragePoint>& pts) {
  os << "n,T,dropout,estimator,alpha,nominal,ecp,n_ok\n";
  for (const auto& p : pts)
    os << p.n << ',' << p.T << ',' << to_string(p.kind) << ',' << to_string(p.method) << ','
       << format_double(p.alpha) << ',' << format_double(1.0 - p.alpha) << ',' << format_double(p.ecp) << ','
       << p.n_ok << '\n';
}

namespace detail {

inline nlohmann::json num(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); }
inline double num_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const CellSummary& s) {
  return {{"n", s.n},
          {"T", s.T},
          {"dropout", to_string(s.kind)},
          {"estimator", to_string(s.method)},
          {"bias", detail::num(s.bias)},
          {"sd", detail::num(s.sd)},
          {"mse", detail::num(s.mse)},
          {"ecp", detail::num(s.ecp)},
          {"ecp_se", detail::num(s.ecp_se)},
          {"mean_se", detail::num(s.mean_se)},
          {"n_ok", s.n_ok},
          {"n_failed", s.n_failed}};
}

inline nlohmann::json to_json(const ReplicationRecord& r) {
  const auto& e = r.estimate;
  nlohmann::json j = {{"replication", r.replication},
                      {"n", r.n},
                      {"T", r.T},
                      {"dropout", to_string(r.kind)},
                      {"estimator", to_string(e.method)},
                      {"ok", e.ok},
                      {"v_hat", detail::num(e.v_hat)},
                      {"sigma", detail::num(e.sigma)},
                      {"se", detail::num(e.se)},
                      {"ci_lo", detail::num(e.ci_lo)},
                      {"ci_hi", detail::num(e.ci_hi)},
                      {"nT", e.nT}};
  if (!e.error.empty()) j["error"] = e.error;
  if (!e.warnings.empty()) j["warnings"] = e.warnings;
  return j;
}

inline ReplicationRecord replication_from_json(const nlohmann::json& j) {
  ReplicationRecord r;
  r.replication = j.at("replication").get<std::size_t>();
  r.n = j.at("n").get<std::size_t>();
  r.T = j.at("T").get<int>();
  r.kind = dropout_kind_from_string(j.at("dropout").get<std::string>());
  auto& e = r.estimate;
  e.method = method_from_string(j.at("estimator").get<std::string>());
  e.ok = j.at("ok").get<bool>();
  e.v_hat = detail::num_from(j.at("v_hat"));
  e.sigma = detail::num_from(j.at("sigma"));
  e.se = detail::num_from(j.at("se"));
  e.ci_lo = detail::num_from(j.at("ci_lo"));
  e.ci_hi = detail::num_from(j.at("ci_hi"));
  e.nT = j.at("nT").get<double>();
  if (j.contains("error")) e.error = j.at("error").get<std::string>();
  if (j.contains("warnings")) e.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

inline nlohmann::json to_json(const ExperimentResult& res, const ExperimentConfig& c) {
  nlohmann::json summaries = nlohmann::json::array();
  for (const auto& s : res.summaries) summaries.push_back(to_json(s));
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : res.records) records.push_back(to_json(r));
  return {{"config", to_json(c)},
          {"truth", {{"value", res.truth.value}, {"se", res.truth.se}, {"n_rollouts", res.truth.n_rollouts}}},
          {"summaries", summaries},
          {"records", records}};
}

inline ExperimentResult experiment_result_from_json(const nlohmann::json& j) {
  ExperimentResult res;
  res.truth.value = j.at("truth").at("value").get<double>();
  res.truth.se = j.at("truth").at("se").get<double>();
  res.truth.n_rollouts = j.at("truth").at("n_rollouts").get<std::size_t>();
  for (const auto& r : j.at("records")) res.records.push_back(replication_from_json(r));
  res.summaries = summarize(res.records, res.truth.value);
  return res;
}

}  // namespace opemiss
