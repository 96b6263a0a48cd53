#pragma once

#include "opemiss/common.hpp"

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace opemiss {

// ---------------------------------------------------------------------------
// Observed data
// ---------------------------------------------------------------------------

/// One step (S_t, A_t, R_{t+1}, S_{t+1}) with its response indicator.
///
/// The reward and next state of an unobserved step are kept only as latent
/// diagnostics; `reward()` and `next_state()` refuse to hand them out.
class Transition {
 public:
  Transition() = default;
  Transition(const State& s, int a, double r, const State& s_next)
      : s_(s), a_(a), r_(r), s_next_(s_next) {}

  const State& state() const { return s_; }
  int action() const { return a_; }
  bool observed() const { return observed_; }

  double reward() const {
    if (!observed_) throw StateError("reward of an unobserved transition requested");
    return r_;
  }
  const State& next_state() const {
    if (!observed_) throw StateError("next state of an unobserved transition requested");
    return s_next_;
  }

  // Diagnostics only (true value before masking; NaN when loaded from disk).
  double latent_reward() const { return r_; }
  const State& latent_next_state() const { return s_next_; }

  void mask() { observed_ = false; }

  static Transition unobserved(const State& s, int a) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    Transition tr(s, a, nan, State(nan, nan));
    tr.observed_ = false;
    return tr;
  }

 private:
  State s_ = State::Zero();
  int a_ = 0;
  double r_ = 0.0;
  State s_next_ = State::Zero();
  bool observed_ = true;
};

struct Trajectory {
  std::vector<Transition> transitions;
  int horizon = 0;
  /// Number of observed transitions; equals `horizon` when nothing dropped.
  int dropout_time = 0;
  bool dropout_applied = false;
};

using Dataset = std::vector<Trajectory>;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class DropoutKind { None, MAR, MNAR };

inline std::string to_string(DropoutKind k) {
  switch (k) {
    case DropoutKind::None: return "none";
    case DropoutKind::MAR: return "mar";
    case DropoutKind::MNAR: return "mnar";
  }
  return "?";
}

inline DropoutKind dropout_kind_from_string(const std::string& s) {
  if (s == "none") return DropoutKind::None;
  if (s == "mar") return DropoutKind::MAR;
  if (s == "mnar") return DropoutKind::MNAR;
  throw ConfigError("unknown dropout kind '" + s + "'");
}

/// λ = {1 + exp(ψ₁ + ψ₂ S¹_t + ψ₃ R)}⁻¹ with R = R_{t+1} (MNAR) or R_t (MAR).
struct DropoutSpec {
  DropoutKind kind = DropoutKind::None;
  Eigen::Vector3d psi = Eigen::Vector3d(2.0, 0.15, -0.3);
  /// Transitions with index t < first_at_risk are always observed (η₀ = η₁ = 1).
  int first_at_risk = 1;

  static DropoutSpec none() { return {}; }
  static DropoutSpec mar(const Eigen::Vector3d& psi) { return {DropoutKind::MAR, psi, 1}; }
  static DropoutSpec mnar(const Eigen::Vector3d& psi) { return {DropoutKind::MNAR, psi, 1}; }
};

/// Setting 1 and Setting 2 dropout coefficients of the 2D-linear study.
inline Eigen::Vector3d setting_psi(int setting) {
  if (setting == 1) return {2.0, 0.08, -0.15};
  if (setting == 2) return {2.0, 0.15, -0.3};
  throw ConfigError("setting must be 1 or 2");
}

inline double logistic_hazard(double index) { return 1.0 / (1.0 + std::exp(index)); }

/// True dropout hazard of the simulation for transition t of a complete trajectory.
inline double simulation_hazard(const DropoutSpec& spec, const Trajectory& traj, std::size_t t) {
  const Transition& tr = traj.transitions[t];
  double r = 0.0;
  if (spec.kind == DropoutKind::MNAR) {
    r = tr.latent_reward();
  } else if (spec.kind == DropoutKind::MAR) {
    if (t == 0) throw ConfigError("MAR hazard needs a previous reward");
    r = traj.transitions[t - 1].latent_reward();
  } else {
    return 0.0;
  }
  return logistic_hazard(spec.psi(0) + spec.psi(1) * tr.state()(0) + spec.psi(2) * r);
}

struct EnvConfig {
  std::size_t n = 500;
  int T = 10;
  double gamma = 0.9;
  std::uint64_t seed = 0;
  DropoutSpec dropout;

  void validate() const {
    if (n < 1) throw ConfigError("n must be at least 1");
    if (T < 2) throw ConfigError("T must be at least 2");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
  }
};

// ---------------------------------------------------------------------------
// 2D linear environment
// ---------------------------------------------------------------------------

struct StepResult {
  double reward;
  State next;
};

/// S¹' = (2A−1)S¹ + ε¹, S²' = (1−2A)S² + ε², R = 2S¹' + S²' + 0.5S² − 0.25(2A−1) + ε³.
struct LinearEnv2D {
  double transition_sd = 0.5;  // variance 0.25
  double reward_sd = 0.01;     // variance 1e-4

  double contraction = 1.0;

  static StepResult transition(const State& s, int a, double e1, double e2, double e3,
                               double contraction = 1.0) {
    const double sign = 2.0 * a - 1.0;
    State next(contraction * sign * s(0) + e1, -contraction * sign * s(1) + e2);
    const double r = 2.0 * next(0) + next(1) + 0.5 * s(1) - 0.25 * sign + e3;
    return {r, next};
  }

  State initial_state(std::mt19937_64& rng) const {
    std::normal_distribution<double> z;
    const double x = z(rng);
    const double y = z(rng);
    return {x, y};
  }

  StepResult step(const State& s, int a, std::mt19937_64& rng) const {
    std::normal_distribution<double> z;
    const double e1 = transition_sd * z(rng);
    const double e2 = transition_sd * z(rng);
    const double e3 = reward_sd * z(rng);
    return transition(s, a, e1, e2, e3, contraction);
  }
};

template <class E>
concept Environment = requires(const E& env, const State& s, int a, std::mt19937_64& rng) {
  { env.initial_state(rng) } -> std::convertible_to<State>;
  { env.step(s, a, rng) } -> std::convertible_to<StepResult>;
};

/// π(a=1|s) = 1{s¹ + s² > 0}; the boundary goes to action 0.
struct TargetPolicy {
  Eigen::VectorXd operator()(const Eigen::VectorXd& s) const {
    Eigen::VectorXd p(2);
    const bool one = s(0) + s(1) > 0.0;
    p << (one ? 0.0 : 1.0), (one ? 1.0 : 0.0);
    return p;
  }
};

template <class P>
concept Policy = requires(const P& pi, const Eigen::VectorXd& s) {
  { pi(s) } -> std::convertible_to<Eigen::VectorXd>;
};

template <class Rng>
int sample_action(const Eigen::VectorXd& probs, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  double acc = 0.0;
  for (Eigen::Index a = 0; a + 1 < probs.size(); ++a) {
    acc += probs(a);
    if (x < acc) return static_cast<int>(a);
  }
  return static_cast<int>(probs.size() - 1);
}

/// Complete trajectories under the Bernoulli(0.5) behavior policy.
template <Environment Env = LinearEnv2D>
Dataset generate_complete(const EnvConfig& config, const Env& env = Env{}) {
  config.validate();
  Dataset out(config.n);
  for (std::size_t i = 0; i < config.n; ++i) {
    auto rng = make_rng(config.seed, i, Stream::Trajectory);
    std::bernoulli_distribution behavior(0.5);
    Trajectory& traj = out[i];
    traj.horizon = config.T;
    traj.dropout_time = config.T;
    traj.transitions.reserve(static_cast<std::size_t>(config.T));
    State s = env.initial_state(rng);
    for (int t = 0; t < config.T; ++t) {
      const int a = behavior(rng) ? 1 : 0;
      const StepResult step = env.step(s, a, rng);
      traj.transitions.emplace_back(s, a, step.reward, step.next);
      s = step.next;
    }
  }
  return out;
}

/// Monotone dropout: η_{t+1} ~ Bernoulli(1 − λ_t) for t ≥ first_at_risk; the
/// trajectory is truncated after its first unobserved transition.
inline Dataset apply_dropout(const Dataset& trajs, const DropoutSpec& spec, std::uint64_t seed) {
  Dataset out = trajs;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Trajectory& traj = out[i];
    if (traj.dropout_applied) throw StateError("dropout already applied to trajectory");
    if (traj.dropout_time != traj.horizon ||
        traj.transitions.size() != static_cast<std::size_t>(traj.horizon))
      throw StateError("apply_dropout requires complete trajectories");
    traj.dropout_applied = true;
    if (spec.kind == DropoutKind::None) continue;
    auto rng = make_rng(seed, i, Stream::Dropout);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t t = static_cast<std::size_t>(spec.first_at_risk); t < traj.transitions.size();
         ++t) {
      const double lambda = simulation_hazard(spec, traj, t);
      if (u(rng) < lambda) {
        traj.transitions[t].mask();
        traj.transitions.resize(t + 1);
        traj.dropout_time = static_cast<int>(t);
        break;
      }
    }
  }
  return out;
}

inline bool is_monotone(const Trajectory& traj) {
  bool seen_missing = false;
  for (const auto& tr : traj.transitions) {
    if (seen_missing) return false;
    if (!tr.observed()) seen_missing = true;
  }
  int observed = 0;
  for (const auto& tr : traj.transitions) observed += tr.observed() ? 1 : 0;
  return observed == traj.dropout_time;
}

// ---------------------------------------------------------------------------
// Monte Carlo ground truth
// ---------------------------------------------------------------------------

struct McEstimate {
  double value = 0.0;
  double se = 0.0;
  std::size_t n_rollouts = 0;
};

/// Discounted return of rollout `index` (its own RNG stream).
template <Environment Env, Policy Pi>
double rollout_return(const Env& env, const Pi& policy, double gamma, int horizon,
                      std::uint64_t seed, std::uint64_t index) {
  auto rng = make_rng(seed, index, Stream::Rollout);
  State s = env.initial_state(rng);
  double ret = 0.0;
  double disc = 1.0;
  for (int t = 0; t < horizon; ++t) {
    const Eigen::VectorXd probs = policy(Eigen::VectorXd(s));
    const int a = sample_action(probs, rng);
    const StepResult step = env.step(s, a, rng);
    ret += disc * step.reward;
    disc *= gamma;
    s = step.next;
  }
  return ret;
}

/// Sum and sum of squares of returns for rollouts [first, first + count).
struct RolloutBatch {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;

  RolloutBatch& operator+=(const RolloutBatch& o) {
    sum += o.sum;
    sum_sq += o.sum_sq;
    count += o.count;
    return *this;
  }
};

template <Environment Env, Policy Pi>
RolloutBatch rollout_batch(const Env& env, const Pi& policy, double gamma, int horizon,
                           std::uint64_t seed, std::size_t first, std::size_t count) {
  RolloutBatch b;
  for (std::size_t k = first; k < first + count; ++k) {
    const double g = rollout_return(env, policy, gamma, horizon, seed, k);
    b.sum += g;
    b.sum_sq += g * g;
  }
  b.count = count;
  return b;
}

inline McEstimate finalize(const RolloutBatch& b) {
  McEstimate e;
  e.n_rollouts = b.count;
  e.value = b.sum / static_cast<double>(b.count);
  if (b.count > 1) {
    const double n = static_cast<double>(b.count);
    const double var = std::max(0.0, (b.sum_sq - n * e.value * e.value) / (n - 1.0));
    e.se = std::sqrt(var / n);
  }
  return e;
}

template <Environment Env, Policy Pi>
McEstimate monte_carlo_truth(const Env& env, const Pi& policy, double gamma,
                             std::size_t n_rollouts, int horizon, std::uint64_t seed) {
  if (n_rollouts < 1) throw ConfigError("n_rollouts must be at least 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (horizon < 1) throw ConfigError("horizon must be positive");
  if (gamma > 0.0 && std::pow(gamma, horizon) >= 1e-6)
    throw ConfigError("rollout horizon too short: gamma^horizon must be below 1e-6");
  return finalize(rollout_batch(env, policy, gamma, horizon, seed, 0, n_rollouts));
}

// ---------------------------------------------------------------------------
// Tabular oracle environment
// ---------------------------------------------------------------------------

struct TabularOracleEnv {
  int n_states = 1;
  int n_actions = 1;
  std::vector<Eigen::MatrixXd> P;  // P[a](s, s')
  Eigen::MatrixXd r;               // r(s, a)
  double gamma = 0.9;

  void validate() const {
    if (n_states < 1 || n_states > 20) throw ConfigError("tabular env supports 1..20 states");
    if (static_cast<int>(P.size()) != n_actions) throw ShapeError("one transition matrix per action");
    if (r.rows() != n_states || r.cols() != n_actions) throw ShapeError("reward table shape");
    for (const auto& Pa : P) {
      if (Pa.rows() != n_states || Pa.cols() != n_states) throw ShapeError("transition shape");
      for (int s = 0; s < n_states; ++s) {
        if (std::abs(Pa.row(s).sum() - 1.0) > 1e-12)
          throw ConfigError("transition row does not sum to 1");
        if ((Pa.row(s).array() < 0.0).any()) throw ConfigError("negative transition probability");
      }
    }
  }

  static TabularOracleEnv random(int n_states, int n_actions, double gamma, std::uint64_t seed) {
    auto rng = make_rng(seed, 0, Stream::Tabular);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    TabularOracleEnv env;
    env.n_states = n_states;
    env.n_actions = n_actions;
    env.gamma = gamma;
    env.r.resize(n_states, n_actions);
    for (int s = 0; s < n_states; ++s)
      for (int a = 0; a < n_actions; ++a) env.r(s, a) = 2.0 * u(rng) - 1.0;
    for (int a = 0; a < n_actions; ++a) {
      Eigen::MatrixXd Pa(n_states, n_states);
      for (int s = 0; s < n_states; ++s) {
        for (int sp = 0; sp < n_states; ++sp) Pa(s, sp) = u(rng) + 1e-3;
        Pa.row(s) /= Pa.row(s).sum();
      }
      env.P.push_back(Pa);
    }
    return env;
  }
};

/// Q^π from the exact linear solve (I − γ P Π) q = r; `policy` is |S|×|A|.
inline Eigen::MatrixXd oracle_q(const TabularOracleEnv& env, const Eigen::MatrixXd& policy) {
  env.validate();
  const int S = env.n_states;
  const int A = env.n_actions;
  if (policy.rows() != S || policy.cols() != A) throw ShapeError("policy table shape");
  const int N = S * A;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(N, N);
  Eigen::VectorXd rv(N);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      rv(s * A + a) = env.r(s, a);
      for (int sp = 0; sp < S; ++sp)
        for (int ap = 0; ap < A; ++ap) M(s * A + a, sp * A + ap) = env.P[a](s, sp) * policy(sp, ap);
    }
  const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(N, N) - env.gamma * M;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(lhs);
  if (!lu.isInvertible()) throw NumericalError("Bellman system is singular");
  const Eigen::VectorXd q = lu.solve(rv);
  const Eigen::VectorXd resid = rv + env.gamma * M * q - q;
  if (resid.lpNorm<Eigen::Infinity>() > 1e-10) throw NumericalError("Bellman residual too large");
  Eigen::MatrixXd Q(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) Q(s, a) = q(s * A + a);
  return Q;
}

}  // namespace opemiss
