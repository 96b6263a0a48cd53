#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace opemiss {

using State = Eigen::Vector2d;

// Error taxonomy. Each maps to one failure class named in the docs.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DegenerateDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BasisError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BinningError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a moment-based fit does not converge from any start.
struct EstimationError : std::runtime_error {
  EstimationError(const std::string& what, double best_residual)
      : std::runtime_error(what), best_residual(best_residual) {}
  double best_residual;
};

/// Labels for independent random streams derived from one seed.
enum class Stream : std::uint64_t {
  Trajectory = 1,
  Dropout = 2,
  Rollout = 3,
  Reference = 4,
  Replication = 5,
  Tabular = 6,
  Diagnostics = 7,
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Counter-based seed: a pure function of (seed, index, stream).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, Stream stream) {
  std::uint64_t h = detail::splitmix64(seed);
  h = detail::splitmix64(h ^ index);
  h = detail::splitmix64(h ^ static_cast<std::uint64_t>(stream));
  return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t index, Stream stream) {
  return std::mt19937_64(derive_seed(seed, index, stream));
}

}  // namespace opemiss
