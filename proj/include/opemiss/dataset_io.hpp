#pragma once

#include "opemiss/common.hpp"
#include "opemiss/env_sim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace opemiss {

inline constexpr const char* kDatasetHeader = "traj_id,t,s1,s2,a,r,s1_next,s2_next,eta_next";

/// Shortest text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

/// One row per transition; reward and next state are empty when unobserved.
inline void write_dataset_csv(std::ostream& os, const Dataset& data) {
  os << kDatasetHeader << '\n';
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t t = 0; t < data[i].transitions.size(); ++t) {
      const Transition& tr = data[i].transitions[t];
      os << i << ',' << t << ',' << format_double(tr.state()(0)) << ',' << format_double(tr.state()(1)) << ','
         << tr.action() << ',';
      if (tr.observed())
        os << format_double(tr.reward()) << ',' << format_double(tr.next_state()(0)) << ','
           << format_double(tr.next_state()(1)) << ",1\n";
      else
        os << ",,,0\n";
    }
}

inline nlohmann::json dataset_sidecar(const Dataset& data, const EnvConfig& cfg) {
  std::size_t rows = 0;
  std::size_t dropped = 0;
  for (const auto& tr : data) {
    rows += tr.transitions.size();
    dropped += tr.dropout_time < static_cast<int>(tr.transitions.size()) ? 1 : 0;
  }
  return {{"n", data.size()},
          {"T", cfg.T},
          {"gamma", cfg.gamma},
          {"seed", cfg.seed},
          {"dropout", to_string(cfg.dropout.kind)},
          {"psi", {cfg.dropout.psi(0), cfg.dropout.psi(1), cfg.dropout.psi(2)}},
          {"rows", rows},
          {"dropped_trajectories", dropped}};
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, std::size_t line) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("line " + std::to_string(line) + ": bad number '" + s + "'");
  }
}

}  // namespace detail

/// Reads the CSV written by `write_dataset_csv`. Rows of a trajectory must
/// be contiguous with t = 0, 1, …. A horizon of 0 takes the longest trajectory.
inline Dataset read_dataset_csv(std::istream& is, int horizon = 0) {
  std::string line;
  if (!std::getline(is, line) || line != kDatasetHeader) throw ConfigError("dataset CSV header mismatch");
  Dataset data;
  std::size_t lineno = 1;
  long current = -1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = detail::split_csv_line(line);
    if (c.size() != 9) throw ConfigError("line " + std::to_string(lineno) + ": expected 9 columns");
    const long id = static_cast<long>(detail::parse_double(c[0], lineno));
    const int t = static_cast<int>(detail::parse_double(c[1], lineno));
    if (id != current) {
      if (id != current + 1) throw ConfigError("trajectory ids must be contiguous from 0");
      current = id;
      data.emplace_back();
    }
    Trajectory& traj = data.back();
    if (t != static_cast<int>(traj.transitions.size())) throw ConfigError("time index out of order");
    if (!traj.transitions.empty() && !traj.transitions.back().observed())
      throw ConfigError("row after an unobserved transition breaks monotone dropout");
    const State s(detail::parse_double(c[2], lineno), detail::parse_double(c[3], lineno));
    const int a = static_cast<int>(detail::parse_double(c[4], lineno));
    const bool observed = c[8] == "1";
    if (observed)
      traj.transitions.emplace_back(
          s, a, detail::parse_double(c[5], lineno),
          State(detail::parse_double(c[6], lineno), detail::parse_double(c[7], lineno)));
    else
      traj.transitions.push_back(Transition::unobserved(s, a));
  }
  const int given = horizon;
  for (auto& traj : data) {
    int observed = 0;
    for (const auto& tr : traj.transitions) observed += tr.observed() ? 1 : 0;
    traj.dropout_time = observed;
    traj.dropout_applied = true;
    horizon = std::max(horizon, static_cast<int>(traj.transitions.size()));
  }
  if (given > 0 && horizon > given) throw ConfigError("trajectory longer than the stated horizon");
  for (auto& traj : data) traj.horizon = horizon;
  return data;
}

inline Dataset read_dataset_csv(const std::string& path, int horizon = 0) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open dataset '" + path + "'");
  return read_dataset_csv(f, horizon);
}

}  // namespace opemiss
