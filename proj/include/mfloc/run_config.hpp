#pragma once

// Line-based `key = value` run configuration with per-subcommand defaults.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mfloc/csv.hpp"
#include "mfloc/error.hpp"

namespace mfloc {

struct KeySpec {
  std::string name;
  std::string doc;
  /// subcommand -> default value; the key is valid only for listed subcommands.
  std::vector<std::pair<std::string, std::string>> defaults;
};

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> subs = {"gamma",        "steady", "transient", "mc-steady",
                                                "mc-transient", "oracle", "fig1"};
  return subs;
}

inline const std::vector<KeySpec>& key_registry() {
  using P = std::pair<std::string, std::string>;
  auto all = [](const std::string& v) {
    std::vector<P> d;
    for (const auto& s : subcommands()) d.emplace_back(s, v);
    return d;
  };
  static const std::vector<KeySpec> keys = {
      {"out", "output root directory", all("out")},
      {"name", "run name; files go to <out>/<subcommand>/<name>/", all("default")},
      {"g0", "initial localized fraction (transient with gamma = constant: the constant value)",
       {P{"gamma", "0.01"}, P{"transient", "1"}, P{"mc-transient", "0.01"}}},
      {"g0_list", "comma-separated seeds for the fig1 curve family", {P{"fig1", "0.01,0.005,0.0025,0.0008,0"}}},
      {"tau_end", "final dimensionless time",
       {P{"gamma", "20"}, P{"transient", "25"}, P{"mc-steady", "30"}, P{"mc-transient", "10"}, P{"fig1", "20"}}},
      {"dtau", "time step (transient: empty means dtau = h)",
       {P{"gamma", "0.01"}, P{"transient", ""}, P{"fig1", "0.01"}}},
      {"method", "gamma evaluation: closed or ode", {P{"gamma", "closed"}, P{"fig1", "closed"}}},
      {"gamma", "transient drive: closed (logistic from g0) or constant (g = g0)", {P{"transient", "constant"}}},
      {"u_max", "grid upper end", {P{"steady", "30"}, P{"transient", "30"}, P{"fig1", "30"}}},
      {"h", "grid spacing", {P{"steady", "0.01"}, P{"transient", "0.01"}, P{"fig1", "0.05"}}},
      {"alpha", "fixed-point damping", {P{"steady", "0.5"}, P{"fig1", "0.5"}}},
      {"tol_fixed_point", "fixed-point L1 stopping tolerance", {P{"steady", "1e-8"}, P{"fig1", "1e-8"}}},
      {"max_iters", "fixed-point iteration cap", {P{"steady", "500"}, P{"fig1", "500"}}},
      {"steady_subsamples", "kernel quadrature points per cell (steady)", {P{"steady", "2"}, P{"fig1", "2"}}},
      {"initial", "initial density: gamma2, exponential or point",
       {P{"steady", "gamma2"}, P{"transient", "gamma2"}, P{"fig1", "gamma2"}}},
      {"initial_point", "location of the point initial density", {P{"steady", "2"}, P{"transient", "2"}, P{"fig1", "2"}}},
      {"tol_mass", "tolerated mass change per transient step", {P{"transient", "1e-8"}}},
      {"lost_mass_cap", "cumulative mass allowed to drift past u_max", {P{"transient", "1e-10"}}},
      {"transient_subsamples", "kernel quadrature points per cell (transient)", {P{"transient", "1"}}},
      {"snapshot_every", "store every n-th transient step", {P{"transient", "100"}}},
      {"resummed", "also write the resummed-equation residual (0 or 1)", {P{"transient", "0"}}},
      {"m_max", "hierarchy truncation order for the residual", {P{"transient", "3"}}},
      {"M", "population size", {P{"mc-steady", "200000"}, P{"mc-transient", "200000"}}},
      {"seed", "base seed", {P{"mc-steady", "1"}, P{"mc-transient", "1"}}},
      {"seeds", "number of consecutive seeds in the sweep", {P{"mc-steady", "1"}, P{"mc-transient", "1"}}},
      {"snapshots", "comma-separated snapshot times", {P{"mc-steady", "30"}, P{"mc-transient", "1,2,3,5,8,10"}}},
      {"entrant", "u of newly localized particles: adopt or cap", {P{"mc-steady", "adopt"}, P{"mc-transient", "adopt"}}},
      {"entrant_cap", "entrant u under the cap rule", {P{"mc-steady", "10"}, P{"mc-transient", "10"}}},
      {"u_ceiling", "values above this are clamped and counted", {P{"mc-steady", "1e6"}, P{"mc-transient", "1e6"}}},
      {"hist_u_max", "histogram grid upper end", {P{"mc-steady", "30"}, P{"mc-transient", "30"}}},
      {"hist_h", "histogram grid spacing", {P{"mc-steady", "0.1"}, P{"mc-transient", "0.1"}}},
      {"checkpoint", "write the final population to this path (empty: none)",
       {P{"mc-steady", ""}, P{"mc-transient", ""}}},
      {"resume", "continue from this checkpoint instead of a fresh population",
       {P{"mc-steady", ""}, P{"mc-transient", ""}}},
      {"xi1_sq", "squared width of particle 1", {P{"oracle", "1"}}},
      {"xi2_sq", "squared width of particle 2", {P{"oracle", "1"}}},
      {"boxes", "comma-separated box sizes", {P{"oracle", "0.4,0.2,0.1,0.05,0.01"}}},
      {"box_convention", "diameter (|r1-r2| < B/2) or radius (|r1-r2| < B)", {P{"oracle", "diameter"}}},
      {"quad_points", "starting quadrature points per axis", {P{"oracle", "64"}}},
      {"integration_halfwidth", "r1 window in units of the narrower width", {P{"oracle", "10"}}},
      {"offset", "centre of particle 2", {P{"oracle", "0"}}},
  };
  return keys;
}

/// Resolved key/value set for one subcommand.
class RunConfig {
public:
  explicit RunConfig(std::string subcommand) : sub_(std::move(subcommand)) {
    if (std::find(subcommands().begin(), subcommands().end(), sub_) == subcommands().end())
      throw config_error("unknown subcommand '" + sub_ + "'");
    for (const auto& k : key_registry())
      for (const auto& [s, v] : k.defaults)
        if (s == sub_) values_[k.name] = v;
  }

  const std::string& subcommand() const { return sub_; }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("unknown key '" + key + "' for subcommand " + sub_);
    it->second = value;
  }

  /// `key=value` or `key = value`.
  void set_assignment(const std::string& text) {
    auto eq = text.find('=');
    if (eq == std::string::npos) throw config_error("expected key=value, got '" + text + "'");
    set(std::string(csv::trim(std::string_view(text).substr(0, eq))),
        std::string(csv::trim(std::string_view(text).substr(eq + 1))));
  }

  /// Reads `key = value` lines; `#` starts a comment, blank lines are skipped.
  void load(std::istream& in) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::string_view sv = csv::trim(line);
      if (sv.empty()) continue;
      try {
        set_assignment(std::string(sv));
      } catch (const config_error& e) {
        throw config_error("line " + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config '" + path + "'");
    load(in);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("key '" + key + "' not defined for " + sub_);
    return it->second;
  }

  double num(const std::string& key) const {
    try {
      return csv::parse_double(str(key));
    } catch (const io_error&) {
      throw config_error("key '" + key + "' needs a number, got '" + str(key) + "'");
    }
  }

  std::int64_t integer(const std::string& key) const {
    double v = num(key);
    if (v != std::floor(v) || std::abs(v) > 9.0e15) throw config_error("key '" + key + "' needs an integer");
    return static_cast<std::int64_t>(v);
  }

  std::uint64_t unsigned_integer(const std::string& key) const {
    auto v = integer(key);
    if (v < 0) throw config_error("key '" + key + "' must be nonnegative");
    return static_cast<std::uint64_t>(v);
  }

  std::vector<double> list(const std::string& key) const {
    std::vector<double> out;
    const std::string& s = str(key);
    if (csv::trim(s).empty()) return out;
    for (auto cell : csv::split(s)) {
      try {
        out.push_back(csv::parse_double(csv::trim(cell)));
      } catch (const io_error&) {
        throw config_error("key '" + key + "' needs a comma-separated list of numbers");
      }
    }
    return out;
  }

  /// `key = value` lines in key order; loading them back reproduces this config.
  std::vector<std::string> echo() const {
    std::vector<std::string> lines;
    for (const auto& [k, v] : values_) lines.push_back(k + " = " + v);
    return lines;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

private:
  std::string sub_;
  std::map<std::string, std::string> values_;
};

} // namespace mfloc
