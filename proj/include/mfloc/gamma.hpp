#pragma once

// Localized fraction g(tau): logistic closed form, RK4 integration of
// g' = g(1 - g), and a residual check of the integral growth law.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "mfloc/csv.hpp"
#include "mfloc/error.hpp"

namespace mfloc {

/// g sampled at increasing times starting from tau = 0.
struct GammaTrajectory {
  double g0 = 0.0;
  std::vector<double> tau;
  std::vector<double> g;

  std::size_t size() const { return tau.size(); }

  /// Linear interpolation; throws outside [tau.front(), tau.back()].
  double value_at(double t) const {
    if (tau.empty()) throw domain_error("empty gamma trajectory");
    const double slack = 1e-12 * std::max(1.0, tau.back());
    if (t < tau.front() - slack || t > tau.back() + slack)
      throw domain_error("time " + csv::format_double(t) + " outside gamma trajectory");
    if (tau.size() == 1 || t <= tau.front()) return g.front();
    if (t >= tau.back()) return g.back();
    auto it = std::upper_bound(tau.begin(), tau.end(), t);
    std::size_t k = static_cast<std::size_t>(it - tau.begin()) - 1;
    double w = (t - tau[k]) / (tau[k + 1] - tau[k]);
    return (1.0 - w) * g[k] + w * g[k + 1];
  }

  /// Trapezoid integral of g from 0 to t over the stored nodes.
  double integral(double t) const {
    value_at(t); // range check
    double s = 0.0;
    for (std::size_t k = 0; k + 1 < tau.size() && tau[k] < t; ++k) {
      double b = std::min(t, tau[k + 1]);
      s += 0.5 * (b - tau[k]) * (g[k] + value_at(b));
    }
    return s;
  }
};

inline void check_seed(double g0) {
  if (!(g0 >= 0.0 && g0 <= 1.0)) throw domain_error("seed fraction g0 must lie in [0, 1]");
}

/// g0 / (g0 + (1 - g0) e^{-tau}): the logistic solution through g(0) = g0,
/// arranged so that large tau cannot overflow.
inline double gamma_closed(double tau, double g0) {
  check_seed(g0);
  if (!(tau >= 0.0)) throw domain_error("gamma_closed: tau must be nonnegative");
  if (g0 == 0.0) return 0.0;
  return g0 / (g0 + (1.0 - g0) * std::exp(-tau));
}

/// Time at which the seeded logistic crosses 1/2.
inline double gamma_half_time(double g0) {
  if (!(g0 > 0.0 && g0 < 1.0)) throw domain_error("half time needs g0 in (0, 1)");
  return std::log((1.0 - g0) / g0);
}

namespace detail {

inline std::vector<double> uniform_times(double tau_end, double dtau) {
  if (!(tau_end >= 0.0)) throw domain_error("tau_end must be nonnegative");
  if (!(dtau > 0.0)) throw domain_error("dtau must be positive");
  double steps = tau_end / dtau;
  double rounded = std::round(steps);
  std::size_t n = std::abs(steps - rounded) <= 1e-9 * std::max(1.0, rounded)
                      ? static_cast<std::size_t>(rounded)
                      : static_cast<std::size_t>(std::ceil(steps));
  std::vector<double> t(n + 1);
  for (std::size_t k = 0; k <= n; ++k) t[k] = n == 0 ? 0.0 : tau_end * static_cast<double>(k) / static_cast<double>(n);
  return t;
}

} // namespace detail

/// Closed form sampled on a uniform grid.
inline GammaTrajectory gamma_sampled(double g0, double tau_end, double dtau) {
  check_seed(g0);
  GammaTrajectory traj;
  traj.g0 = g0;
  traj.tau = detail::uniform_times(tau_end, dtau);
  traj.g.reserve(traj.tau.size());
  for (double t : traj.tau) traj.g.push_back(gamma_closed(t, g0));
  return traj;
}

/// Constant g on a uniform grid (g = 1 is the fully localized regime).
inline GammaTrajectory gamma_constant(double value, double tau_end, double dtau) {
  check_seed(value);
  GammaTrajectory traj;
  traj.g0 = value;
  traj.tau = detail::uniform_times(tau_end, dtau);
  traj.g.assign(traj.tau.size(), value);
  return traj;
}

inline constexpr double max_gamma_step = 0.1;

/// Classical RK4 for g' = g(1 - g). Steps larger than 0.1 are rejected.
inline GammaTrajectory gamma_ode(double g0, double tau_end, double dtau) {
  check_seed(g0);
  if (!(dtau > 0.0)) throw domain_error("gamma_ode: dtau must be positive");
  if (dtau > max_gamma_step) throw domain_error("gamma_ode: dtau above 0.1 rejected");
  GammaTrajectory traj;
  traj.g0 = g0;
  traj.tau = detail::uniform_times(tau_end, dtau);
  traj.g.resize(traj.tau.size());
  auto f = [](double x) { return x * (1.0 - x); };
  double x = g0;
  traj.g[0] = x;
  for (std::size_t k = 1; k < traj.tau.size(); ++k) {
    double dt = traj.tau[k] - traj.tau[k - 1];
    double k1 = f(x);
    double k2 = f(x + 0.5 * dt * k1);
    double k3 = f(x + 0.5 * dt * k2);
    double k4 = f(x + dt * k3);
    x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    traj.g[k] = x;
  }
  return traj;
}

struct GammaResidual {
  /// |g(0) - 1 + exp(0)| = g(0): how far the seed sits from the unseeded law.
  double seed_offset = 0.0;
  /// max over tau > 0 of |g(tau) - 1 + (1 - g(0)) exp(-int_0^tau g)|.
  double max_residual = 0.0;
  /// Time where max_residual is attained.
  double argmax_tau = 0.0;
};

/// Checks the integral growth law g = 1 - exp(-int g) along a trajectory.
///
/// A nonzero g(0) is a seed standing in for a symmetry-breaking perturbation;
/// the law it implies for tau > 0 is 1 - g = (1 - g(0)) exp(-int_0^tau g),
/// which reduces to the unseeded law when g(0) = 0. The tau = 0 mismatch of
/// the unseeded law is reported separately as seed_offset.
inline GammaResidual gamma_residual(const GammaTrajectory& traj) {
  if (traj.tau.empty() || traj.tau.size() != traj.g.size()) throw domain_error("malformed gamma trajectory");
  GammaResidual r;
  const double seed = traj.g.front();
  r.seed_offset = std::abs(seed - 1.0 + 1.0);
  double integral = 0.0;
  for (std::size_t k = 1; k < traj.tau.size(); ++k) {
    integral += 0.5 * (traj.tau[k] - traj.tau[k - 1]) * (traj.g[k] + traj.g[k - 1]);
    double res = std::abs(traj.g[k] - 1.0 + (1.0 - seed) * std::exp(-integral));
    if (res > r.max_residual) {
      r.max_residual = res;
      r.argmax_tau = traj.tau[k];
    }
  }
  return r;
}

inline void write_gamma_csv(std::ostream& out, const GammaTrajectory& traj,
                            const std::vector<std::string>& provenance = {}) {
  csv::write_comments(out, provenance);
  out << "tau,g\n";
  for (std::size_t k = 0; k < traj.size(); ++k)
    out << csv::format_double(traj.tau[k]) << ',' << csv::format_double(traj.g[k]) << '\n';
}

} // namespace mfloc
