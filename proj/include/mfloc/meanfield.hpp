#pragma once

// Deterministic mean-field solvers on a UGrid:
//  * the steady state  p + dp/du = K[p,p]  by damped fixed-point iteration,
//  * the transient     (d/dtau + d/du) p = g(tau) (K[p,p] - p)  by operator splitting,
//  * the time-ordered intermediate distributions p_m and two residuals that
//    check a transient solution against the memory-integral form of the
//    dynamics (resummed, and order-by-order truncated).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <ostream>
#include <string>
#include <vector>

#include "mfloc/csv.hpp"
#include "mfloc/error.hpp"
#include "mfloc/gamma.hpp"
#include "mfloc/udist.hpp"

namespace mfloc {

enum class InitialShape { gamma2, exponential, point_mass };

inline InitialShape parse_initial_shape(const std::string& s) {
  if (s == "gamma2" || s == "ue") return InitialShape::gamma2;
  if (s == "exponential" || s == "exp") return InitialShape::exponential;
  if (s == "point" || s == "point_mass") return InitialShape::point_mass;
  throw config_error("unknown initial shape '" + s + "' (gamma2, exponential, point)");
}

inline std::string to_string(InitialShape s) {
  switch (s) {
  case InitialShape::gamma2: return "gamma2";
  case InitialShape::exponential: return "exponential";
  case InitialShape::point_mass: return "point";
  }
  return "?";
}

struct SolverConfig {
  double u_max = 30.0;
  double h = 0.01;
  /// Damping of the fixed-point map, p <- (1 - alpha) p + alpha T[p].
  double alpha = 0.5;
  /// L1 change between iterates that ends the fixed-point iteration.
  double tol_fixed_point = 1e-8;
  int max_iters = 500;
  /// Transient time step; must be a whole multiple of h (drift moves whole nodes).
  double dtau = 0.01;
  double tol_residual = 1e-4;
  /// Tolerated mass change per transient step before renormalization.
  double tol_mass = 1e-8;
  double lost_mass_cap = 1e-10;
  int m_max = 3;
  /// Kernel quadrature points per cell for the steady solver and its residual.
  int steady_subsamples = 2;
  /// Kernel quadrature points per cell for time stepping and p_m.
  int transient_subsamples = 1;
  InitialShape initial = InitialShape::gamma2;
  double initial_point = 2.0;

  UGrid grid() const { return UGrid::from_spacing(u_max, h); }

  void validate() const {
    grid();
    if (h > 1.0) throw config_error("h must not exceed 1");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw config_error("alpha must lie in (0, 1]");
    if (!(tol_fixed_point > 0.0) || !(tol_residual > 0.0) || !(tol_mass > 0.0) || !(lost_mass_cap > 0.0))
      throw config_error("tolerances must be positive");
    if (max_iters < 1) throw config_error("max_iters must be >= 1");
    if (!(dtau > 0.0)) throw config_error("dtau must be positive");
    double r = dtau / h;
    if (std::abs(r - std::round(r)) > 1e-9 * std::max(1.0, r) || std::round(r) < 1.0)
      throw config_error("dtau must be a whole multiple of h");
    if (m_max < 1 || m_max > 3) throw config_error("m_max must lie in 1..3");
    if (steady_subsamples < 1 || transient_subsamples < 1) throw config_error("subsamples must be >= 1");
  }
};

inline UDensity initial_density(const UGrid& g, InitialShape shape, double point = 2.0) {
  switch (shape) {
  case InitialShape::gamma2: return densities::gamma2(g);
  case InitialShape::exponential: return densities::exponential(g);
  case InitialShape::point_mass: return densities::point_mass(g, point);
  }
  throw config_error("unknown initial shape");
}

namespace detail {

// m_k = integral over x in [0,1] of x^k exp(-h (1 - x)), by its Taylor series in h.
inline double damped_moment(int k, double h) {
  double term = 1.0 / (k + 1);
  double sum = term;
  for (int n = 0; n < 200; ++n) {
    term *= -h / (n + k + 2);
    sum += term;
    if (std::abs(term) < 1e-19 * std::abs(sum)) break;
  }
  return sum;
}

// Exact cell integrals of exp(-(u_{i+1} - s)) times an interpolant of K on
// [u_i, u_{i+1}]: cubic through nodes i-1..i+2 in the interior, linear at the ends.
struct integrating_factor {
  double decay = 0.0;
  std::array<double, 4> cubic{};
  std::array<double, 2> linear{};

  explicit integrating_factor(double h) {
    decay = std::exp(-h);
    std::array<double, 4> m{};
    for (int k = 0; k < 4; ++k) m[k] = damped_moment(k, h);
    // Lagrange basis on x = -1, 0, 1, 2 in the power basis.
    static constexpr double basis[4][4] = {{0.0, -1.0 / 3.0, 0.5, -1.0 / 6.0},
                                           {1.0, -0.5, -1.0, 0.5},
                                           {0.0, 1.0, 0.5, -0.5},
                                           {0.0, -1.0 / 6.0, 0.0, 1.0 / 6.0}};
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += basis[j][k] * m[k];
      cubic[j] = h * s;
    }
    linear[0] = h * (m[0] - m[1]);
    linear[1] = h * m[1];
  }

  // Solution of p' + p = K with p(0) = 0, sampled at the nodes.
  std::vector<double> solve(std::span<const double> k) const {
    const std::size_t n = k.size() - 1;
    std::vector<double> p(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double src;
      if (i >= 1 && i + 2 <= n)
        src = cubic[0] * k[i - 1] + cubic[1] * k[i] + cubic[2] * k[i + 1] + cubic[3] * k[i + 2];
      else
        src = linear[0] * k[i] + linear[1] * k[i + 1];
      // The cubic interpolant may dip below zero where K rises steeply from ~0.
      p[i + 1] = std::max(0.0, decay * p[i] + src);
    }
    return p;
  }
};

} // namespace detail

// ---------------------------------------------------------------------------
// steady state

struct SteadyResult {
  UDensity density;
  int iterations = 0;
  double last_change = 0.0;
  std::vector<double> change_history;
};

/// One application of the undamped map: the solution of p' + p = K[p,p] with p(0) = 0.
inline UDensity steady_map(const UDensity& p, KernelQuadrature quad) {
  UDensity k = collision_kernel(p, p, quad);
  detail::integrating_factor f(p.grid().h());
  return UDensity(p.grid(), f.solve(k.values()));
}

/// Damped fixed-point iteration for p + dp/du = K[p,p], normalized each sweep.
/// Throws convergence_error when the L1 change stays above tolerance after max_iters.
inline SteadyResult solve_steady(const SolverConfig& cfg, const UDensity& initial) {
  cfg.validate();
  const UGrid g = cfg.grid();
  if (!(initial.grid() == g)) throw config_error("initial density is not on the solver grid");
  const KernelQuadrature quad{cfg.steady_subsamples};
  const detail::integrating_factor factor(g.h());

  SteadyResult res;
  UDensity p = normalize(initial);
  for (int it = 1; it <= cfg.max_iters; ++it) {
    UDensity k = collision_kernel(p, p, quad);
    std::vector<double> next = factor.solve(k.values());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = (1.0 - cfg.alpha) * p[i] + cfg.alpha * next[i];
    UDensity q = normalize(UDensity(g, std::move(next)));
    double change = l1_distance(p, q);
    p = std::move(q);
    res.change_history.push_back(change);
    res.iterations = it;
    res.last_change = change;
    if (change < cfg.tol_fixed_point) {
      res.density = std::move(p);
      return res;
    }
  }
  throw convergence_error("steady state: L1 change " + csv::format_double(res.last_change) + " after " +
                          std::to_string(cfg.max_iters) + " iterations");
}

inline SteadyResult solve_steady(const SolverConfig& cfg) {
  cfg.validate();
  return solve_steady(cfg, initial_density(cfg.grid(), cfg.initial, cfg.initial_point));
}

struct SteadyResidual {
  double sup_norm = 0.0;
  double l1_norm = 0.0;
};

/// Derivative at every node: fourth-order central differences in the interior,
/// second-order central next to the ends, second-order one-sided at the ends.
inline std::vector<double> node_derivative(std::span<const double> p, double h) {
  const std::size_t n = p.size() - 1;
  std::vector<double> d(n + 1, 0.0);
  if (n < 4) throw domain_error("derivative needs at least five nodes");
  d[0] = (-3.0 * p[0] + 4.0 * p[1] - p[2]) / (2.0 * h);
  d[n] = (3.0 * p[n] - 4.0 * p[n - 1] + p[n - 2]) / (2.0 * h);
  d[1] = (p[2] - p[0]) / (2.0 * h);
  d[n - 1] = (p[n] - p[n - 2]) / (2.0 * h);
  for (std::size_t i = 2; i + 2 <= n; ++i) d[i] = (p[i - 2] - 8.0 * p[i - 1] + 8.0 * p[i + 1] - p[i + 2]) / (12.0 * h);
  return d;
}

/// Norms of r(u) = p(u) + p'(u) - K[p,p](u).
inline SteadyResidual residual_steady(const UDensity& p, KernelQuadrature quad = {2}) {
  const UGrid& g = p.grid();
  UDensity k = collision_kernel(p, p, quad);
  std::vector<double> d = node_derivative(p.values(), g.h());
  SteadyResidual r;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double v = std::abs(p[i] + d[i] - k[i]);
    r.sup_norm = std::max(r.sup_norm, v);
    r.l1_norm += g.weight(i) * v;
  }
  return r;
}

// steady-state diagnostics

inline double peak_location(const UDensity& p) {
  auto it = std::max_element(p.values().begin(), p.values().end());
  return p.grid().node(static_cast<std::size_t>(it - p.values().begin()));
}

/// Sign changes of the forward differences, ignoring differences of size <= floor.
inline int derivative_sign_changes(const UDensity& p, double floor = 1e-10) {
  int changes = 0;
  int last = 0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    double d = p[i + 1] - p[i];
    if (std::abs(d) <= floor) continue;
    int s = d > 0.0 ? 1 : -1;
    if (last != 0 && s != last) ++changes;
    last = s;
  }
  return changes;
}

/// Least-squares slope of log p(u) over the nodes in [a, b] with p > 0.
inline double tail_log_slope(const UDensity& p, double a = 10.0, double b = 20.0) {
  const UGrid& g = p.grid();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t cnt = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double u = g.node(i);
    if (u < a || u > b || !(p[i] > 0.0)) continue;
    double y = std::log(p[i]);
    sx += u;
    sy += y;
    sxx += u * u;
    sxy += u * y;
    ++cnt;
  }
  if (cnt < 2) throw domain_error("tail fit window holds fewer than two positive nodes");
  double c = static_cast<double>(cnt);
  return (c * sxy - sx * sy) / (c * sxx - sx * sx);
}

/// E[combine(u1, u2)] for independent u1, u2 ~ p, by direct node-pair summation.
inline double expected_combine(const UDensity& p) {
  const UGrid& g = p.grid();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double mi = g.weight(i) * p[i];
    if (mi == 0.0) continue;
    double row = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) row += g.weight(j) * p[j] * detail::combine_unchecked(g.node(i), g.node(j));
    s += mi * row;
  }
  return s;
}

// ---------------------------------------------------------------------------
// transient

struct TransientOptions {
  /// Store every n-th step (the final state is always stored).
  std::size_t snapshot_every = 1;
};

struct TransientSolution {
  std::vector<double> tau;
  std::vector<UDensity> densities;
  GammaTrajectory gamma;
  double dtau = 0.0;
  double max_mass_drift = 0.0;
  double lost_mass = 0.0;

  /// Index of the snapshot at time t; throws when t is not a stored time.
  std::size_t index_of(double t) const {
    for (std::size_t s = 0; s < tau.size(); ++s)
      if (std::abs(tau[s] - t) <= 1e-9 * std::max(1.0, std::abs(t))) return s;
    throw domain_error("no transient snapshot at tau = " + csv::format_double(t));
  }
};

/// Splits each step into an exact drift by dtau and an explicit collision
/// update p <- p + dtau g (K[p,p] - p) with g taken at the step midpoint,
/// then renormalizes. g must cover [0, tau_end].
inline TransientSolution evolve_transient(const UDensity& p0, const GammaTrajectory& g, double tau_end,
                                          const SolverConfig& cfg, TransientOptions opts = {}) {
  cfg.validate();
  const UGrid grid = cfg.grid();
  if (!(p0.grid() == grid)) throw config_error("initial density is not on the solver grid");
  if (std::abs(mass(p0) - 1.0) > 1e-9) throw domain_error("initial density must be normalized");
  if (!(tau_end >= 0.0)) throw domain_error("tau_end must be nonnegative");
  if (opts.snapshot_every < 1) throw config_error("snapshot_every must be >= 1");
  double steps_real = tau_end / cfg.dtau;
  double steps_rounded = std::round(steps_real);
  if (std::abs(steps_real - steps_rounded) > 1e-9 * std::max(1.0, steps_rounded))
    throw config_error("tau_end must be a whole multiple of dtau");
  const std::size_t steps = static_cast<std::size_t>(steps_rounded);
  g.value_at(tau_end); // coverage check

  const KernelQuadrature quad{cfg.transient_subsamples};
  TransientSolution sol;
  sol.gamma = g;
  sol.dtau = cfg.dtau;
  UDensity p = p0;
  sol.tau.push_back(0.0);
  sol.densities.push_back(p);

  for (std::size_t step = 0; step < steps; ++step) {
    const double t0 = static_cast<double>(step) * cfg.dtau;
    DriftResult dr = drift_shift(p, cfg.dtau, {cfg.lost_mass_cap, sol.lost_mass});
    sol.lost_mass += dr.lost_mass;
    p = std::move(dr.density);

    const double gm = g.value_at(std::min(tau_end, t0 + 0.5 * cfg.dtau));
    if (gm > 0.0) {
      UDensity k = collision_kernel(p, p, quad);
      const double rate = cfg.dtau * gm;
      std::vector<double> next(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) {
        double v = p[i] + rate * (k[i] - p[i]);
        if (v < -1e-12) throw instability_error("transient step produced value " + csv::format_double(v));
        next[i] = std::max(0.0, v);
      }
      p = UDensity(grid, std::move(next));
    }
    const double m = mass(p);
    sol.max_mass_drift = std::max(sol.max_mass_drift, std::abs(m - 1.0));
    if (std::abs(m - 1.0) > cfg.tol_mass)
      throw instability_error("mass drift " + csv::format_double(m - 1.0) + " in one transient step");
    p = normalize(std::move(p));

    const std::size_t done = step + 1;
    if (done % opts.snapshot_every == 0 || done == steps) {
      sol.tau.push_back(static_cast<double>(done) * cfg.dtau);
      sol.densities.push_back(p);
    }
  }
  return sol;
}

// ---------------------------------------------------------------------------
// time-ordered intermediate distributions

/// p_m(u; tau, tau_1, ..., tau_m) for times = {tau, tau_1, ..., tau_m}, which
/// must be nonincreasing and stored in the solution:
///   p_1 = p(.; tau_1) drifted by tau - tau_1,
///   p_m = K[p(.; tau_1), p_{m-1}(.; tau_1, ..., tau_m)] drifted by tau - tau_1.
inline UDensity pm_recursion(const TransientSolution& sol, const std::vector<double>& times, int m_max = 3,
                             KernelQuadrature quad = {}, double lost_mass_cap = 1e-10) {
  if (times.size() < 2) throw domain_error("pm_recursion needs tau and at least one earlier time");
  const int m = static_cast<int>(times.size()) - 1;
  if (m > m_max) throw domain_error("pm_recursion order above m_max");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (times[i] > times[i - 1]) throw domain_error("pm_recursion times must satisfy tau >= tau_1 >= ... >= tau_m");
  DriftOptions dopt{lost_mass_cap, 0.0};
  UDensity q = drift_shift(sol.densities[sol.index_of(times[m])], times[m - 1] - times[m], dopt).density;
  for (int l = m - 1; l >= 1; --l) {
    const UDensity& pl = sol.densities[sol.index_of(times[l])];
    q = drift_shift(collision_kernel(pl, q, quad), times[l - 1] - times[l], dopt).density;
  }
  return q;
}

struct ResummedResidual {
  std::vector<double> tau;
  /// L1 mismatch of g p against the resummed (two-term) memory equation.
  std::vector<double> resummed_l1;
  /// truncated_l1[m-1][j]: L1 mismatch against the order-by-order sum cut at order m.
  std::vector<std::vector<double>> truncated_l1;
};

/// Evaluates, at every snapshot tau_j,
///   lhs = g(tau) p(u; tau)
///   rhs = exp(-G(tau)) { g0 p(u - tau; 0)
///           + int_0^tau dtau1 g(tau1) p_1(u; tau, tau1)
///           + int_0^tau dtau1 g(tau1)^2 exp(G(tau1)) K[p,p](u - (tau - tau1); tau1) },
/// with G the running integral of g, and the order-by-order form in which the
/// two integrals are replaced by sum_{m <= M} int g(tau1)...g(tau_m) p_m.
/// The seed term carries the initial localized fraction; at tau = 0 both
/// sides equal g0 p0. The tau1 integrals use the trapezoid rule on snapshots.
inline ResummedResidual residual_resummed(const TransientSolution& sol, const GammaTrajectory& g, int m_max,
                                          KernelQuadrature quad = {}, double lost_mass_cap = 1e-10) {
  const std::size_t ns = sol.tau.size();
  if (ns < 2) throw domain_error("residual_resummed needs at least two snapshots");
  if (m_max < 1 || m_max > 3) throw domain_error("m_max must lie in 1..3");
  const UGrid grid = sol.densities.front().grid();
  const double spacing = sol.tau[1] - sol.tau[0];
  for (std::size_t s = 1; s < ns; ++s)
    if (std::abs(sol.tau[s] - sol.tau[s - 1] - spacing) > 1e-9 * spacing)
      throw domain_error("residual_resummed needs uniformly spaced snapshots");
  if (spacing > 10.0 * sol.dtau * (1.0 + 1e-12))
    throw domain_error("snapshots too sparse for the tau1 quadrature (spacing > 10 dtau)");

  const std::size_t nu = grid.size();
  DriftOptions dopt{lost_mass_cap, 0.0};
  auto shifted = [&](const UDensity& d, double delta) { return drift_shift(d, delta, dopt).density; };

  std::vector<double> gv(ns), big_g(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    gv[s] = g.value_at(sol.tau[s]);
    big_g[s] = g.integral(sol.tau[s]);
  }
  const double seed = g.value_at(0.0);

  std::vector<UDensity> kpp;
  kpp.reserve(ns);
  for (const auto& d : sol.densities) kpp.push_back(collision_kernel(d, d, quad));

  // Time convolution  out_j = sum_l w_jl coef_l shift(f_l, tau_j - tau_l).
  auto convolve = [&](const std::vector<UDensity>& f, const std::vector<double>& coef) {
    std::vector<std::vector<double>> out(ns, std::vector<double>(nu, 0.0));
    for (std::size_t j = 1; j < ns; ++j) {
      for (std::size_t l = 0; l <= j; ++l) {
        double w = (l == 0 || l == j) ? 0.5 * spacing : spacing;
        double c = w * coef[l];
        if (c == 0.0) continue;
        UDensity sh = shifted(f[l], sol.tau[j] - sol.tau[l]);
        for (std::size_t i = 0; i < nu; ++i) out[j][i] += c * sh[i];
      }
    }
    return out;
  };

  std::vector<std::vector<double>> seed_term(ns, std::vector<double>(nu, 0.0));
  for (std::size_t j = 0; j < ns; ++j) {
    UDensity sh = shifted(sol.densities[0], sol.tau[j]);
    for (std::size_t i = 0; i < nu; ++i) seed_term[j][i] = seed * sh[i];
  }

  std::vector<double> coef_single(ns), coef_pair(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    coef_single[s] = gv[s];
    coef_pair[s] = gv[s] * gv[s] * std::exp(big_g[s]);
  }
  auto single = convolve(sol.densities, coef_single);
  auto pair = convolve(kpp, coef_pair);

  auto l1_mismatch = [&](std::size_t j, const std::vector<double>& braces) {
    const double pre = std::exp(-big_g[j]);
    double s = 0.0;
    for (std::size_t i = 0; i < nu; ++i) s += grid.weight(i) * std::abs(gv[j] * sol.densities[j][i] - pre * braces[i]);
    return s;
  };

  ResummedResidual out;
  out.tau = sol.tau;
  out.resummed_l1.resize(ns);
  for (std::size_t j = 0; j < ns; ++j) {
    std::vector<double> b(nu);
    for (std::size_t i = 0; i < nu; ++i) b[i] = seed_term[j][i] + single[j][i] + pair[j][i];
    out.resummed_l1[j] = l1_mismatch(j, b);
  }

  // Order-by-order: H_1 = single, H_m(tau) = int g(tau1) shift(K[p(tau1), H_{m-1}(tau1)], tau - tau1).
  std::vector<std::vector<double>> partial = seed_term;
  std::vector<std::vector<double>> level = single;
  out.truncated_l1.assign(static_cast<std::size_t>(m_max), std::vector<double>(ns, 0.0));
  for (int m = 1; m <= m_max; ++m) {
    if (m > 1) {
      std::vector<UDensity> inner;
      inner.reserve(ns);
      for (std::size_t l = 0; l < ns; ++l)
        inner.push_back(collision_kernel(sol.densities[l], UDensity(grid, level[l]), quad));
      level = convolve(inner, coef_single);
    }
    for (std::size_t j = 0; j < ns; ++j) {
      for (std::size_t i = 0; i < nu; ++i) partial[j][i] += level[j][i];
      out.truncated_l1[static_cast<std::size_t>(m - 1)][j] = l1_mismatch(j, partial[j]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV writers

inline void write_transient_csv(std::ostream& out, const TransientSolution& sol,
                                const std::vector<std::string>& provenance = {}) {
  csv::write_comments(out, provenance);
  out << "tau,u,p\n";
  for (std::size_t s = 0; s < sol.tau.size(); ++s) {
    const UDensity& d = sol.densities[s];
    for (std::size_t i = 0; i < d.size(); ++i)
      out << csv::format_double(sol.tau[s]) << ',' << csv::format_double(d.grid().node(i)) << ','
          << csv::format_double(d[i]) << '\n';
  }
}

inline void write_residual_csv(std::ostream& out, const std::vector<double>& tau, const std::vector<double>& l1,
                               const std::vector<std::string>& provenance = {}) {
  csv::write_comments(out, provenance);
  out << "tau,residual_l1\n";
  for (std::size_t j = 0; j < tau.size(); ++j)
    out << csv::format_double(tau[j]) << ',' << csv::format_double(l1[j]) << '\n';
}

} // namespace mfloc
