#pragma once

// Distributions of dimensionless squared localization lengths u on a uniform
// grid [0, u_max], and the operators the kinetics is built from.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mfloc/csv.hpp"
#include "mfloc/error.hpp"

namespace mfloc {

/// Uniform nodes u_i = i*h, i = 0..n_bins, with h = u_max / n_bins.
class UGrid {
public:
  UGrid() = default;

  UGrid(double u_max, std::size_t n_bins) : u_max_(u_max), n_bins_(n_bins) {
    if (!(u_max > 0.0) || !std::isfinite(u_max)) throw config_error("grid u_max must be positive and finite");
    if (n_bins < 2) throw config_error("grid needs at least two bins");
    h_ = u_max_ / static_cast<double>(n_bins_);
  }

  /// Grid from an extent and a target spacing; u_max/h must be (close to) an integer.
  static UGrid from_spacing(double u_max, double h) {
    if (!(h > 0.0)) throw config_error("grid spacing must be positive");
    double bins = u_max / h;
    double rounded = std::round(bins);
    if (rounded < 2.0 || std::abs(bins - rounded) > 1e-9 * rounded)
      throw config_error("u_max must be an integer multiple of h");
    return UGrid(u_max, static_cast<std::size_t>(rounded));
  }

  double u_max() const { return u_max_; }
  double h() const { return h_; }
  std::size_t n_bins() const { return n_bins_; }
  std::size_t size() const { return n_bins_ + 1; }
  double node(std::size_t i) const { return i == n_bins_ ? u_max_ : static_cast<double>(i) * h_; }

  /// Trapezoid weight of node i.
  double weight(std::size_t i) const { return (i == 0 || i == n_bins_) ? 0.5 * h_ : h_; }

  friend bool operator==(const UGrid& a, const UGrid& b) {
    return a.n_bins_ == b.n_bins_ && a.u_max_ == b.u_max_;
  }

private:
  double u_max_ = 0.0;
  std::size_t n_bins_ = 0;
  double h_ = 0.0;
};

/// Nonnegative nodal values of a density on a UGrid. The continuous object it
/// stands for is the piecewise-linear interpolant; mass is its trapezoid integral.
class UDensity {
public:
  UDensity() = default;

  explicit UDensity(UGrid grid) : grid_(grid), values_(grid.size(), 0.0) {}

  UDensity(UGrid grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.size()) throw domain_error("density size does not match its grid");
    for (double v : values_)
      if (!(v >= 0.0) || !std::isfinite(v)) throw domain_error("density values must be finite and nonnegative");
  }

  const UGrid& grid() const { return grid_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  std::size_t size() const { return values_.size(); }

private:
  UGrid grid_;
  std::vector<double> values_;
};

inline void require_same_grid(const UDensity& a, const UDensity& b) {
  if (!(a.grid() == b.grid())) throw domain_error("densities live on different grids");
}

// ---------------------------------------------------------------------------
// harmonic combination

/// u1*u2/(u1+u2). An infinite argument stands for a delocalized partner and
/// leaves the other value unchanged; combine(0, 0) is 0.
inline double combine(double u1, double u2) {
  if (!(u1 >= 0.0) || !(u2 >= 0.0)) throw domain_error("combine: arguments must be nonnegative");
  if (std::isinf(u1)) return u2;
  if (std::isinf(u2)) return u1;
  double s = u1 + u2;
  if (s == 0.0) return 0.0;
  return u1 * u2 / s;
}

namespace detail {

// Unchecked version for inner loops where both arguments are finite and >= 0.
inline double combine_unchecked(double u1, double u2) {
  double s = u1 + u2;
  return s > 0.0 ? u1 * u2 / s : 0.0;
}

// Linear (cloud-in-cell) deposit of `amount` at position x (in node units,
// 0 <= x <= n_bins) onto acc.
inline void deposit_linear(std::vector<double>& acc, std::size_t n_bins, double x, double amount) {
  double fl = std::floor(x);
  std::size_t k = static_cast<std::size_t>(fl);
  if (k >= n_bins) {
    k = n_bins - 1;
    fl = static_cast<double>(k);
  }
  double t = x - fl;
  acc[k] += amount * (1.0 - t);
  acc[k + 1] += amount * t;
}

struct mass_samples {
  std::vector<double> position; // in units of h
  std::vector<double> mass;
};

// Quadrature nodes for a density: `sub` equal sub-cells per grid cell, values
// linearly interpolated, trapezoid weights on the refined nodes. For sub = 1
// these are the grid nodes themselves. Zero-mass samples are dropped.
inline mass_samples sample_masses(const UDensity& p, int sub) {
  const UGrid& g = p.grid();
  const std::size_t n = g.n_bins();
  const std::size_t nf = n * static_cast<std::size_t>(sub);
  const double hf = g.h() / sub;
  mass_samples s;
  s.position.reserve(nf + 1);
  s.mass.reserve(nf + 1);
  for (std::size_t f = 0; f <= nf; ++f) {
    std::size_t cell = std::min(f / static_cast<std::size_t>(sub), n - 1);
    double t = static_cast<double>(f - cell * sub) / sub;
    double v = (1.0 - t) * p[cell] + t * p[cell + 1];
    double w = (f == 0 || f == nf) ? 0.5 * hf : hf;
    double m = v * w;
    if (m == 0.0) continue;
    s.position.push_back(static_cast<double>(f) / sub);
    s.mass.push_back(m);
  }
  return s;
}

inline UDensity from_node_masses(const UGrid& g, std::vector<double> acc) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] /= g.weight(i);
  return UDensity(g, std::move(acc));
}

} // namespace detail

/// Resolution of the pair-binning quadrature behind collision_kernel.
struct KernelQuadrature {
  /// Quadrature points per grid cell and dimension. 1 is plain node-pair
  /// binning; larger values sample the linear interpolant more finely.
  int subsamples = 1;
};

/// Collision kernel K[p,q](u) = integral of p(u1) q(u2) delta(u - combine(u1,u2)).
///
/// Every quadrature pair deposits its weight at combine(u1,u2) with linear
/// splitting between the two neighbouring nodes. Deposition conserves weight
/// and the result never leaves the grid (combine <= min(u1,u2) <= u_max), so
/// mass(K) = mass(p) * mass(q) up to rounding. Summation order is fixed, so the
/// output is bit-reproducible.
inline UDensity collision_kernel(const UDensity& p, const UDensity& q, KernelQuadrature quad = {}) {
  require_same_grid(p, q);
  if (quad.subsamples < 1) throw config_error("kernel subsamples must be >= 1");
  const UGrid& g = p.grid();
  const std::size_t n = g.n_bins();
  std::vector<double> acc(g.size(), 0.0);

  const bool self = std::equal(p.values().begin(), p.values().end(), q.values().begin());
  auto a = detail::sample_masses(p, quad.subsamples);
  if (self) {
    // K[p,p]: each unordered pair once, off-diagonal pairs doubled.
    const std::size_t m = a.mass.size();
    for (std::size_t i = 0; i < m; ++i) {
      const double ui = a.position[i];
      const double mi = a.mass[i];
      detail::deposit_linear(acc, n, detail::combine_unchecked(ui, ui), mi * mi);
      const double two_mi = 2.0 * mi;
      for (std::size_t j = i + 1; j < m; ++j) {
        const double c = detail::combine_unchecked(ui, a.position[j]);
        detail::deposit_linear(acc, n, c, two_mi * a.mass[j]);
      }
    }
  } else {
    auto b = detail::sample_masses(q, quad.subsamples);
    for (std::size_t i = 0; i < a.mass.size(); ++i) {
      const double ui = a.position[i];
      const double mi = a.mass[i];
      for (std::size_t j = 0; j < b.mass.size(); ++j) {
        const double c = detail::combine_unchecked(ui, b.position[j]);
        detail::deposit_linear(acc, n, c, mi * b.mass[j]);
      }
    }
  }
  return detail::from_node_masses(g, std::move(acc));
}

// ---------------------------------------------------------------------------
// quadratures

inline double mass(const UDensity& p) {
  const UGrid& g = p.grid();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += g.weight(i) * p[i];
  return s;
}

/// Trapezoid quadrature of u^k p(u) for k in {0, 1, 2}.
inline double moment(const UDensity& p, int k) {
  if (k < 0 || k > 2) throw domain_error("moment order must be 0, 1 or 2");
  const UGrid& g = p.grid();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double u = g.node(i);
    double f = k == 0 ? 1.0 : (k == 1 ? u : u * u);
    s += g.weight(i) * f * p[i];
  }
  return s;
}

inline UDensity normalize(UDensity p) {
  double m = mass(p);
  if (!(m > 0.0)) throw domain_error("cannot normalize a density of zero mass");
  for (double& v : p.values()) v /= m;
  return p;
}

/// Laplace transform: integral of p(u) exp(-kappa u), trapezoid rule.
inline double laplace(const UDensity& p, double kappa) {
  if (!(kappa >= 0.0)) throw domain_error("laplace: kappa must be nonnegative");
  const UGrid& g = p.grid();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += g.weight(i) * p[i] * std::exp(-kappa * g.node(i));
  return s;
}

/// L1 distance between two densities on the same grid (trapezoid rule).
inline double l1_distance(const UDensity& a, const UDensity& b) {
  require_same_grid(a, b);
  const UGrid& g = a.grid();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += g.weight(i) * std::abs(a[i] - b[i]);
  return s;
}

/// Cumulative mass of the piecewise-linear interpolant up to u (unnormalized).
class UCdf {
public:
  explicit UCdf(const UDensity& p) : p_(p), cum_(p.size(), 0.0) {
    const double h = p.grid().h();
    for (std::size_t i = 1; i < p.size(); ++i) cum_[i] = cum_[i - 1] + 0.5 * h * (p[i - 1] + p[i]);
  }

  double total() const { return cum_.back(); }

  double operator()(double u) const {
    const UGrid& g = p_.grid();
    if (u <= 0.0) return 0.0;
    if (u >= g.u_max()) return cum_.back();
    double x = u / g.h();
    std::size_t k = std::min(static_cast<std::size_t>(x), g.n_bins() - 1);
    double t = x - static_cast<double>(k);
    return cum_[k] + g.h() * (p_[k] * t + 0.5 * (p_[k + 1] - p_[k]) * t * t);
  }

  /// Smallest u with cdf(u) = fraction * total(), fraction in [0, 1].
  double inverse(double fraction) const {
    const UGrid& g = p_.grid();
    double target = std::clamp(fraction, 0.0, 1.0) * cum_.back();
    auto it = std::lower_bound(cum_.begin() + 1, cum_.end(), target);
    if (it == cum_.end()) return g.u_max();
    std::size_t k = static_cast<std::size_t>(it - cum_.begin()) - 1;
    double rem = (target - cum_[k]) / g.h();
    double a = 0.5 * (p_[k + 1] - p_[k]);
    double b = p_[k];
    double t;
    // Solve a t^2 + b t = rem on [0, 1] without cancellation.
    if (std::abs(a) < 1e-300) {
      t = b > 0.0 ? rem / b : 0.0;
    } else {
      double disc = std::max(0.0, b * b + 4.0 * a * rem);
      t = 2.0 * rem / (b + std::sqrt(disc));
    }
    return g.node(k) + std::clamp(t, 0.0, 1.0) * g.h();
  }

private:
  UDensity p_;
  std::vector<double> cum_;
};

// ---------------------------------------------------------------------------
// drift

struct DriftOptions {
  /// Largest tolerated lost mass, relative to the input mass, counting
  /// `prior_lost_mass` carried over from earlier shifts.
  double lost_mass_cap = 1e-10;
  double prior_lost_mass = 0.0;
};

struct DriftResult {
  UDensity density;
  /// Mass carried past u_max by this shift.
  double lost_mass = 0.0;
  /// Non-empty when mass was lost.
  std::string warning;
};

/// Translates p by +delta in u. Node masses are carried to u_i + delta and
/// redeposited linearly, so mass(out) + lost_mass = mass(in) up to rounding;
/// shifts that are whole multiples of h move nodes exactly. Nothing enters
/// below u = delta.
inline DriftResult drift_shift(const UDensity& p, double delta, DriftOptions opts = {}) {
  if (!(delta >= 0.0) || !std::isfinite(delta)) throw domain_error("drift_shift: delta must be nonnegative");
  const UGrid& g = p.grid();
  const std::size_t n = g.n_bins();
  DriftResult res{UDensity(g), 0.0, {}};
  if (delta == 0.0) {
    res.density = p;
    return res;
  }
  std::vector<double> acc(g.size(), 0.0);
  const double shift = delta / g.h();
  const double whole = std::round(shift);
  const double in_mass = mass(p);
  double lost = 0.0;
  if (std::abs(shift - whole) <= 1e-9 * std::max(1.0, whole)) {
    const std::size_t k = static_cast<std::size_t>(whole);
    for (std::size_t i = 0; i < p.size(); ++i) {
      double m = g.weight(i) * p[i];
      if (i + k <= n)
        acc[i + k] += m;
      else
        lost += m;
    }
  } else {
    const double nb = static_cast<double>(n);
    for (std::size_t i = 0; i < p.size(); ++i) {
      double m = g.weight(i) * p[i];
      if (m == 0.0) continue;
      double x = static_cast<double>(i) + shift;
      if (x > nb)
        lost += m;
      else
        detail::deposit_linear(acc, n, x, m);
    }
  }
  res.density = detail::from_node_masses(g, std::move(acc));
  res.lost_mass = lost;
  if (lost > 0.0) {
    res.warning = "drift_shift: mass " + csv::format_double(lost) + " moved past u_max = " +
                  csv::format_double(g.u_max());
  }
  double cumulative = lost + opts.prior_lost_mass;
  if (cumulative > opts.lost_mass_cap * in_mass && cumulative > 0.0) {
    throw instability_error("cumulative lost mass " + csv::format_double(cumulative) +
                            " exceeds cap; enlarge u_max");
  }
  return res;
}

// ---------------------------------------------------------------------------
// standard densities

namespace densities {

/// u exp(-u), normalized on the grid.
inline UDensity gamma2(const UGrid& g) {
  UDensity p(g);
  for (std::size_t i = 0; i < g.size(); ++i) p[i] = g.node(i) * std::exp(-g.node(i));
  return normalize(std::move(p));
}

/// exp(-u), normalized on the grid.
inline UDensity exponential(const UGrid& g) {
  UDensity p(g);
  for (std::size_t i = 0; i < g.size(); ++i) p[i] = std::exp(-g.node(i));
  return normalize(std::move(p));
}

/// Unit mass concentrated on the node nearest to u0.
inline UDensity point_mass(const UGrid& g, double u0) {
  if (!(u0 >= 0.0) || u0 > g.u_max()) throw domain_error("point mass outside the grid");
  std::size_t k = static_cast<std::size_t>(std::llround(u0 / g.h()));
  k = std::min(k, g.n_bins());
  UDensity p(g);
  p[k] = 1.0 / g.weight(k);
  return p;
}

} // namespace densities

// ---------------------------------------------------------------------------
// physical units

enum class Conversion { xi2_to_u, u_to_xi2, t_to_tau, tau_to_t };

/// Physical parameters. Gamma = mu * (N/V) * v is the effective per-particle
/// measurement rate; u = xi^2 Gamma / (2D) and tau = Gamma t.
struct UnitsMap {
  double mu = 1.0;
  double number_density = 1.0;
  double box_volume = 1.0;
  double diffusion = 1.0;

  double gamma() const {
    double g = mu * number_density * box_volume;
    if (!(g > 0.0) || !std::isfinite(g)) throw domain_error("measurement rate Gamma must be positive");
    return g;
  }

  void check() const {
    gamma();
    if (!(diffusion > 0.0) || !std::isfinite(diffusion)) throw domain_error("diffusion constant must be positive");
  }

  /// Physical squared length corresponding to u = 1, i.e. 2D/Gamma.
  double characteristic_xi2() const {
    check();
    return 2.0 * diffusion / gamma();
  }
};

inline double units_convert(const UnitsMap& map, double value, Conversion direction) {
  map.check();
  const double g = map.gamma();
  switch (direction) {
  case Conversion::xi2_to_u: return value * g / (2.0 * map.diffusion);
  case Conversion::u_to_xi2: return value * 2.0 * map.diffusion / g;
  case Conversion::t_to_tau: return value * g;
  case Conversion::tau_to_t: return value / g;
  }
  throw domain_error("unknown conversion");
}

struct RegimeReport {
  double ratio = 0.0; // box diameter / typical localization length
  double threshold = 0.1;
  bool pass = false;
  std::string message;
};

/// Advisory check of the narrow-box assumption B << xi_typ. A ratio at or
/// above the threshold warns. typical_xi2 <= 0 selects the steady-state scale
/// 2D/Gamma from the map.
inline RegimeReport validate_regime(const UnitsMap& map, double box_diameter, double typical_xi2,
                                    double threshold = 0.1) {
  if (!(box_diameter > 0.0)) throw domain_error("box diameter must be positive");
  double xi2 = typical_xi2 > 0.0 ? typical_xi2 : map.characteristic_xi2();
  RegimeReport r;
  r.threshold = threshold;
  r.ratio = box_diameter / std::sqrt(xi2);
  r.pass = r.ratio < threshold;
  r.message = (r.pass ? "pass: " : "warn: ") + std::string("B/xi = ") + csv::format_double(r.ratio) +
              (r.pass ? " < " : " >= ") + csv::format_double(threshold);
  return r;
}

// ---------------------------------------------------------------------------
// CSV i/o: header `u,p`, one row per node

inline void write_density_csv(std::ostream& out, const UDensity& p, const std::vector<std::string>& provenance = {}) {
  csv::write_comments(out, provenance);
  out << "u,p\n";
  const UGrid& g = p.grid();
  for (std::size_t i = 0; i < p.size(); ++i)
    out << csv::format_double(g.node(i)) << ',' << csv::format_double(p[i]) << '\n';
}

/// Rebuilds grid and values from `u,p` rows; the nodes must form a uniform grid from 0.
inline UDensity density_from_table(const csv::table& t) {
  if (t.header.size() != 2 || t.header[0] != "u" || t.header[1] != "p")
    throw io_error("density csv must have header 'u,p'");
  if (t.rows.size() < 3) throw io_error("density csv needs at least three rows");
  const std::size_t n = t.rows.size() - 1;
  UGrid g(t.rows.back()[0], n);
  std::vector<double> v(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    double u = t.rows[i][0];
    if (std::abs(u - g.node(i)) > 1e-12 * std::max(1.0, g.u_max()))
      throw io_error("density csv nodes are not uniform from 0 (row " + std::to_string(i) + ")");
    v[i] = t.rows[i][1];
  }
  return UDensity(g, std::move(v));
}

inline UDensity read_density_csv(std::istream& in) { return density_from_table(csv::parse(in)); }

} // namespace mfloc
