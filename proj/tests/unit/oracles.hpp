#pragma once

// Reference computations that do not share code paths with the library.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

/// Composite Simpson on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

/// Mass of the pair-collision image of analytic densities p, q: a plain
/// midpoint 2-D quadrature of p(u1) q(u2) over [0, L]^2.
inline double pair_mass(const std::function<double(double)>& p, const std::function<double(double)>& q, double L,
                        int n) {
  const double h = L / n;
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s += p((i + 0.5) * h) * q((j + 0.5) * h);
  return s * h * h;
}

/// K[p,p](u) by the change of variables u1 = u + t, u2 = u (u + t) / t:
///   K(u) = int_0^inf dt p(u + t) p(u (u + t) / t) (u + t)^2 / t^2,
/// integrated in s = log t so both ends decay.
inline double kernel_change_of_variables(const std::function<double(double)>& p, double u) {
  auto integrand = [&](double s) {
    const double t = std::exp(s);
    const double u1 = u + t;
    const double u2 = u * u1 / t;
    return p(u1) * p(u2) * u1 * u1 / (t * t) * t;
  };
  return simpson(integrand, -40.0, 5.0, 200000);
}

/// Pairs (u1, u2) drawn from a sampler, mapped through the harmonic rule.
inline std::vector<double> sampled_combines(const std::function<double(std::mt19937_64&)>& draw, int n,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    double a = draw(rng), b = draw(rng);
    out.push_back(a * b / (a + b));
  }
  return out;
}

/// Plain second-order central difference with one-sided ends.
inline std::vector<double> central_diff(const std::vector<double>& v, double h) {
  const std::size_t n = v.size();
  std::vector<double> d(n);
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (v[i + 1] - v[i - 1]) / (2 * h);
  d[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h);
  d[n - 1] = (3 * v[n - 1] - 4 * v[n - 2] + v[n - 3]) / (2 * h);
  return d;
}

} // namespace oracle
