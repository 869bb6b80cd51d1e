#pragma once

// Two 1-D Gaussian-localized particles, post-selected on a Yes answer to
// "are they closer than the box?". The posterior variances approach the
// harmonic combination of the prior variances as the box shrinks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "mfloc/csv.hpp"
#include "mfloc/error.hpp"

namespace mfloc {

/// How box_diameter maps onto the indicator on r = r1 - r2.
enum class BoxConvention {
  diameter, ///< |r| < B/2: acceptance interval of total width B
  radius,   ///< |r| < B
};

inline BoxConvention parse_box_convention(const std::string& s) {
  if (s == "diameter") return BoxConvention::diameter;
  if (s == "radius") return BoxConvention::radius;
  throw config_error("unknown box convention '" + s + "' (expected diameter or radius)");
}

inline std::string to_string(BoxConvention c) { return c == BoxConvention::diameter ? "diameter" : "radius"; }

struct GaussPair {
  double xi1_sq = 1.0;
  double xi2_sq = 1.0;
  double box_diameter = 0.1;
  /// Starting points per axis; doubled until the variances settle.
  int quad_points = 64;
  /// Window half-width for r1, in units of min(xi1, xi2).
  double integration_halfwidth = 10.0;
  /// Mean of particle 2 (particle 1 sits at 0).
  double offset = 0.0;
  BoxConvention convention = BoxConvention::diameter;
  double rel_tol = 1e-6;
  int max_doublings = 12;

  double half_box() const { return convention == BoxConvention::diameter ? 0.5 * box_diameter : box_diameter; }

  void validate() const {
    if (!(xi1_sq > 0.0 && xi2_sq > 0.0 && std::isfinite(xi1_sq) && std::isfinite(xi2_sq)))
      throw domain_error("squared localization lengths must be positive and finite");
    if (!(box_diameter > 0.0 && std::isfinite(box_diameter))) throw domain_error("box_diameter must be positive");
    if (quad_points < 8) throw domain_error("quad_points must be at least 8");
    if (!(integration_halfwidth >= 8.0)) throw domain_error("integration window must cover at least 8 sigma");
    if (!std::isfinite(offset)) throw domain_error("offset must be finite");
    if (!(rel_tol > 0.0)) throw domain_error("rel_tol must be positive");
  }
};

struct PosteriorMoments {
  double mean1 = 0.0;
  double mean2 = 0.0;
  double var1 = 0.0;
  double var2 = 0.0;
  double var_rel = 0.0;
  /// Probability of the Yes outcome.
  double norm = 0.0;
  /// Points per axis at the accepted resolution.
  int points = 0;
};

/// Inverse variances add.
inline double contraction_limit(double xi1_sq, double xi2_sq) {
  if (!(xi1_sq > 0.0 && xi2_sq > 0.0)) throw domain_error("contraction_limit needs positive inputs");
  if (std::isinf(xi2_sq)) return xi1_sq;
  if (std::isinf(xi1_sq)) return xi2_sq;
  return xi1_sq * xi2_sq / (xi1_sq + xi2_sq);
}

namespace detail {

// Tensor trapezoid in (r1, r) with r2 = r1 - r; unit Jacobian, and the
// indicator edges |r| = a fall on grid lines.
inline PosteriorMoments gauss_moments_at(const GaussPair& pair, int n) {
  const double a = pair.half_box();
  const double s1 = std::sqrt(pair.xi1_sq);
  const double s2 = std::sqrt(pair.xi2_sq);
  // The posterior is no wider than the narrower prior, centred between the
  // two means; r2 stays within a of r1.
  const double half = pair.integration_halfwidth * std::min(s1, s2) + std::abs(pair.offset) + a;
  const double lo1 = -half, hi1 = half;
  const double h1 = (hi1 - lo1) / n;
  const double hr = 2.0 * a / n;
  const double c1 = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * s1);
  const double c2 = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * s2);

  std::vector<double> r1(n + 1), w1(n + 1), f1(n + 1);
  for (int i = 0; i <= n; ++i) {
    r1[i] = lo1 + h1 * i;
    w1[i] = (i == 0 || i == n) ? 0.5 * h1 : h1;
    f1[i] = c1 * std::exp(-0.5 * r1[i] * r1[i] / pair.xi1_sq);
  }
  double z = 0.0, m1 = 0.0, m2 = 0.0, mr = 0.0, q1 = 0.0, q2 = 0.0, qr = 0.0;
  for (int j = 0; j <= n; ++j) {
    const double r = -a + hr * j;
    const double wr = (j == 0 || j == n) ? 0.5 * hr : hr;
    for (int i = 0; i <= n; ++i) {
      const double x2 = r1[i] - r - pair.offset;
      const double w = wr * w1[i] * f1[i] * c2 * std::exp(-0.5 * x2 * x2 / pair.xi2_sq);
      const double v2 = r1[i] - r;
      z += w;
      m1 += w * r1[i];
      m2 += w * v2;
      mr += w * r;
      q1 += w * r1[i] * r1[i];
      q2 += w * v2 * v2;
      qr += w * r * r;
    }
  }
  if (!(z > 1e-300)) throw domain_error("acceptance norm below 1e-300: box lies far in the tail");
  PosteriorMoments out;
  out.norm = z;
  out.mean1 = m1 / z;
  out.mean2 = m2 / z;
  const double mrel = mr / z;
  out.var1 = q1 / z - out.mean1 * out.mean1;
  out.var2 = q2 / z - out.mean2 * out.mean2;
  out.var_rel = qr / z - mrel * mrel;
  out.points = n + 1;
  return out;
}

} // namespace detail

/// Posterior variances of r1, r2 and r1 - r2 given a Yes outcome, with
/// resolution doubling until every variance moves by less than rel_tol.
inline PosteriorMoments posterior_moments(const GaussPair& pair) {
  pair.validate();
  int n = pair.quad_points;
  PosteriorMoments prev = detail::gauss_moments_at(pair, n);
  for (int k = 0; k < pair.max_doublings; ++k) {
    n *= 2;
    PosteriorMoments cur = detail::gauss_moments_at(pair, n);
    auto rel = [](double x, double y) { return std::abs(x - y) / std::max(std::abs(y), 1e-300); };
    if (rel(prev.var1, cur.var1) < pair.rel_tol && rel(prev.var2, cur.var2) < pair.rel_tol &&
        rel(prev.var_rel, cur.var_rel) < pair.rel_tol)
      return cur;
    prev = cur;
  }
  throw convergence_error("gauss oracle quadrature did not settle after " + std::to_string(pair.max_doublings) +
                          " doublings");
}

struct ConvergenceStudy {
  std::vector<double> boxes;
  std::vector<PosteriorMoments> moments;
  /// |var1 - limit| / limit per box.
  std::vector<double> rel_error;
  /// Least-squares slope of log|var1 - limit| against log box.
  double order = 0.0;
};

/// Fits the convergence order of var1 as the box shrinks. Boxes are sorted
/// in decreasing order; a non-monotone error sequence means the quadrature
/// is under-resolved and is reported as a convergence failure.
inline ConvergenceStudy convergence_study(double xi1_sq, double xi2_sq, std::vector<double> boxes,
                                          const GaussPair& base = {}) {
  if (boxes.size() < 2) throw domain_error("convergence_study needs at least two boxes");
  std::sort(boxes.begin(), boxes.end(), std::greater<>());
  if (std::adjacent_find(boxes.begin(), boxes.end()) != boxes.end()) throw domain_error("duplicate box sizes");
  const double limit = contraction_limit(xi1_sq, xi2_sq);
  ConvergenceStudy st;
  st.boxes = boxes;
  for (double b : boxes) {
    GaussPair p = base;
    p.xi1_sq = xi1_sq;
    p.xi2_sq = xi2_sq;
    p.box_diameter = b;
    st.moments.push_back(posterior_moments(p));
    st.rel_error.push_back(std::abs(st.moments.back().var1 - limit) / limit);
  }
  for (std::size_t k = 1; k < boxes.size(); ++k)
    if (!(st.rel_error[k] < st.rel_error[k - 1]))
      throw convergence_error("non-monotone error sequence in convergence study");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(boxes.size());
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    double x = std::log(boxes[k]), y = std::log(st.rel_error[k] * limit);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  st.order = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return st;
}

inline void write_oracle_csv(std::ostream& out, const std::vector<double>& boxes,
                             const std::vector<PosteriorMoments>& moments,
                             const std::vector<std::string>& provenance = {}) {
  if (boxes.size() != moments.size()) throw domain_error("boxes and moments differ in length");
  csv::write_comments(out, provenance);
  out << "box,var1,var2,var_rel,norm\n";
  for (std::size_t k = 0; k < boxes.size(); ++k)
    out << csv::format_double(boxes[k]) << ',' << csv::format_double(moments[k].var1) << ','
        << csv::format_double(moments[k].var2) << ',' << csv::format_double(moments[k].var_rel) << ','
        << csv::format_double(moments[k].norm) << '\n';
}

} // namespace mfloc
