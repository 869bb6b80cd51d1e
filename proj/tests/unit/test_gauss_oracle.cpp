#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mfloc/gauss_oracle.hpp"
#include "oracles.hpp"

using namespace mfloc;

namespace {

// Equal widths separate exactly: with s = (r1 + r2)/2 and r = r1 - r2,
// var1 = xi^2/2 + var(r | |r| < a)/4 where r ~ N(0, 2 xi^2).
double equal_width_var1(double xi_sq, double a) {
  const double s2 = 2.0 * xi_sq;
  auto w = [&](double r) { return std::exp(-0.5 * r * r / s2); };
  double z = oracle::simpson(w, -a, a, 4000);
  double q = oracle::simpson([&](double r) { return r * r * w(r); }, -a, a, 4000);
  return 0.5 * xi_sq + 0.25 * q / z;
}

} // namespace

TEST(ContractionLimit, Examples) {
  EXPECT_DOUBLE_EQ(contraction_limit(1, 1), 0.5);
  EXPECT_DOUBLE_EQ(contraction_limit(2, 2), 1.0);
  EXPECT_DOUBLE_EQ(contraction_limit(3, 6), 2.0);
  EXPECT_THROW(contraction_limit(0, 1), domain_error);
}

TEST(Posterior, NarrowBoxGivesProductRule) {
  GaussPair p;
  p.box_diameter = 0.01;
  PosteriorMoments m = posterior_moments(p);
  EXPECT_NEAR(m.var1, 0.5, 5e-4);
  EXPECT_NEAR(m.var2, 0.5, 5e-4);
  EXPECT_NEAR(m.mean1, 0.0, 1e-12);
  EXPECT_NEAR(m.mean2, 0.0, 1e-12);
}

TEST(Posterior, MatchesSeparatedOneDimensionalOracle) {
  for (double b : {0.4, 0.1, 0.02}) {
    GaussPair p;
    p.box_diameter = b;
    EXPECT_NEAR(posterior_moments(p).var1, equal_width_var1(1.0, 0.5 * b), 1e-6) << b;
    p.convention = BoxConvention::radius;
    EXPECT_NEAR(posterior_moments(p).var1, equal_width_var1(1.0, b), 1e-6) << b;
  }
}

TEST(Posterior, DelocalizedPartnerLeavesWidth) {
  GaussPair p;
  p.xi2_sq = 1e6;
  p.box_diameter = 0.01;
  EXPECT_NEAR(posterior_moments(p).var1, 1.0, 1e-3);
}

TEST(Posterior, UnequalWidths) {
  GaussPair p;
  p.xi1_sq = 3;
  p.xi2_sq = 6;
  p.box_diameter = 0.01;
  PosteriorMoments m = posterior_moments(p);
  EXPECT_NEAR(m.var1, 2.0, 1e-4 * 2);
  EXPECT_NEAR(m.var2, 2.0, 1e-4 * 2);
}

TEST(Posterior, SwapSymmetry) {
  GaussPair a;
  a.xi1_sq = 0.7;
  a.xi2_sq = 2.5;
  a.box_diameter = 0.3;
  GaussPair b = a;
  std::swap(b.xi1_sq, b.xi2_sq);
  PosteriorMoments ma = posterior_moments(a), mb = posterior_moments(b);
  EXPECT_NEAR(ma.var1, mb.var2, 1e-6 * ma.var1);
  EXPECT_NEAR(ma.var2, mb.var1, 1e-6 * ma.var2);
  EXPECT_NEAR(ma.var_rel, mb.var_rel, 1e-6 * ma.var_rel);
  EXPECT_NEAR(ma.norm, mb.norm, 1e-6 * ma.norm);
}

TEST(Posterior, MonotoneInBox) {
  double prev_var = 0.0, prev_norm = 0.0;
  for (double b : {0.05, 0.1, 0.2, 0.4, 0.8}) {
    GaussPair p;
    p.box_diameter = b;
    PosteriorMoments m = posterior_moments(p);
    EXPECT_GT(m.var1, prev_var);
    EXPECT_GT(m.norm, prev_norm);
    EXPECT_LT(m.norm, 1.0);
    prev_var = m.var1;
    prev_norm = m.norm;
  }
}

TEST(Posterior, OffsetCentresShiftMeans) {
  GaussPair p;
  p.offset = 0.5;
  p.box_diameter = 0.05;
  PosteriorMoments m = posterior_moments(p);
  EXPECT_NEAR(m.mean1, 0.25, 1e-3);
  EXPECT_NEAR(m.var1, 0.5, 1e-3);
}

TEST(Posterior, Errors) {
  GaussPair p;
  p.xi1_sq = -1;
  EXPECT_THROW(posterior_moments(p), domain_error);
  p = {};
  p.integration_halfwidth = 4;
  EXPECT_THROW(posterior_moments(p), domain_error);
  p = {};
  p.offset = 400.0;
  EXPECT_THROW(posterior_moments(p), domain_error);
  p = {};
  p.max_doublings = 1;
  EXPECT_THROW(posterior_moments(p), convergence_error);
  EXPECT_THROW(parse_box_convention("both"), config_error);
}

TEST(Convergence, QuadraticOrder) {
  ConvergenceStudy st = convergence_study(1, 1, {0.4, 0.2, 0.1, 0.05});
  EXPECT_NEAR(st.order, 2.0, 0.1);
  for (std::size_t k = 0; k < st.boxes.size(); ++k) {
    double b = st.boxes[k];
    EXPECT_NEAR(st.moments[k].var_rel, b * b / 12, 0.05 * b * b / 12);
  }
  EXPECT_THROW(convergence_study(1, 1, {0.1}), domain_error);
  EXPECT_THROW(convergence_study(1, 1, {0.1, 0.1}), domain_error);
}

TEST(OracleCsv, Format) {
  std::stringstream s;
  write_oracle_csv(s, {0.1}, {PosteriorMoments{0, 0, 0.5, 0.5, 1e-3, 0.03, 0}});
  EXPECT_EQ(s.str(), "box,var1,var2,var_rel,norm\n0.10000000000000001,0.5,0.5,0.001,0.029999999999999999\n");
}
