#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mfloc/popmc.hpp"

using namespace mfloc;

TEST(CounterRng, DeterministicAndInRange) {
  CounterRng a(42), b(42), c(43);
  int differ = 0;
  for (std::uint64_t k = 0; k < 1000; ++k) {
    double x = a.uniform(k, 1);
    EXPECT_EQ(x, b.uniform(k, 1));
    EXPECT_GT(x, 0.0);
    EXPECT_LT(x, 1.0);
    differ += x != c.uniform(k, 1);
    EXPECT_LT(a.below(7, k, 2), 7u);
  }
  EXPECT_GT(differ, 990);
}

TEST(CounterRng, UniformMoments) {
  CounterRng r(5);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int k = 0; k < n; ++k) {
    double x = r.uniform(static_cast<std::uint64_t>(k), 0);
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.5, 3e-3);
  EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12, 2e-3);
}

TEST(Population, Preconditions) {
  EXPECT_THROW(make_population(999, 1.0, 1), config_error);
  EXPECT_THROW(make_population(1000, 0.005, 1), config_error);
  EXPECT_THROW(make_population(1000, 1.5, 1), domain_error);
  EXPECT_NO_THROW(make_population(1000, 0.01, 1));
  EXPECT_EQ(make_population(1000, 0.01, 1).localized_count(), 10u);
}

TEST(Population, SingleEventContractsPair) {
  Population pop = make_population(1000, 1.0, 3);
  std::fill(pop.value.begin(), pop.value.end(), 2.0);
  detail::apply_event(pop, CounterRng(pop.seed));
  int ones = 0, twos = 0;
  for (double v : pop.value) {
    ones += v == 1.0;
    twos += v == 2.0;
  }
  EXPECT_EQ(ones, 2);
  EXPECT_EQ(twos, 998);
}

TEST(Population, NoEventsMeansPureDrift) {
  PopulationOptions o;
  o.rate_scale = 0.0;
  Population pop = make_population(2000, 1.0, 9, o);
  std::vector<double> before = pop.localized_values();
  advance(pop, 7.5);
  EXPECT_EQ(pop.events, 0u);
  std::vector<double> after = pop.localized_values();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_DOUBLE_EQ(after[i], before[i] + 7.5);
}

TEST(Population, ZeroSeedStaysDelocalized) {
  McRun r = run_transient(5000, 0.0, 20.0, 4, {5.0, 20.0});
  for (const auto& s : r.snapshots) EXPECT_EQ(s.localized_fraction, 0.0);
  EXPECT_GT(r.population.events, 0u);
}

TEST(Population, UnitSeedMatchesSteadyRun) {
  McRun a = run_transient(3000, 1.0, 5.0, 8, {5.0});
  McRun b = run_steady(3000, 5.0, 8, {5.0});
  EXPECT_EQ(a.snapshots[0].values, b.snapshots[0].values);
}

TEST(Population, LocalizedCountNeverDecreasesAndEventsContract) {
  Population pop = make_population(5000, 0.01, 12);
  CounterRng rng(pop.seed);
  std::size_t count = pop.localized_count();
  int contractions = 0;
  for (int k = 0; k < 20000; ++k) {
    pop.tau = pop.next_event;
    std::vector<double> cur(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) cur[i] = pop.current(i);
    std::vector<std::uint8_t> was = pop.localized;
    detail::apply_event(pop, rng);
    ++pop.events;
    detail::schedule_next(pop, rng, pop.tau);
    std::size_t now = pop.localized_count();
    EXPECT_GE(now, count);
    count = now;
    for (std::size_t i = 0; i < pop.size(); ++i) {
      if (was[i] && pop.touched[i] == pop.tau) {
        EXPECT_LE(pop.value[i], cur[i]);
        ++contractions;
      }
    }
  }
  EXPECT_GT(contractions, 0);
}

TEST(Population, SameSeedIsBitIdentical) {
  McRun a = run_transient(20000, 0.01, 6.0, 77, {2.0, 6.0});
  McRun b = run_transient(20000, 0.01, 6.0, 77, {2.0, 6.0});
  ASSERT_EQ(a.snapshots.size(), b.snapshots.size());
  for (std::size_t k = 0; k < a.snapshots.size(); ++k) EXPECT_EQ(a.snapshots[k].values, b.snapshots[k].values);
  EXPECT_EQ(a.population.value, b.population.value);
  EXPECT_EQ(a.population.events, b.population.events);
  McRun c = run_transient(20000, 0.01, 6.0, 78, {6.0});
  EXPECT_NE(a.population.value, c.population.value);
}

TEST(Population, SnapshotsDoNotPerturbEvents) {
  McRun a = run_steady(5000, 4.0, 21, {});
  McRun b = run_steady(5000, 4.0, 21, {0.5, 1.0, 1.7, 3.3});
  EXPECT_EQ(a.population.value, b.population.value);
  EXPECT_EQ(a.population.events, b.population.events);
}

TEST(Population, CheckpointResumeIsBitIdentical) {
  McRun full = run_transient(10000, 0.01, 8.0, 5, {8.0});
  Population half = make_population(10000, 0.01, 5);
  advance(half, 3.0);
  std::stringstream buf;
  write_checkpoint(buf, half);
  Population resumed = read_checkpoint(buf);
  auto snaps = advance(resumed, 8.0, {8.0});
  EXPECT_EQ(snaps[0].values, full.snapshots[0].values);
  EXPECT_EQ(resumed.events, full.population.events);
}

TEST(Population, CheckpointRejectsGarbage) {
  std::stringstream bad("not a checkpoint at all");
  EXPECT_THROW(read_checkpoint(bad), io_error);
  Population pop = make_population(1000, 1.0, 1);
  std::stringstream buf;
  write_checkpoint(buf, pop);
  std::string s = buf.str();
  std::stringstream truncated(s.substr(0, s.size() - 5));
  EXPECT_THROW(read_checkpoint(truncated), io_error);
}

TEST(Population, FractionFollowsLogisticOnAverage) {
  // Averaged over replicas the fraction tracks g0 / (g0 + (1 - g0) e^{-tau}).
  const double g0 = 0.05;
  double sum = 0.0;
  const int reps = 8;
  for (int r = 0; r < reps; ++r) sum += run_transient(20000, g0, 3.0, 100 + r, {3.0}).snapshots[0].localized_fraction;
  double expected = g0 / (g0 + (1 - g0) * std::exp(-3.0));
  EXPECT_NEAR(sum / reps, expected, 0.02);
}

TEST(Statistics, PointMassHistogram) {
  UGrid g(10.0, 100);
  std::vector<double> v(500, 2.0);
  UDensity d = empirical_density(v, g);
  EXPECT_NEAR(d[20] * g.weight(20), 1.0, 1e-12);
  EXPECT_THROW(empirical_density(std::vector<double>{}, g), domain_error);
}

TEST(Statistics, KsOfExactSampleIsBelowCriticalValue) {
  UDensity ref = densities::gamma2(UGrid(30.0, 3000));
  UCdf cdf(ref);
  const std::size_t m = 20000;
  std::vector<double> v(m);
  CounterRng r(17);
  for (std::size_t k = 0; k < m; ++k) v[k] = cdf.inverse(r.uniform(k, 0));
  EXPECT_LT(ks_distance(v, ref), 1.63 / std::sqrt(static_cast<double>(m)));
}

TEST(Statistics, KsAgainstOwnHistogram) {
  McRun run = run_steady(20000, 10.0, 2, {});
  UGrid g(60.0, 600);
  UDensity own = empirical_density(run.population, g);
  EXPECT_LT(ks_distance(run.population, own), 0.5 * 0.1 * *std::max_element(own.values().begin(), own.values().end()) + 1e-3);
}

TEST(Statistics, MeanAndStderr) {
  std::vector<double> v{1, 2, 3, 4};
  auto [m, se] = mean_and_stderr(v);
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_NEAR(se, std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
}

TEST(PopCsv, Formats) {
  std::vector<PopSnapshot> s{{1.0, 0.5, {1.0, 2.0}}};
  std::stringstream a;
  write_fraction_csv(a, s);
  EXPECT_EQ(a.str(), "tau,g_empirical\n1,0.5\n");
  std::stringstream b;
  write_histogram_csv(b, s, UGrid(4.0, 4));
  csv::table t = csv::parse(b);
  EXPECT_EQ(t.header, (std::vector<std::string>{"tau", "u_bin", "p_hat"}));
  EXPECT_EQ(t.rows.size(), 5u);
}
