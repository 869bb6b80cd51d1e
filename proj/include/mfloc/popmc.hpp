#pragma once

// Event-driven Monte Carlo population of localization states.
//
// Pair events form a Poisson stream of total rate M/2, so every particle takes
// part in events at rate 1. Between events each localized u grows at unit rate
// (applied lazily: a particle stores its value and the time it was last
// touched). At an event an unordered distinct pair is drawn uniformly:
//   localized + localized     -> both become combine(u_i, u_j)
//   localized + delocalized   -> the delocalized one localizes (entrant rule)
//   delocalized + delocalized -> nothing
//
// Random numbers come from a counter-based generator: draw = mix(seed, event
// index, lane). Nothing depends on how often snapshots are taken, and a
// checkpoint (states, tau, event index, pending event time) resumes the exact
// sequence.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mfloc/csv.hpp"
#include "mfloc/error.hpp"
#include "mfloc/udist.hpp"

namespace mfloc {

/// Stateless counter-based generator: every (event, lane) pair addresses an
/// independent 64-bit draw under a given seed. Output is a SplitMix64-style
/// finalizer applied twice over the seed key and the counter; results are
/// pinned to this function.
class CounterRng {
public:
  explicit CounterRng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t bits(std::uint64_t event, std::uint32_t lane) const {
    return mix(key_ ^ mix(event * 8u + lane));
  }

  /// Uniform in the open interval (0, 1), 53-bit resolution.
  double uniform(std::uint64_t event, std::uint32_t lane) const {
    return (static_cast<double>(bits(event, lane) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n) by 128-bit multiply-shift.
  std::uint64_t below(std::uint64_t n, std::uint64_t event, std::uint32_t lane) const {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(bits(event, lane)) * n) >> 64);
  }

  std::uint64_t key() const { return key_; }

private:
  std::uint64_t key_;
};

enum class EntrantRule : std::uint8_t {
  /// Newly localized particle copies its partner's u (combine(u, inf) = u).
  adopt = 0,
  /// Newly localized particle takes combine(u_partner, u_cap).
  cap = 1,
};

inline EntrantRule parse_entrant_rule(const std::string& s) {
  if (s == "adopt") return EntrantRule::adopt;
  if (s == "cap") return EntrantRule::cap;
  throw config_error("unknown entrant rule '" + s + "' (adopt, cap)");
}

inline std::string to_string(EntrantRule r) { return r == EntrantRule::adopt ? "adopt" : "cap"; }

struct PopulationOptions {
  EntrantRule entrant = EntrantRule::adopt;
  double entrant_cap = 10.0;
  /// Values above this are counted in Population::overflow_count.
  double u_ceiling = 1e6;
  /// Multiplies the event rate; 0 switches events off (pure drift).
  double rate_scale = 1.0;
};

/// Particle states plus the generator position. Delocalized particles have
/// localized[i] == 0; their stored value is ignored.
struct Population {
  std::vector<double> value;   // u at last touch
  std::vector<double> touched; // tau of last touch
  std::vector<std::uint8_t> localized;
  double tau = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t events = 0;       // events drawn so far (next event index)
  double next_event = 0.0;        // absolute time of the pending event
  /// Times a particle was seen above options.u_ceiling at an event. Values are
  /// kept, never dropped; a nonzero count means the ceiling was set too low.
  std::uint64_t overflow_count = 0;
  PopulationOptions options;

  std::size_t size() const { return value.size(); }

  double current(std::size_t i) const { return value[i] + (tau - touched[i]); }

  std::size_t localized_count() const {
    return static_cast<std::size_t>(std::count(localized.begin(), localized.end(), std::uint8_t{1}));
  }

  double localized_fraction() const {
    return size() == 0 ? 0.0 : static_cast<double>(localized_count()) / static_cast<double>(size());
  }

  /// Current u of every localized particle, in index order.
  std::vector<double> localized_values() const {
    std::vector<double> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i)
      if (localized[i]) out.push_back(current(i));
    return out;
  }
};

struct PopSnapshot {
  double tau = 0.0;
  double localized_fraction = 0.0;
  std::vector<double> values;
};

inline constexpr std::size_t min_population = 1000;

namespace detail {

// Lane layout per event index.
inline constexpr std::uint32_t lane_wait = 0;
inline constexpr std::uint32_t lane_first = 1;
inline constexpr std::uint32_t lane_second = 2;
// Initial-state draws use their own key so they never alias event draws.
inline constexpr std::uint64_t init_salt = 0xa54ff53a5f1d36f1ULL;

inline double event_rate(const Population& pop) {
  return 0.5 * static_cast<double>(pop.size()) * pop.options.rate_scale;
}

inline void schedule_next(Population& pop, const CounterRng& rng, double from) {
  double rate = event_rate(pop);
  if (!(rate > 0.0)) {
    pop.next_event = std::numeric_limits<double>::infinity();
    return;
  }
  double u = rng.uniform(pop.events, lane_wait);
  pop.next_event = from - std::log(u) / rate;
}

inline void touch(Population& pop, std::size_t i, double u) {
  pop.value[i] = u;
  pop.touched[i] = pop.tau;
  if (u > pop.options.u_ceiling) ++pop.overflow_count;
}

inline void apply_event(Population& pop, const CounterRng& rng) {
  const std::uint64_t m = pop.size();
  std::size_t i = static_cast<std::size_t>(rng.below(m, pop.events, lane_first));
  std::size_t j = static_cast<std::size_t>(rng.below(m - 1, pop.events, lane_second));
  if (j >= i) ++j;
  const bool li = pop.localized[i] != 0;
  const bool lj = pop.localized[j] != 0;
  if (li && lj) {
    const double ui = pop.current(i);
    const double uj = pop.current(j);
    if (ui > pop.options.u_ceiling) ++pop.overflow_count;
    if (uj > pop.options.u_ceiling) ++pop.overflow_count;
    double c = combine(ui, uj);
    touch(pop, i, c);
    touch(pop, j, c);
  } else if (li != lj) {
    std::size_t from = li ? i : j;
    std::size_t to = li ? j : i;
    double uf = pop.current(from);
    double un = pop.options.entrant == EntrantRule::adopt ? combine(uf, std::numeric_limits<double>::infinity())
                                                          : combine(uf, pop.options.entrant_cap);
    pop.localized[to] = 1;
    touch(pop, to, un);
  }
}

inline double sample_gamma2(const CounterRng& rng, std::uint64_t index) {
  return -std::log(rng.uniform(index, 0)) - std::log(rng.uniform(index, 1));
}

} // namespace detail

/// Draws a population of M particles, the first ceil(g0 M) localized with
/// u ~ u e^{-u}, the rest delocalized, and schedules the first event.
inline Population make_population(std::size_t m, double g0, std::uint64_t seed, PopulationOptions opts = {}) {
  if (m < min_population) throw config_error("population needs at least 1000 particles");
  if (!(g0 >= 0.0 && g0 <= 1.0)) throw domain_error("g0 must lie in [0, 1]");
  if (!(opts.rate_scale >= 0.0)) throw config_error("rate_scale must be nonnegative");
  if (opts.entrant == EntrantRule::cap && !(opts.entrant_cap > 0.0)) throw config_error("entrant cap must be positive");
  const std::size_t n_loc = static_cast<std::size_t>(std::ceil(g0 * static_cast<double>(m) - 1e-9));
  if (g0 > 0.0 && n_loc < 10) throw config_error("fewer than 10 initially localized particles");

  Population pop;
  pop.seed = seed;
  pop.options = opts;
  pop.value.assign(m, 0.0);
  pop.touched.assign(m, 0.0);
  pop.localized.assign(m, 0);
  CounterRng init(seed ^ detail::init_salt);
  for (std::size_t i = 0; i < n_loc; ++i) {
    pop.localized[i] = 1;
    pop.value[i] = detail::sample_gamma2(init, i);
  }
  detail::schedule_next(pop, CounterRng(seed), 0.0);
  return pop;
}

/// Runs events up to tau_end, recording a snapshot at each requested time in
/// (pop.tau, tau_end]. Snapshots only read state.
inline std::vector<PopSnapshot> advance(Population& pop, double tau_end, std::vector<double> snapshot_taus = {}) {
  if (!(tau_end >= pop.tau)) throw domain_error("advance: tau_end lies before the current time");
  std::sort(snapshot_taus.begin(), snapshot_taus.end());
  const CounterRng rng(pop.seed);
  std::vector<PopSnapshot> snaps;
  std::size_t next_snap = 0;
  while (next_snap < snapshot_taus.size() && snapshot_taus[next_snap] < pop.tau) ++next_snap;

  auto emit_until = [&](double t) {
    while (next_snap < snapshot_taus.size() && snapshot_taus[next_snap] <= t &&
           snapshot_taus[next_snap] <= tau_end) {
      double saved = pop.tau;
      pop.tau = snapshot_taus[next_snap];
      PopSnapshot s{pop.tau, pop.localized_fraction(), pop.localized_values()};
      snaps.push_back(std::move(s));
      pop.tau = saved;
      ++next_snap;
    }
  };

  while (pop.next_event <= tau_end) {
    emit_until(std::nextafter(pop.next_event, -1.0));
    pop.tau = pop.next_event;
    detail::apply_event(pop, rng);
    ++pop.events;
    detail::schedule_next(pop, rng, pop.tau);
  }
  emit_until(tau_end);
  pop.tau = tau_end;
  return snaps;
}

struct McRun {
  Population population;
  std::vector<PopSnapshot> snapshots;
};

/// Fully localized population (g = 1): the stochastic counterpart of the steady state.
inline McRun run_steady(std::size_t m, double tau_end, std::uint64_t seed, std::vector<double> snapshot_taus = {},
                        PopulationOptions opts = {}) {
  McRun run{make_population(m, 1.0, seed, opts), {}};
  run.snapshots = advance(run.population, tau_end, std::move(snapshot_taus));
  return run;
}

/// Population seeded with a localized fraction g0; the rest localize through events.
inline McRun run_transient(std::size_t m, double g0, double tau_end, std::uint64_t seed,
                           std::vector<double> snapshot_taus = {}, PopulationOptions opts = {}) {
  McRun run{make_population(m, g0, seed, opts), {}};
  run.snapshots = advance(run.population, tau_end, std::move(snapshot_taus));
  return run;
}

// ---------------------------------------------------------------------------
// empirical statistics

/// Linear-deposit histogram of the values on the grid, normalized to unit mass.
/// Values beyond u_max are dropped.
inline UDensity empirical_density(std::span<const double> values, const UGrid& grid) {
  if (values.empty()) throw domain_error("empirical density of an empty localized set");
  std::vector<double> acc(grid.size(), 0.0);
  const double nb = static_cast<double>(grid.n_bins());
  for (double u : values) {
    double x = u / grid.h();
    if (!(x >= 0.0) || x > nb) continue;
    detail::deposit_linear(acc, grid.n_bins(), x, 1.0);
  }
  return normalize(detail::from_node_masses(grid, std::move(acc)));
}

inline UDensity empirical_density(const Population& pop, const UGrid& grid) {
  auto v = pop.localized_values();
  return empirical_density(v, grid);
}

/// Kolmogorov-Smirnov statistic sup |F_emp - F_ref| against the normalized CDF
/// of the reference density's piecewise-linear interpolant.
inline double ks_distance(std::span<const double> values, const UDensity& ref) {
  if (values.empty()) throw domain_error("ks_distance of an empty localized set");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  UCdf cdf(ref);
  const double total = cdf.total();
  if (!(total > 0.0)) throw domain_error("ks_distance: reference has zero mass");
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    double f = cdf(v[k]) / total;
    d = std::max(d, std::max(static_cast<double>(k + 1) / n - f, f - static_cast<double>(k) / n));
  }
  return d;
}

inline double ks_distance(const Population& pop, const UDensity& ref) {
  auto v = pop.localized_values();
  return ks_distance(v, ref);
}

/// Sample mean and its standard error.
inline std::pair<double, double> mean_and_stderr(std::span<const double> v) {
  if (v.size() < 2) throw domain_error("need at least two values");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  double var = ss / static_cast<double>(v.size() - 1);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

// ---------------------------------------------------------------------------
// checkpoints
//
// Little-endian layout:
//   magic "MFLOCPOP" (8 bytes), u32 version, u32 entrant rule,
//   u64 M, f64 tau, u64 seed, u64 events, f64 next_event, u64 overflow_count,
//   f64 entrant_cap, f64 u_ceiling, f64 rate_scale,
//   then M records of (u8 localized, f64 value, f64 touched).

inline constexpr char checkpoint_magic[8] = {'M', 'F', 'L', 'O', 'C', 'P', 'O', 'P'};
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

template <class T> void put(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T> T get(std::istream& in) {
  unsigned char b[sizeof(T)];
  in.read(reinterpret_cast<char*>(b), sizeof(T));
  if (!in) throw io_error("truncated checkpoint");
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

} // namespace detail

inline void write_checkpoint(std::ostream& out, const Population& pop) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian");
  out.write(checkpoint_magic, sizeof(checkpoint_magic));
  detail::put<std::uint32_t>(out, checkpoint_version);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(pop.options.entrant));
  detail::put<std::uint64_t>(out, pop.size());
  detail::put<double>(out, pop.tau);
  detail::put<std::uint64_t>(out, pop.seed);
  detail::put<std::uint64_t>(out, pop.events);
  detail::put<double>(out, pop.next_event);
  detail::put<std::uint64_t>(out, pop.overflow_count);
  detail::put<double>(out, pop.options.entrant_cap);
  detail::put<double>(out, pop.options.u_ceiling);
  detail::put<double>(out, pop.options.rate_scale);
  for (std::size_t i = 0; i < pop.size(); ++i) {
    detail::put<std::uint8_t>(out, pop.localized[i]);
    detail::put<double>(out, pop.value[i]);
    detail::put<double>(out, pop.touched[i]);
  }
  if (!out) throw io_error("failed writing checkpoint");
}

inline Population read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, checkpoint_magic, sizeof(magic)) != 0) throw io_error("not a population checkpoint");
  auto version = detail::get<std::uint32_t>(in);
  if (version != checkpoint_version) throw io_error("unsupported checkpoint version " + std::to_string(version));
  Population pop;
  auto rule = detail::get<std::uint32_t>(in);
  if (rule > 1) throw io_error("bad entrant rule in checkpoint");
  pop.options.entrant = static_cast<EntrantRule>(rule);
  auto m = detail::get<std::uint64_t>(in);
  pop.tau = detail::get<double>(in);
  pop.seed = detail::get<std::uint64_t>(in);
  pop.events = detail::get<std::uint64_t>(in);
  pop.next_event = detail::get<double>(in);
  pop.overflow_count = detail::get<std::uint64_t>(in);
  pop.options.entrant_cap = detail::get<double>(in);
  pop.options.u_ceiling = detail::get<double>(in);
  pop.options.rate_scale = detail::get<double>(in);
  if (m > (std::uint64_t{1} << 40)) throw io_error("implausible population size in checkpoint");
  pop.value.resize(m);
  pop.touched.resize(m);
  pop.localized.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    pop.localized[i] = detail::get<std::uint8_t>(in);
    pop.value[i] = detail::get<double>(in);
    pop.touched[i] = detail::get<double>(in);
  }
  return pop;
}

// ---------------------------------------------------------------------------
// CSV writers

inline void write_fraction_csv(std::ostream& out, const std::vector<PopSnapshot>& snaps,
                               const std::vector<std::string>& provenance = {}) {
  csv::write_comments(out, provenance);
  out << "tau,g_empirical\n";
  for (const auto& s : snaps) out << csv::format_double(s.tau) << ',' << csv::format_double(s.localized_fraction) << '\n';
}

/// Long form `tau,u_bin,p_hat`; snapshots without localized particles are skipped.
inline void write_histogram_csv(std::ostream& out, const std::vector<PopSnapshot>& snaps, const UGrid& grid,
                                const std::vector<std::string>& provenance = {}) {
  csv::write_comments(out, provenance);
  out << "tau,u_bin,p_hat\n";
  for (const auto& s : snaps) {
    if (s.values.empty()) continue;
    UDensity d = empirical_density(s.values, grid);
    for (std::size_t i = 0; i < d.size(); ++i)
      out << csv::format_double(s.tau) << ',' << csv::format_double(grid.node(i)) << ',' << csv::format_double(d[i])
          << '\n';
  }
}

} // namespace mfloc
