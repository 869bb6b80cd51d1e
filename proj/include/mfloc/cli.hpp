#pragma once

// Command-line front end. run_cli is the whole program; tools/mfloc.cpp only
// forwards argv. Exit codes: 0 ok, 1 invalid config or input, 2 solver
// failure, 3 I/O failure.

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mfloc/error.hpp"
#include "mfloc/gamma.hpp"
#include "mfloc/gauss_oracle.hpp"
#include "mfloc/meanfield.hpp"
#include "mfloc/popmc.hpp"
#include "mfloc/run_config.hpp"
#include "mfloc/udist.hpp"

namespace mfloc::cli {

namespace fs = std::filesystem;

inline constexpr int exit_ok = 0;
inline constexpr int exit_config = 1;
inline constexpr int exit_solver = 2;
inline constexpr int exit_io = 3;

struct Context {
  RunConfig cfg;
  fs::path dir;
  int jobs = 1;
  std::ostream* log = &std::cout;
};

inline std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

inline std::vector<std::string> provenance(const RunConfig& cfg, const std::vector<std::string>& results = {}) {
  std::vector<std::string> lines{"mfloc " + cfg.subcommand()};
  for (auto& l : cfg.echo()) lines.push_back(l);
  for (auto& r : results) lines.push_back("result " + r);
  return lines;
}

inline std::string result(const std::string& k, double v) { return k + " = " + csv::format_double(v); }

template <class Writer>
void write_file(const fs::path& path, Writer&& w) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open '" + path.string() + "' for writing");
  w(out);
  out.flush();
  if (!out) throw io_error("write to '" + path.string() + "' failed");
}

inline void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw io_error("cannot create output directory '" + dir.string() + "'");
}

inline void write_echo(const Context& ctx) {
  write_file(ctx.dir / "config.echo", [&](std::ostream& o) {
    o << "# mfloc " << ctx.cfg.subcommand() << '\n';
    for (auto& l : ctx.cfg.echo()) o << l << '\n';
  });
}

// ---------------------------------------------------------------------------
// shared config readers

inline GammaTrajectory gamma_from(const RunConfig& cfg, double g0) {
  const std::string& m = cfg.str("method");
  if (m == "closed") return gamma_sampled(g0, cfg.num("tau_end"), cfg.num("dtau"));
  if (m == "ode") return gamma_ode(g0, cfg.num("tau_end"), cfg.num("dtau"));
  throw config_error("method must be closed or ode");
}

inline SolverConfig solver_from(const RunConfig& cfg) {
  SolverConfig s;
  s.u_max = cfg.num("u_max");
  s.h = cfg.num("h");
  if (cfg.has("alpha")) s.alpha = cfg.num("alpha");
  if (cfg.has("tol_fixed_point")) s.tol_fixed_point = cfg.num("tol_fixed_point");
  if (cfg.has("max_iters")) s.max_iters = static_cast<int>(cfg.integer("max_iters"));
  if (cfg.has("steady_subsamples")) s.steady_subsamples = static_cast<int>(cfg.integer("steady_subsamples"));
  if (cfg.has("transient_subsamples")) s.transient_subsamples = static_cast<int>(cfg.integer("transient_subsamples"));
  if (cfg.has("tol_mass")) s.tol_mass = cfg.num("tol_mass");
  if (cfg.has("lost_mass_cap")) s.lost_mass_cap = cfg.num("lost_mass_cap");
  if (cfg.has("m_max")) s.m_max = static_cast<int>(cfg.integer("m_max"));
  s.initial = parse_initial_shape(cfg.str("initial"));
  s.initial_point = cfg.num("initial_point");
  s.dtau = s.h;
  if (cfg.subcommand() == "transient" && !csv::trim(cfg.str("dtau")).empty()) s.dtau = cfg.num("dtau");
  s.validate();
  return s;
}

inline PopulationOptions population_options_from(const RunConfig& cfg) {
  PopulationOptions o;
  o.entrant = parse_entrant_rule(cfg.str("entrant"));
  o.entrant_cap = cfg.num("entrant_cap");
  o.u_ceiling = cfg.num("u_ceiling");
  return o;
}

// ---------------------------------------------------------------------------
// subcommands

inline void cmd_gamma(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  GammaTrajectory traj = gamma_from(cfg, cfg.num("g0"));
  GammaResidual res = gamma_residual(traj);
  std::vector<std::string> results{result("max_residual", res.max_residual)};
  if (traj.g0 > 0.0 && traj.g0 < 1.0) results.push_back(result("half_time", gamma_half_time(traj.g0)));
  write_file(ctx.dir / "gamma.csv", [&](std::ostream& o) { write_gamma_csv(o, traj, provenance(cfg, results)); });
  *ctx.log << "gamma: " << traj.size() << " samples, residual " << res.max_residual << '\n';
}

inline std::vector<std::string> steady_results(const SteadyResult& r, const UDensity& p) {
  SteadyResidual res = residual_steady(p);
  return {result("iterations", r.iterations),
          result("last_change", r.last_change),
          result("residual_l1", res.l1_norm),
          result("residual_sup", res.sup_norm),
          result("mean", moment(p, 1)),
          result("expected_combine", expected_combine(p)),
          result("peak", peak_location(p)),
          result("tail_log_slope", tail_log_slope(p))};
}

inline void cmd_steady(const Context& ctx) {
  SolverConfig s = solver_from(ctx.cfg);
  SteadyResult r = solve_steady(s);
  auto results = steady_results(r, r.density);
  write_file(ctx.dir / "density.csv",
             [&](std::ostream& o) { write_density_csv(o, r.density, provenance(ctx.cfg, results)); });
  *ctx.log << "steady: " << r.iterations << " iterations, change " << r.last_change << '\n';
}

inline void cmd_transient(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  SolverConfig s = solver_from(cfg);
  const double tau_end = cfg.num("tau_end");
  const double g0 = cfg.num("g0");
  GammaTrajectory g;
  const std::string& mode = cfg.str("gamma");
  // Sampled at half steps so the midpoint values are exact.
  if (mode == "closed") g = gamma_sampled(g0, tau_end, 0.5 * s.dtau);
  else if (mode == "constant") g = gamma_constant(g0, tau_end, 0.5 * s.dtau);
  else throw config_error("gamma must be closed or constant");
  const auto resummed = cfg.integer("resummed");
  if (resummed != 0 && resummed != 1) throw config_error("resummed must be 0 or 1");
  const auto every = static_cast<std::size_t>(cfg.unsigned_integer("snapshot_every"));
  if (every == 0) throw config_error("snapshot_every must be positive");
  // The memory integral needs every step; the written file is thinned afterwards.
  TransientOptions topt;
  topt.snapshot_every = resummed == 1 ? 1 : every;
  UDensity p0 = initial_density(s.grid(), s.initial, s.initial_point);
  TransientSolution sol = evolve_transient(p0, g, tau_end, s, topt);
  TransientSolution written = sol;
  if (topt.snapshot_every != every) {
    written.tau.clear();
    written.densities.clear();
    for (std::size_t k = 0; k < sol.tau.size(); ++k) {
      if (k % every != 0 && k + 1 != sol.tau.size()) continue;
      written.tau.push_back(sol.tau[k]);
      written.densities.push_back(sol.densities[k]);
    }
  }
  std::vector<std::string> results{result("max_mass_drift", sol.max_mass_drift), result("lost_mass", sol.lost_mass)};
  write_file(ctx.dir / "transient.csv",
             [&](std::ostream& o) { write_transient_csv(o, written, provenance(cfg, results)); });
  if (resummed == 1) {
    ResummedResidual rr =
        residual_resummed(sol, g, s.m_max, KernelQuadrature{s.transient_subsamples}, s.lost_mass_cap);
    write_file(ctx.dir / "residual.csv",
               [&](std::ostream& o) { write_residual_csv(o, rr.tau, rr.resummed_l1, provenance(cfg, results)); });
    write_file(ctx.dir / "hierarchy.csv", [&](std::ostream& o) {
      csv::write_comments(o, provenance(cfg, results));
      o << "tau,m,residual_l1\n";
      for (std::size_t m = 0; m < rr.truncated_l1.size(); ++m)
        for (std::size_t j = 0; j < rr.tau.size(); ++j)
          o << csv::format_double(rr.tau[j]) << ',' << (m + 1) << ',' << csv::format_double(rr.truncated_l1[m][j])
            << '\n';
    });
  }
  *ctx.log << "transient: " << sol.tau.size() << " snapshots to tau " << tau_end << '\n';
}

inline void run_mc_one(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir, const std::string& ckpt_out) {
  const bool steady = cfg.subcommand() == "mc-steady";
  const std::size_t m = static_cast<std::size_t>(cfg.unsigned_integer("M"));
  const double tau_end = cfg.num("tau_end");
  PopulationOptions opts = population_options_from(cfg);
  Population pop;
  const std::string& resume = cfg.str("resume");
  if (!resume.empty()) {
    std::ifstream in(resume, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint '" + resume + "'");
    pop = read_checkpoint(in);
    if (pop.seed != seed) throw config_error("checkpoint seed differs from the configured seed");
    if (pop.value.size() != m) throw config_error("checkpoint population size differs from M");
  } else {
    pop = make_population(m, steady ? 1.0 : cfg.num("g0"), seed, opts);
  }
  auto snaps = advance(pop, tau_end, cfg.list("snapshots"));
  UGrid hist = UGrid::from_spacing(cfg.num("hist_u_max"), cfg.num("hist_h"));
  std::vector<std::string> results{result("events", static_cast<double>(pop.events)),
                                   result("overflow_count", static_cast<double>(pop.overflow_count)),
                                   "run_seed = " + std::to_string(seed)};
  auto prov = provenance(cfg, results);
  write_file(dir / "fraction.csv", [&](std::ostream& o) { write_fraction_csv(o, snaps, prov); });
  write_file(dir / "histogram.csv", [&](std::ostream& o) { write_histogram_csv(o, snaps, hist, prov); });
  write_file(dir / "moments.csv", [&](std::ostream& o) {
    csv::write_comments(o, prov);
    o << "tau,g_empirical,count,mean,stderr\n";
    for (const auto& s : snaps) {
      double mean = 0.0, se = 0.0;
      if (s.values.size() >= 2) std::tie(mean, se) = mean_and_stderr(s.values);
      o << csv::format_double(s.tau) << ',' << csv::format_double(s.localized_fraction) << ',' << s.values.size()
        << ',' << csv::format_double(mean) << ',' << csv::format_double(se) << '\n';
    }
  });
  if (!ckpt_out.empty()) {
    std::ofstream out(ckpt_out, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open checkpoint '" + ckpt_out + "' for writing");
    write_checkpoint(out, pop);
    if (!out) throw io_error("checkpoint write failed");
  }
}

inline void cmd_mc(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const std::uint64_t base = cfg.unsigned_integer("seed");
  const std::uint64_t n = cfg.unsigned_integer("seeds");
  if (n < 1) throw config_error("seeds must be >= 1");
  if (n > 1 && !cfg.str("resume").empty()) throw config_error("resume takes a single seed");
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::uint64_t> next{0};
  auto worker = [&] {
    for (std::uint64_t k = next++; k < n; k = next++) {
      try {
        const std::uint64_t seed = base + k;
        fs::path dir = n == 1 ? ctx.dir : ctx.dir / ("seed_" + std::to_string(seed));
        prepare_dir(dir);
        std::string ck = cfg.str("checkpoint");
        if (!ck.empty() && n > 1) ck += ".seed" + std::to_string(seed);
        run_mc_one(cfg, seed, dir, ck);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const int threads = static_cast<int>(std::min<std::uint64_t>(n, static_cast<std::uint64_t>(std::max(1, ctx.jobs))));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  *ctx.log << cfg.subcommand() << ": " << n << " seed(s) from " << base << '\n';
}

inline void cmd_oracle(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  GaussPair base;
  base.xi1_sq = cfg.num("xi1_sq");
  base.xi2_sq = cfg.num("xi2_sq");
  base.quad_points = static_cast<int>(cfg.integer("quad_points"));
  base.integration_halfwidth = cfg.num("integration_halfwidth");
  base.offset = cfg.num("offset");
  base.convention = parse_box_convention(cfg.str("box_convention"));
  std::vector<double> boxes = cfg.list("boxes");
  if (boxes.empty()) throw config_error("boxes must list at least one size");
  std::vector<PosteriorMoments> mom(boxes.size());
  std::vector<std::exception_ptr> errors(boxes.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < boxes.size(); k = next++) {
      try {
        GaussPair p = base;
        p.box_diameter = boxes[k];
        mom[k] = posterior_moments(p);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const int threads = std::min<int>(static_cast<int>(boxes.size()), std::max(1, ctx.jobs));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<std::string> results{result("contraction_limit", contraction_limit(base.xi1_sq, base.xi2_sq))};
  write_file(ctx.dir / "oracle.csv",
             [&](std::ostream& o) { write_oracle_csv(o, boxes, mom, provenance(cfg, results)); });
  *ctx.log << "oracle: " << boxes.size() << " boxes\n";
}

inline void cmd_fig1(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  std::vector<double> seeds = cfg.list("g0_list");
  if (seeds.empty()) throw config_error("g0_list is empty");
  std::vector<GammaTrajectory> curves;
  for (double g0 : seeds) curves.push_back(gamma_from(cfg, g0));
  std::vector<std::string> results;
  for (double g0 : seeds)
    if (g0 > 0.0 && g0 < 1.0) results.push_back(result("half_time_g0_" + short_num(g0), gamma_half_time(g0)));
  write_file(ctx.dir / "fig1_gamma.csv", [&](std::ostream& o) {
    csv::write_comments(o, provenance(cfg, results));
    o << "tau";
    for (double g0 : seeds) o << ",g0_" << short_num(g0);
    o << '\n';
    for (std::size_t k = 0; k < curves.front().size(); ++k) {
      o << csv::format_double(curves.front().tau[k]);
      for (const auto& c : curves) o << ',' << csv::format_double(c.g[k]);
      o << '\n';
    }
  });
  SolverConfig s = solver_from(cfg);
  SteadyResult r = solve_steady(s);
  write_file(ctx.dir / "fig1_inset.csv", [&](std::ostream& o) {
    write_density_csv(o, r.density, provenance(cfg, steady_results(r, r.density)));
  });
  *ctx.log << "fig1: " << seeds.size() << " curves and the steady density\n";
}

// ---------------------------------------------------------------------------

inline int exit_code_for(const std::exception_ptr& e, std::ostream& err) {
  try {
    std::rethrow_exception(e);
  } catch (const config_error& x) {
    err << "config error: " << x.what() << '\n';
    return exit_config;
  } catch (const domain_error& x) {
    err << "invalid input: " << x.what() << '\n';
    return exit_config;
  } catch (const convergence_error& x) {
    err << "solver did not converge: " << x.what() << '\n';
    return exit_solver;
  } catch (const instability_error& x) {
    err << "solver unstable: " << x.what() << '\n';
    return exit_solver;
  } catch (const io_error& x) {
    err << "i/o error: " << x.what() << '\n';
    return exit_io;
  } catch (const std::exception& x) {
    err << "error: " << x.what() << '\n';
    return exit_config;
  }
}

inline int run_cli(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"mfloc: localized-fraction kinetics, steady and transient densities, population Monte Carlo"};
  app.require_subcommand(1);
  struct Flags {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out;
    int jobs = 1;
  };
  std::vector<Flags> flags(subcommands().size());
  std::vector<CLI::App*> apps;
  const std::vector<std::string> about = {
      "localized fraction g(tau)",        "steady-state density p(u)",
      "transient density p(u; tau)",      "Monte Carlo population at g = 1",
      "Monte Carlo population from seed", "Gaussian box-measurement oracle",
      "figure 1 curve family and inset"};
  for (std::size_t i = 0; i < subcommands().size(); ++i) {
    auto* sub = app.add_subcommand(subcommands()[i], about[i]);
    sub->add_option("--config", flags[i].config, "key = value file");
    sub->add_option("--set", flags[i].sets, "override one key (repeatable)")->allow_extra_args(false);
    sub->add_option("--seed", flags[i].seed, "base seed (Monte Carlo)");
    sub->add_option("--out", flags[i].out, "output root directory");
    sub->add_option("--jobs", flags[i].jobs, "worker threads for seed sweeps and box lists")
        ->check(CLI::PositiveNumber);
    apps.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, log, err);
    return code == 0 ? exit_ok : exit_config;
  }
  try {
    std::size_t i = 0;
    while (!apps[i]->parsed()) ++i;
    const Flags& f = flags[i];
    Context ctx{RunConfig(subcommands()[i]), {}, f.jobs, &log};
    if (!f.config.empty()) ctx.cfg.load_file(f.config);
    for (const auto& s : f.sets) ctx.cfg.set_assignment(s);
    if (f.seed) {
      if (!ctx.cfg.has("seed")) throw config_error("--seed applies only to Monte Carlo subcommands");
      ctx.cfg.set("seed", std::to_string(*f.seed));
    }
    if (!f.out.empty()) ctx.cfg.set("out", f.out);
    const std::string& name = ctx.cfg.str("name");
    if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..")
      throw config_error("name must be a plain directory name");
    ctx.dir = fs::path(ctx.cfg.str("out")) / ctx.cfg.subcommand() / name;
    prepare_dir(ctx.dir);
    write_echo(ctx);
    const std::string& sub = ctx.cfg.subcommand();
    if (sub == "gamma") cmd_gamma(ctx);
    else if (sub == "steady") cmd_steady(ctx);
    else if (sub == "transient") cmd_transient(ctx);
    else if (sub == "mc-steady" || sub == "mc-transient") cmd_mc(ctx);
    else if (sub == "oracle") cmd_oracle(ctx);
    else cmd_fig1(ctx);
    log << "output: " << ctx.dir.string() << '\n';
    return exit_ok;
  } catch (...) {
    return exit_code_for(std::current_exception(), err);
  }
}

} // namespace mfloc::cli
