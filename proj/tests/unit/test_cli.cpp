#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mfloc/cli.hpp"

using namespace mfloc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("mfloc_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

int run(std::vector<std::string> args, std::string* err_out = nullptr) {
  args.insert(args.begin(), "mfloc");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream log, err;
  int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), log, err);
  if (err_out) *err_out = err.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

} // namespace

TEST(RunConfig, DefaultsOverridesAndUnknownKeys) {
  RunConfig c("gamma");
  EXPECT_EQ(c.num("g0"), 0.01);
  std::stringstream file("# comment\ng0 = 0.005   # trailing\n\ntau_end=3\n");
  c.load(file);
  EXPECT_EQ(c.num("g0"), 0.005);
  EXPECT_EQ(c.num("tau_end"), 3.0);
  c.set_assignment("g0=0.2");
  EXPECT_EQ(c.num("g0"), 0.2);
  EXPECT_THROW(c.set("M", "10"), config_error);
  std::stringstream bad("g0 = 1\nbogus = 2\n");
  EXPECT_THROW(c.load(bad), config_error);
  std::stringstream noeq("g0 1\n");
  EXPECT_THROW(c.load(noeq), config_error);
  c.set("g0", "abc");
  EXPECT_THROW(c.num("g0"), config_error);
  EXPECT_THROW(RunConfig("nope"), config_error);
}

TEST(RunConfig, EchoReloads) {
  RunConfig a("mc-transient");
  a.set("M", "5000");
  a.set("snapshots", "1,2");
  std::stringstream s;
  for (auto& l : a.echo()) s << l << '\n';
  RunConfig b("mc-transient");
  b.load(s);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_EQ(b.list("snapshots"), (std::vector<double>{1, 2}));
}

TEST(Cli, GammaZeroSeedIsAllZeros) {
  fs::path out = scratch("gamma0");
  ASSERT_EQ(run({"gamma", "--out", out.string(), "--set", "g0=0"}), 0);
  csv::table t = csv::read_file((out / "gamma" / "default" / "gamma.csv").string());
  EXPECT_EQ(t.header, (std::vector<std::string>{"tau", "g"}));
  EXPECT_EQ(t.rows.size(), 2001u);
  for (auto& r : t.rows) EXPECT_EQ(r[1], 0.0);
  // The header echoes the resolved config.
  bool seen = false;
  for (auto& c : t.comments) seen |= c.find("g0 = 0") != std::string::npos;
  EXPECT_TRUE(seen);
  EXPECT_TRUE(fs::exists(out / "gamma" / "default" / "config.echo"));
}

TEST(Cli, ConfigFileAndSetPrecedence) {
  fs::path out = scratch("cfgfile");
  fs::create_directories(out);
  {
    std::ofstream f(out / "run.cfg");
    f << "g0 = 0.3\ntau_end = 1\nname = fromfile\n";
  }
  ASSERT_EQ(run({"gamma", "--config", (out / "run.cfg").string(), "--set", "tau_end=2", "--out", out.string()}), 0);
  csv::table t = csv::read_file((out / "gamma" / "fromfile" / "gamma.csv").string());
  EXPECT_EQ(t.rows.back()[0], 2.0);
  EXPECT_EQ(t.rows.front()[1], 0.3);
  // Re-running from the echoed config reproduces the output byte for byte.
  std::string first = slurp(out / "gamma" / "fromfile" / "gamma.csv");
  ASSERT_EQ(run({"gamma", "--config", (out / "gamma" / "fromfile" / "config.echo").string()}), 0);
  EXPECT_EQ(slurp(out / "gamma" / "fromfile" / "gamma.csv"), first);
}

TEST(Cli, ExitCodes) {
  fs::path out = scratch("codes");
  std::string err;
  EXPECT_EQ(run({"gamma", "--out", out.string(), "--set", "bogus=1"}, &err), cli::exit_config);
  EXPECT_NE(err.find("unknown key"), std::string::npos);
  EXPECT_EQ(run({"gamma", "--out", out.string(), "--set", "g0=2"}), cli::exit_config);
  EXPECT_EQ(run({"gamma", "--out", out.string(), "--seed", "3"}), cli::exit_config);
  EXPECT_EQ(run({"nosuch"}), cli::exit_config);
  EXPECT_EQ(run({}), cli::exit_config);
  EXPECT_EQ(run({"steady", "--out", out.string(), "--set", "h=0.05", "--set", "max_iters=2"}), cli::exit_solver);
  EXPECT_EQ(run({"gamma", "--config", (out / "missing.cfg").string()}), cli::exit_io);
  {
    std::ofstream blocker(out / "file");
  }
  EXPECT_EQ(run({"gamma", "--out", (out / "file").string()}), cli::exit_io);
  EXPECT_EQ(run({"gamma", "--help"}), cli::exit_ok);
}

TEST(Cli, SteadyCsvReloadsBitCompatibly) {
  fs::path out = scratch("steady");
  ASSERT_EQ(run({"steady", "--out", out.string()}), 0);
  std::ifstream in(out / "steady" / "default" / "density.csv");
  UDensity p = read_density_csv(in);
  SolverConfig cfg;
  SteadyResult direct = solve_steady(cfg);
  ASSERT_EQ(p.grid(), direct.density.grid());
  for (std::size_t i = 0; i < p.size(); ++i) ASSERT_EQ(p[i], direct.density[i]);
  EXPECT_EQ(moment(p, 1), moment(direct.density, 1));
  EXPECT_EQ(moment(p, 2), moment(direct.density, 2));
}

TEST(Cli, TransientWritesSnapshotsAndResidual) {
  fs::path out = scratch("transient");
  ASSERT_EQ(run({"transient", "--out", out.string(), "--set", "h=0.05", "--set", "tau_end=0.3", "--set",
                 "snapshot_every=1", "--set", "gamma=closed", "--set", "g0=0.1", "--set", "resummed=1"}),
            0);
  fs::path d = out / "transient" / "default";
  csv::table t = csv::read_file((d / "transient.csv").string());
  EXPECT_EQ(t.header, (std::vector<std::string>{"tau", "u", "p"}));
  EXPECT_EQ(t.rows.size(), 7u * 601u);
  csv::table r = csv::read_file((d / "residual.csv").string());
  EXPECT_EQ(r.header, (std::vector<std::string>{"tau", "residual_l1"}));
  EXPECT_EQ(r.rows.size(), 7u);
  csv::table h = csv::read_file((d / "hierarchy.csv").string());
  EXPECT_EQ(h.rows.size(), 21u);
}

TEST(Cli, ResummedKeepsEveryStepButThinsTheFile) {
  fs::path out = scratch("thinned");
  ASSERT_EQ(run({"transient", "--out", out.string(), "--set", "h=0.05", "--set", "tau_end=0.3", "--set",
                 "snapshot_every=4", "--set", "gamma=closed", "--set", "g0=0.1", "--set", "resummed=1"}),
            0);
  fs::path d = out / "transient" / "default";
  // Steps 0, 4 and the final step 6.
  EXPECT_EQ(csv::read_file((d / "transient.csv").string()).rows.size(), 3u * 601u);
  EXPECT_EQ(csv::read_file((d / "residual.csv").string()).rows.size(), 7u);
}

TEST(Cli, MonteCarloIsByteIdenticalAndIdempotent) {
  fs::path out = scratch("mc");
  std::vector<std::string> args{"mc-transient", "--out",          out.string(), "--seed",        "11",
                                "--set",        "M=20000",        "--set",      "tau_end=4",     "--set",
                                "snapshots=1,2,4", "--set",       "g0=0.01"};
  ASSERT_EQ(run(args), 0);
  fs::path d = out / "mc-transient" / "default";
  std::string f1 = slurp(d / "fraction.csv"), h1 = slurp(d / "histogram.csv"), m1 = slurp(d / "moments.csv");
  ASSERT_EQ(run(args), 0);
  EXPECT_EQ(slurp(d / "fraction.csv"), f1);
  EXPECT_EQ(slurp(d / "histogram.csv"), h1);
  EXPECT_EQ(slurp(d / "moments.csv"), m1);
  csv::table t = csv::read_file((d / "fraction.csv").string());
  EXPECT_EQ(t.header, (std::vector<std::string>{"tau", "g_empirical"}));
  EXPECT_EQ(t.rows.size(), 3u);
}

TEST(Cli, SeedSweepIndependentOfJobs) {
  fs::path a = scratch("sweep_a"), b = scratch("sweep_b");
  auto args = [](const fs::path& o, const std::string& jobs) {
    return std::vector<std::string>{"mc-steady", "--out", o.string(), "--jobs", jobs, "--set", "M=5000",
                                    "--set",     "seeds=3", "--set", "tau_end=5", "--set", "snapshots=5"};
  };
  ASSERT_EQ(run(args(a, "1")), 0);
  ASSERT_EQ(run(args(b, "3")), 0);
  for (int s = 1; s <= 3; ++s) {
    std::string sub = "seed_" + std::to_string(s);
    std::string x = slurp(a / "mc-steady" / "default" / sub / "histogram.csv");
    std::string y = slurp(b / "mc-steady" / "default" / sub / "histogram.csv");
    // Headers differ only by the out path.
    EXPECT_EQ(x.substr(x.find("tau,u_bin")), y.substr(y.find("tau,u_bin")));
  }
}

TEST(Cli, CheckpointResumeMatchesStraightRun) {
  fs::path out = scratch("ckpt");
  fs::create_directories(out);
  std::string ck = (out / "pop.bin").string();
  auto base = [&](const std::string& name, const std::string& tau_end) {
    return std::vector<std::string>{"mc-transient", "--out", out.string(), "--set", "M=10000",
                                    "--set",        "name=" + name, "--set", "tau_end=" + tau_end,
                                    "--set",        "snapshots=6"};
  };
  ASSERT_EQ(run(base("straight", "6")), 0);
  auto first = base("first", "2");
  first.insert(first.end(), {"--set", "checkpoint=" + ck});
  ASSERT_EQ(run(first), 0);
  auto second = base("second", "6");
  second.insert(second.end(), {"--set", "resume=" + ck});
  ASSERT_EQ(run(second), 0);
  std::string x = slurp(out / "mc-transient" / "straight" / "histogram.csv");
  std::string y = slurp(out / "mc-transient" / "second" / "histogram.csv");
  EXPECT_EQ(x.substr(x.find("tau,u_bin")), y.substr(y.find("tau,u_bin")));
}

TEST(Cli, OracleTable) {
  fs::path out = scratch("oracle");
  ASSERT_EQ(run({"oracle", "--out", out.string(), "--jobs", "2", "--set", "boxes=0.2,0.1"}), 0);
  csv::table t = csv::read_file((out / "oracle" / "default" / "oracle.csv").string());
  EXPECT_EQ(t.header, (std::vector<std::string>{"box", "var1", "var2", "var_rel", "norm"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_GT(t.rows[0][1], t.rows[1][1]);
}

TEST(Cli, Fig1Bundle) {
  fs::path out = scratch("fig1");
  auto t0 = std::chrono::steady_clock::now();
  ASSERT_EQ(run({"fig1", "--out", out.string()}), 0);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 5.0);
  fs::path d = out / "fig1" / "default";
  csv::table g = csv::read_file((d / "fig1_gamma.csv").string());
  ASSERT_EQ(g.header.size(), 6u);
  for (std::size_t c = 1; c <= 5; ++c)
    for (std::size_t k = 1; k < g.rows.size(); ++k) EXPECT_GE(g.rows[k][c], g.rows[k - 1][c]);
  for (auto& r : g.rows) {
    EXPECT_EQ(r[5], 0.0);
    if (r[0] == 0) continue;
    for (std::size_t c = 2; c <= 4; ++c) EXPECT_LT(r[c], r[c - 1]);
  }
  UDensity p = density_from_table(csv::read_file((d / "fig1_inset.csv").string()));
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(derivative_sign_changes(p), 1);
}

TEST(Cli, BinaryRuns) {
  fs::path out = scratch("binary");
  std::string cmd = std::string(MFLOC_CLI_PATH) + " gamma --out " + out.string() + " > /dev/null";
  EXPECT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(out / "gamma" / "default" / "gamma.csv"));
  std::string bad = std::string(MFLOC_CLI_PATH) + " gamma --set bogus=1 --out " + out.string() + " 2> /dev/null";
  int status = std::system(bad.c_str());
  EXPECT_EQ(WEXITSTATUS(status), 1);
}
