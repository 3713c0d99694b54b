#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "ieq/ieq.hpp"

namespace ieq::harness {
namespace {

ExperimentConfig cfg(const std::string& text) {
  return make_experiment_config(parse_config_text(text, "test"));
}

std::filesystem::path scratch_dir() {
  auto dir = std::filesystem::temp_directory_path() / "ieq_harness_test";
  std::filesystem::create_directories(dir);
  return dir;
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

TEST(Config, ParsesCommentsAndOverrides) {
  KeyValues kv = parse_config_text(
      "# FPU run\nmodel = fpu\n\nscheme=ieq_split   # trailing comment\ndt = 5e-4\nalpha=100\n");
  apply_assignment(kv, "alpha=7", "--set");
  const ExperimentConfig c = make_experiment_config(kv);
  EXPECT_EQ(c.model, ModelKind::fpu);
  EXPECT_EQ(c.scheme, SchemeKind::ieq_split);
  EXPECT_DOUBLE_EQ(c.dt, 5e-4);
  EXPECT_DOUBLE_EQ(c.alpha, 7.0);
  EXPECT_EQ(c.resolved_steps(), 2000);
}

TEST(Config, Rejections) {
  EXPECT_THROW(cfg("bogus=1\n"), ConfigError);
  EXPECT_THROW(cfg("dt\n"), ConfigError);
  EXPECT_THROW(cfg("dt=abc\n"), ConfigError);
  EXPECT_THROW(cfg("scheme=rk4\n"), ConfigError);
  EXPECT_THROW(cfg("model=fpu\nscheme=string_implicit\n").validate(), ConfigError);
  EXPECT_THROW(cfg("model=string\nscheme=plate_linimp\n").validate(), ConfigError);
  EXPECT_THROW(cfg("dt=-1\n").validate(), ConfigError);
  EXPECT_THROW(cfg("dt_spacing=cubic\n"), ConfigError);
  EXPECT_NO_THROW(cfg("model=plate\nscheme=plate_linimp\n").validate());
}

TEST(Config, GridFollowsDtUnlessSet) {
  EXPECT_EQ(cfg("model=plate\ndt=2e-5\n").plate.resolved_grid(), 31);
  EXPECT_EQ(cfg("model=plate\ndt=2e-5\nplate.grid_dt=1e-5\n").plate.resolved_grid(), 45);
  EXPECT_EQ(cfg("model=string\ndt=2.4e-7\n").string.resolved_segments(), 984);
  EXPECT_EQ(cfg("model=string\nstring.segments=50\n").string.resolved_segments(), 50);
}

TEST(Run, CsvHeaderRowsAndSummary) {
  const ExperimentConfig c = cfg("model=fpu\nscheme=ieq\ndt=1e-3\nsteps=100\nalpha=100\n");
  std::ostringstream csv;
  const RunSummary s = run(c, &csv);
  const std::string out = csv.str();
  EXPECT_EQ(out.substr(0, out.find('\n') + 1), "step,t,probe_q,probe_p,H,H_rel\n");
  EXPECT_EQ(count_lines(out), 102);
  EXPECT_EQ(s.rows, 101);
  EXPECT_EQ(s.steps, 100);
  EXPECT_FALSE(s.diverged);
  EXPECT_DOUBLE_EQ(s.gradient_evals_per_step, 1.0);
  EXPECT_LE(s.max_abs_hrel, 1e-13);
}

TEST(Run, OutputStrideKeepsLastRow) {
  const ExperimentConfig c =
      cfg("model=fpu\nscheme=sv\ndt=1e-3\nsteps=10\nalpha=1\noutput_stride=4\n");
  std::ostringstream csv;
  const RunSummary s = run(c, &csv);
  EXPECT_EQ(s.rows, 4);  // steps 0, 4, 8, 10
  EXPECT_NE(csv.str().find("\n10,"), std::string::npos);
}

TEST(Run, ZeroAmplitudeGivesZeroEnergy) {
  std::ostringstream csv;
  const RunSummary s = run(cfg("model=fpu\nscheme=sv\nalpha=0\nsteps=20\n"), &csv);
  EXPECT_EQ(s.h0, 0.0);
  EXPECT_EQ(s.max_abs_hrel, 0.0);
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) EXPECT_EQ(line.substr(line.find(',', line.find(',') + 1)), ",0,0,0,0");
}

TEST(Run, DeterministicOutput) {
  const ExperimentConfig c = cfg("model=fpu\nscheme=marazzato\nalpha=100\nsteps=300\n");
  std::ostringstream a;
  std::ostringstream b;
  run(c, &a);
  run(c, &b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Run, DivergenceIsReportedWithPartialCsv) {
  const ExperimentConfig c = cfg("model=plate\nscheme=sv\nalpha=10\ndt=5e-5\nsteps=200\n"
                                 "plate.grid_dt=2e-5\n");
  std::ostringstream csv;
  const RunSummary s = run(c, &csv);
  EXPECT_TRUE(s.diverged);
  EXPECT_GT(s.diverged_step, 0);
  EXPECT_LT(s.diverged_step, 200);
  EXPECT_EQ(count_lines(csv.str()) - 1, s.rows);
}

TEST(Run, PersistedStateReproducesLastEnergy) {
  const auto path = (scratch_dir() / "state.txt").string();
  const char* setups[] = {
      "model=fpu\nscheme=ieq_split\nalpha=100\nsteps=250\n",
      "model=fpu\nscheme=marazzato\nalpha=10\nsteps=250\n",
      "model=string\nscheme=string_implicit\nalpha=300\nstring.segments=30\ndt=2e-6\nsteps=50\n",
      "model=plate\nscheme=plate_linimp\nalpha=10\nplate.grid=10\ndt=1e-5\nsteps=50\n"};
  for (const char* text : setups) {
    ExperimentConfig c = cfg(text);
    c.state_out = path;
    const RunSummary s = run(c, nullptr);
    const PersistedState st = load_state(path);
    const BuiltModel m = build_model(c);
    auto stepper = make_experiment_stepper(c, c.scheme, m, c.dt);
    EXPECT_EQ(st.step, s.steps);
    EXPECT_NEAR(stepper->energy_of(st), s.h_final, 1e-14 * std::abs(s.h_final)) << text;
  }
}

TEST(Reference, FineEqualsCoarseReproducesRun) {
  ExperimentConfig c = cfg("model=fpu\nscheme=sv\nalpha=100\ndt=1e-3\nsteps=200\nfine_dt=1e-3\n");
  const ConvergeResult r = converge(c);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].error, 0.0);
}

TEST(Reference, CommensurabilityRules) {
  EXPECT_EQ(power_of_two_ratio(1e-3, 1e-3 / 1024), 10);
  EXPECT_THROW(power_of_two_ratio(1e-3, 3e-4), NonCommensurateSteps);
  EXPECT_THROW(power_of_two_ratio(1e-3, 2e-3), NonCommensurateSteps);
  const double fine = default_fine_dt(1e-3);
  EXPECT_LE(fine, std::ldexp(1.0, -20));
  EXPECT_GT(2.0 * fine, std::ldexp(1.0, -20));
  const ExperimentConfig c = cfg("model=fpu\nscheme=sv\ndt=1e-3\nsteps=10\nfine_dt=3e-4\n");
  EXPECT_THROW(converge(c), NonCommensurateSteps);
}

TEST(Reference, DeterministicAndRoundTrips) {
  const ExperimentConfig c = cfg("model=fpu\nalpha=100\ndt=1e-3\nsteps=20\n");
  const Trajectory a = reference(c, 1e-3, 1e-3 / 64);
  const Trajectory b = reference(c, 1e-3, 1e-3 / 64);
  ASSERT_EQ(a.q.size(), 21u);
  std::ostringstream out;
  write_trajectory(out, a);
  std::ostringstream again;
  write_trajectory(again, b);
  EXPECT_EQ(out.str(), again.str());
  std::istringstream in(out.str());
  const Trajectory back = read_trajectory(in);
  ASSERT_EQ(back.q.size(), a.q.size());
  for (std::size_t j = 0; j < a.q.size(); ++j) EXPECT_EQ(back.q[j], a.q[j]);
  EXPECT_EQ(back.sample_dt, a.sample_dt);
}

TEST(Converge, SlopeOfExactPowerLaw) {
  EXPECT_NEAR(loglog_slope({1.0, 2.0, 4.0, 8.0}, {3.0, 12.0, 48.0, 192.0}), 2.0, 1e-12);
  EXPECT_TRUE(std::isnan(loglog_slope({1.0}, {1.0})));
}

TEST(Converge, HalvingQuartersTheError) {
  const ExperimentConfig c =
      cfg("model=fpu\nalpha=10\ndt=1e-3\nduration=0.2\ndt_list=1e-3,5e-4,2.5e-4\n"
          "schemes=sv,ieq\nfine_dt=1.953125e-06\n");
  const ConvergeResult r = converge(c);
  for (const char* s : {"sv", "ieq"}) {
    const double ratio = r.error(s, 5e-4) / r.error(s, 2.5e-4);
    EXPECT_GE(ratio, 3.2) << s;
    EXPECT_LE(ratio, 4.8) << s;
    EXPECT_NEAR(r.slope(s), 2.0, 0.2) << s;
  }
}

TEST(Bench, TinyRunGivesFiniteTimes) {
  const auto rows = bench(cfg("model=fpu\nsteps=50\nschemes=sv,ieq,marazzato\nrepetitions=1\n"));
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_GT(r.median_time, 0.0);
    EXPECT_TRUE(std::isfinite(r.median_time));
    EXPECT_EQ(r.steps, 50);
  }
  EXPECT_DOUBLE_EQ(rows[2].gradient_evals_per_step, 4.0);
}

TEST(Scan, GridAndBoundary) {
  const auto lin = scan_grid(cfg("dt_min=1\ndt_max=3\ndt_count=3\n"));
  EXPECT_EQ(lin, (std::vector<double>{1.0, 2.0, 3.0}));
  const auto lg = scan_grid(cfg("dt_min=1e-4\ndt_max=1e-2\ndt_count=3\ndt_spacing=log\n"));
  EXPECT_NEAR(lg[1], 1e-3, 1e-15);
  EXPECT_THROW(scan_grid(cfg("dt_count=0\n")), ConfigError);

  // Linear FPU under SV is stable exactly for dt < 2 / omega.
  const auto rows = scan(cfg("model=fpu\nscheme=sv\nalpha=1\nfpu.quartic=false\nduration=20\n"
                             "dt_min=0.035\ndt_max=0.045\ndt_count=11\n"));
  const double boundary = stability_boundary(rows);
  EXPECT_GE(boundary, 0.039 - 1e-12);
  EXPECT_LE(boundary, 0.040 + 1e-12);
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

int ieqsim(const std::string& args) {
  const std::string cmd = std::string(IEQSIM_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch_dir();
  const auto conf = dir / "fpu.cfg";
  std::ofstream(conf) << "model = fpu\nscheme = ieq\nalpha = 100\ndt = 1e-3\nsteps = 50\n";
  const auto csv = dir / "run.csv";
  EXPECT_EQ(ieqsim("run --config " + conf.string() + " --output " + csv.string()), 0);
  EXPECT_EQ(count_lines(slurp(csv)), 52);
  EXPECT_EQ(ieqsim("run --config " + conf.string() + " --set bogus=1"), 2);
  EXPECT_EQ(ieqsim("run --config " + (dir / "missing.cfg").string()), 2);
  EXPECT_EQ(ieqsim("run --set model=fpu --set scheme=string_implicit"), 2);
  EXPECT_EQ(ieqsim("frobnicate"), 2);
  EXPECT_EQ(ieqsim("run --set model=plate --set scheme=sv --set alpha=10 --set dt=5e-5 "
                   "--set plate.grid_dt=2e-5 --set steps=100 --output " +
                   (dir / "div.csv").string()),
            3);
  EXPECT_GT(count_lines(slurp(dir / "div.csv")), 1);
  EXPECT_EQ(ieqsim("run --set model=string --set scheme=string_implicit --set string.segments=20 "
                   "--set alpha=300 --set dt=2e-6 --set steps=5 --set newton_max_iter=1 "
                   "--set newton_tol=1e-30"),
            4);
  EXPECT_EQ(ieqsim("converge --set model=fpu --set steps=10 --set fine_dt=3e-4"), 2);
}

TEST(Cli, Subcommands) {
  const auto dir = scratch_dir();
  EXPECT_EQ(ieqsim("reference --set model=fpu --set alpha=10 --set dt=5e-4 --set steps=40 --set fine_dt=1.5625e-05 "
                   "--output " + (dir / "ref.csv").string()),
            0);
  EXPECT_EQ(ieqsim("converge --set model=fpu --set alpha=10 --set steps=20 --set dt_list=1e-3,5e-4 "
                   "--set schemes=sv,ieq --set reference=" + (dir / "ref.csv").string() +
                   " --output " + (dir / "conv.csv").string()),
            0);
  EXPECT_EQ(count_lines(slurp(dir / "conv.csv")), 5);
  EXPECT_EQ(ieqsim("bench --set model=fpu --set steps=10 --set repetitions=1 --output " +
                   (dir / "bench.csv").string()),
            0);
  EXPECT_EQ(ieqsim("scan --set model=fpu --set scheme=ieq_split --set alpha=100 --set duration=1 --set dt_list=0.01,0.05 "
                   "--output " + (dir / "scan.csv").string()),
            0);
  EXPECT_EQ(slurp(dir / "scan.csv"), "dt,stable,diverged_step\n0.01,1,-1\n0.050000000000000003,0,2\n");
}

}  // namespace
}  // namespace ieq::harness
