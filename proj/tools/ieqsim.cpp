// ieqsim: batch driver for runs, references, convergence sweeps, benches and
// stability scans. Exit codes: 0 ok, 2 config error, 3 diverged, 4 solver
// failure.

#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ieq/ieq.hpp"

namespace {

using namespace ieq;
using namespace ieq::harness;

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string output;
};

ExperimentConfig load(const Options& o) {
  KeyValues kv;
  if (!o.config.empty()) kv = load_config_file(o.config);
  for (const auto& s : o.sets) apply_assignment(kv, s, "--set");
  ExperimentConfig cfg = make_experiment_config(kv);
  if (!o.output.empty()) cfg.output = o.output;
  return cfg;
}

// CSV goes to the output file when one is given, otherwise to stdout; the
// summary then goes to stdout or, if stdout carries CSV, to stderr.
struct Sinks {
  std::unique_ptr<std::ofstream> file;
  std::ostream* csv = &std::cout;
  std::ostream* summary = &std::cerr;

  explicit Sinks(const std::string& path) {
    if (path.empty()) return;
    file = std::make_unique<std::ofstream>(path);
    if (!*file) throw ConfigError("cannot write output file '" + path + "'");
    csv = file.get();
    summary = &std::cout;
  }
};

int cmd_run(const Options& o) {
  const ExperimentConfig cfg = load(o);
  Sinks out(cfg.output);
  const RunSummary s = run(cfg, out.csv);
  write_summary(*out.summary, s);
  return s.diverged ? 3 : 0;
}

int cmd_reference(const Options& o) {
  const ExperimentConfig cfg = load(o);
  cfg.validate();
  const Trajectory t = reference(cfg, cfg.dt, resolve_fine_dt(cfg, cfg.dt));
  Sinks out(cfg.output);
  write_trajectory(*out.csv, t);
  *out.summary << "fine_dt " << fmt(t.fine_dt) << "\nsamples " << t.q.size() << '\n';
  return 0;
}

int cmd_converge(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const ConvergeResult r = converge(cfg);
  Sinks out(cfg.output);
  write_converge_csv(*out.csv, r);
  for (const auto& [name, slope] : r.slopes) *out.summary << "slope " << name << ' ' << fmt(slope) << '\n';
  return 0;
}

int cmd_bench(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const auto rows = bench(cfg);
  Sinks out(cfg.output);
  write_bench_csv(*out.csv, rows);
  return 0;
}

int cmd_scan(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const auto rows = scan(cfg);
  Sinks out(cfg.output);
  write_scan_csv(*out.csv, rows);
  *out.summary << "stability_boundary " << fmt(stability_boundary(rows)) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-conserving time integration experiments"};
  app.require_subcommand(1);

  Options opts;
  int (*handler)(const Options&) = nullptr;
  auto add = [&](const char* name, const char* help, int (*fn)(const Options&)) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config, "key = value config file");
    sub->add_option("--set", opts.sets, "override, key=value (repeatable)")->take_all();
    sub->add_option("--output", opts.output, "CSV output path");
    sub->callback([&handler, fn] { handler = fn; });
  };
  add("run", "step one scheme and write the energy trace", cmd_run);
  add("reference", "fine-step Stormer-Verlet reference trajectory", cmd_reference);
  add("converge", "error against a reference over dt_list", cmd_converge);
  add("bench", "median wall time per scheme and dt", cmd_bench);
  add("scan", "stability over a dt grid", cmd_scan);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    return handler(opts);
  } catch (const Diverged& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 3;
  } catch (const SolverFailure& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return 4;
  } catch (const SingularUpdate& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return 4;
  } catch (const DegeneratePotential& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return 4;
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
