#pragma once

// Experiment drivers behind the CLI: single runs with CSV energy traces,
// fine-step reference trajectories, convergence sweeps, timing benches and
// stability scans.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ieq/harness/config.hpp"
#include "ieq/integrators.hpp"
#include "ieq/models/fpu.hpp"
#include "ieq/models/plate.hpp"
#include "ieq/models/string.hpp"

namespace ieq::harness {

/// Round-trip decimal formatting (%.17g).
inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct BuiltModel {
  SystemPtr system;
  std::shared_ptr<const models::StringModel> string;
  std::shared_ptr<const models::PlateModel> plate;
  Vector q0;
  Vector p0;
  Index probe = 0;
};

inline BuiltModel build_model(const ExperimentConfig& cfg) {
  BuiltModel b;
  switch (cfg.model) {
    case ModelKind::fpu: {
      b.system = models::fpu_system(cfg.fpu);
      std::tie(b.q0, b.p0) = models::fpu_initial(cfg.fpu, cfg.alpha);
      break;
    }
    case ModelKind::string: {
      b.string = std::make_shared<const models::StringModel>(models::string_build(cfg.string));
      b.system = b.string->system;
      std::tie(b.q0, b.p0) = models::string_initial(*b.string, cfg.alpha);
      break;
    }
    case ModelKind::plate: {
      b.plate = std::make_shared<const models::PlateModel>(models::plate_build(cfg.plate));
      b.system = b.plate->system;
      std::tie(b.q0, b.p0) = models::plate_initial(*b.plate, cfg.alpha);
      break;
    }
  }
  b.probe = b.system->probe_index;
  if (cfg.probe) {
    if (*cfg.probe < 0 || *cfg.probe >= b.system->dim) {
      throw ConfigError("probe index " + std::to_string(*cfg.probe) + " outside [0, " +
                        std::to_string(b.system->dim) + ")");
    }
    b.probe = static_cast<Index>(*cfg.probe);
  }
  return b;
}

inline std::unique_ptr<Stepper> make_experiment_stepper(const ExperimentConfig& cfg,
                                                        SchemeKind scheme,
                                                        const BuiltModel& m, double k) {
  SchemeConfig sc = cfg.scheme_config(k);
  sc.validate();
  switch (scheme) {
    case SchemeKind::string_implicit:
      if (!m.string) throw ConfigError("string_implicit needs the string model");
      return std::make_unique<models::StringImplicitStepper>(m.string, m.q0, m.p0, sc,
                                                             cfg.newton);
    case SchemeKind::plate_linimp:
      if (!m.plate) throw ConfigError("plate_linimp needs the plate model");
      return std::make_unique<models::PlateLinImpStepper>(m.plate, m.q0, m.p0, sc);
    default: {
      ExperimentConfig tmp = cfg;
      tmp.scheme = scheme;
      sc.scheme = tmp.integrator_scheme();
      return make_stepper(m.system, m.q0, m.p0, sc);
    }
  }
}

/// (H - H0) / |H0|; H - H0 when H0 = 0.
inline double relative_deviation(double h, double h0) {
  return h0 == 0.0 ? h - h0 : (h - h0) / std::abs(h0);
}

// ---------------------------------------------------------------------------
// Persisted state
// ---------------------------------------------------------------------------

namespace detail {

inline void write_vector(std::ostream& out, const std::string& label, const Vector& v) {
  out << label << ' ' << v.size();
  for (Index i = 0; i < v.size(); ++i) out << ' ' << fmt(v[i]);
  out << '\n';
}

inline Vector read_vector(std::istream& in) {
  Index n = 0;
  if (!(in >> n) || n < 0) throw ConfigError("state file: bad vector length");
  Vector v(n);
  std::string token;
  for (Index i = 0; i < n; ++i) {
    if (!(in >> token)) throw ConfigError("state file: truncated vector");
    v[i] = std::stod(token);
  }
  return v;
}

}  // namespace detail

inline void write_state(std::ostream& out, const PersistedState& s) {
  out << "scheme " << s.scheme << '\n';
  out << "step " << s.step << '\n';
  out << "dt " << fmt(s.dt) << '\n';
  if (s.psi) out << "psi " << fmt(*s.psi) << '\n';
  detail::write_vector(out, "q", s.q);
  detail::write_vector(out, "q_prev", s.q_prev);
  for (const auto& [name, value] : s.extras) detail::write_vector(out, "extra " + name, value);
}

inline PersistedState read_state(std::istream& in) {
  PersistedState s;
  std::string key;
  while (in >> key) {
    if (key == "scheme") {
      in >> s.scheme;
    } else if (key == "step") {
      in >> s.step;
    } else if (key == "dt") {
      std::string v;
      in >> v;
      s.dt = std::stod(v);
    } else if (key == "psi") {
      std::string v;
      in >> v;
      s.psi = std::stod(v);
    } else if (key == "q") {
      s.q = detail::read_vector(in);
    } else if (key == "q_prev") {
      s.q_prev = detail::read_vector(in);
    } else if (key == "extra") {
      std::string name;
      in >> name;
      s.extras.emplace_back(name, detail::read_vector(in));
    } else {
      throw ConfigError("state file: unknown entry '" + key + "'");
    }
  }
  return s;
}

inline void save_state(const std::string& path, const PersistedState& s) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write state file '" + path + "'");
  write_state(out, s);
}

inline PersistedState load_state(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open state file '" + path + "'");
  return read_state(in);
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct RunSummary {
  std::string scheme;
  long long steps = 0;          // steps executed
  long long rows = 0;           // CSV data rows written
  double max_abs_hrel = 0.0;
  double wall_time = 0.0;       // s, stepping loop only
  double gradient_evals_per_step = 0.0;
  double linear_solves_per_step = 0.0;
  double h0 = 0.0;
  double h_final = 0.0;
  bool diverged = false;
  long long diverged_step = -1;
  std::string message;
  StepCounters counters;
};

inline const char* csv_header() { return "step,t,probe_q,probe_p,H,H_rel\n"; }

/// Steps cfg.scheme for the configured duration. Row n holds q^n at the
/// probe, p^{n+1/2} at the probe, the numerical energy and H_rel. A Diverged
/// exception ends the run early and is reported in the summary.
inline RunSummary run(const ExperimentConfig& cfg, std::ostream* csv) {
  cfg.validate();
  const BuiltModel m = build_model(cfg);
  auto stepper = make_experiment_stepper(cfg, cfg.scheme, m, cfg.dt);
  const long long total = cfg.resolved_steps();

  RunSummary s;
  s.scheme = std::string(stepper->name());
  s.h0 = stepper->energy();
  auto emit = [&] {
    const double h = stepper->energy();
    const double rel = relative_deviation(h, s.h0);
    s.max_abs_hrel = std::max(s.max_abs_hrel, std::abs(rel));
    s.h_final = h;
    if (csv != nullptr) {
      *csv << stepper->index() << ',' << fmt(stepper->time()) << ','
           << fmt(stepper->position()[m.probe]) << ',' << fmt(stepper->momentum()[m.probe])
           << ',' << fmt(h) << ',' << fmt(rel) << '\n';
    }
    ++s.rows;
  };
  if (csv != nullptr) *csv << csv_header();
  emit();

  const auto start = std::chrono::steady_clock::now();
  try {
    for (long long n = 1; n <= total; ++n) {
      stepper->step();
      if (n % cfg.output_stride == 0 || n == total) emit();
    }
  } catch (const Diverged& e) {
    s.diverged = true;
    s.diverged_step = e.step() >= 0 ? e.step() : stepper->index() + 1;
    s.message = e.what();
  }
  s.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (csv != nullptr) csv->flush();
  s.steps = stepper->index();
  s.counters = stepper->counters();
  if (s.steps > 0) {
    s.gradient_evals_per_step =
        static_cast<double>(s.counters.gradient_evals) / static_cast<double>(s.steps);
    s.linear_solves_per_step =
        static_cast<double>(s.counters.linear_solves) / static_cast<double>(s.steps);
  }
  if (!cfg.state_out.empty()) save_state(cfg.state_out, stepper->persist());
  return s;
}

inline void write_summary(std::ostream& out, const RunSummary& s) {
  out << "scheme " << s.scheme << '\n'
      << "steps " << s.steps << '\n'
      << "rows " << s.rows << '\n'
      << "max_abs_H_rel " << fmt(s.max_abs_hrel) << '\n'
      << "wall_time_s " << fmt(s.wall_time) << '\n'
      << "gradient_evals_per_step " << fmt(s.gradient_evals_per_step) << '\n'
      << "linear_solves_per_step " << fmt(s.linear_solves_per_step) << '\n'
      << "diverged " << (s.diverged ? "true" : "false") << '\n';
  if (s.diverged) out << "diverged_step " << s.diverged_step << '\n' << "reason " << s.message << '\n';
}

// ---------------------------------------------------------------------------
// reference
// ---------------------------------------------------------------------------

/// Full state q sampled every `sample_dt` from t = 0.
struct Trajectory {
  double sample_dt = 0.0;
  double fine_dt = 0.0;
  std::vector<Vector> q;
};

/// Returns m >= 0 with coarse / fine = 2^m, or throws NonCommensurateSteps.
inline int power_of_two_ratio(double coarse, double fine) {
  const double ratio = coarse / fine;
  const int m = static_cast<int>(std::lround(std::log2(ratio)));
  if (m < 0 || std::abs(ratio - std::ldexp(1.0, m)) > 1e-9 * ratio) {
    throw NonCommensurateSteps("fine_dt = " + fmt(fine) + " is not dt / 2^m for dt = " +
                               fmt(coarse));
  }
  return m;
}

/// Default fine step: the largest dt / 2^m not above 2^-20 s.
inline double default_fine_dt(double dt) {
  const double target = std::ldexp(1.0, -20);
  double fine = dt;
  while (fine > target * (1.0 + 1e-12)) fine *= 0.5;
  return fine;
}

inline double resolve_fine_dt(const ExperimentConfig& cfg, double coarse) {
  const double fine = cfg.fine_dt ? *cfg.fine_dt : default_fine_dt(coarse);
  power_of_two_ratio(coarse, fine);
  return fine;
}

/// Stormer-Verlet at `fine_dt`, sampled every `sample_dt` over `duration`.
inline Trajectory reference(const ExperimentConfig& cfg, double sample_dt, double fine_dt) {
  const int m = power_of_two_ratio(sample_dt, fine_dt);
  const long long stride = 1LL << m;
  const long long samples = cfg.steps_for(sample_dt);
  ExperimentConfig rc = cfg;
  rc.scheme = SchemeKind::sv;
  const BuiltModel model = build_model(rc);
  auto stepper = make_experiment_stepper(rc, SchemeKind::sv, model, fine_dt);
  if (auto* sv = dynamic_cast<StormerVerletStepper*>(stepper.get())) sv->set_track_energy(false);
  Trajectory t;
  t.sample_dt = sample_dt;
  t.fine_dt = fine_dt;
  t.q.reserve(static_cast<std::size_t>(samples + 1));
  t.q.push_back(stepper->position());
  for (long long j = 1; j <= samples; ++j) {
    for (long long i = 0; i < stride; ++i) stepper->step();
    t.q.push_back(stepper->position());
  }
  return t;
}

inline void write_trajectory(std::ostream& out, const Trajectory& t) {
  out << "# sample_dt=" << fmt(t.sample_dt) << " fine_dt=" << fmt(t.fine_dt) << '\n';
  out << "step,t";
  const Index n = t.q.empty() ? 0 : t.q.front().size();
  for (Index i = 0; i < n; ++i) out << ",q" << i;
  out << '\n';
  for (std::size_t j = 0; j < t.q.size(); ++j) {
    out << j << ',' << fmt(static_cast<double>(j) * t.sample_dt);
    for (Index i = 0; i < n; ++i) out << ',' << fmt(t.q[j][i]);
    out << '\n';
  }
}

inline Trajectory read_trajectory(std::istream& in) {
  Trajectory t;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# sample_dt=", 0) != 0) {
    throw ConfigError("reference file: missing '# sample_dt=' header");
  }
  {
    std::istringstream hdr(line.substr(2));
    std::string a;
    std::string b;
    hdr >> a >> b;
    t.sample_dt = std::stod(a.substr(a.find('=') + 1));
    t.fine_dt = std::stod(b.substr(b.find('=') + 1));
  }
  std::getline(in, line);  // column names
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() < 2) throw ConfigError("reference file: short row");
    Vector q(static_cast<Index>(vals.size() - 2));
    for (std::size_t i = 2; i < vals.size(); ++i) q[static_cast<Index>(i - 2)] = vals[i];
    t.q.push_back(std::move(q));
  }
  return t;
}

inline Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open reference file '" + path + "'");
  return read_trajectory(in);
}

// ---------------------------------------------------------------------------
// converge
// ---------------------------------------------------------------------------

struct ConvergeRow {
  std::string scheme;
  double dt = 0.0;
  double error = 0.0;
  long long steps = 0;
  bool diverged = false;
};

struct ConvergeResult {
  std::vector<ConvergeRow> rows;
  std::vector<std::pair<std::string, double>> slopes;  // least-squares log-log

  double slope(const std::string& scheme) const {
    for (const auto& [name, s] : slopes) {
      if (name == scheme) return s;
    }
    return std::numeric_limits<double>::quiet_NaN();
  }

  double error(const std::string& scheme, double dt) const {
    for (const auto& r : rows) {
      if (r.scheme == scheme && std::abs(r.dt - dt) <= 1e-12 * dt) return r.error;
    }
    return std::numeric_limits<double>::quiet_NaN();
  }
};

/// Least-squares slope of log(y) against log(x) over finite positive y.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0.0;
  double sy = 0.0;
  double sxx = 0.0;
  double sxy = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(y[i] > 0.0) || !std::isfinite(y[i])) continue;
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// sqrt(sum_n k |q^n - q_ref(n k)|^2) for one scheme and step.
inline ConvergeRow convergence_error(const ExperimentConfig& cfg, SchemeKind scheme,
                                     const BuiltModel& model, double k, const Trajectory& ref) {
  const int m = power_of_two_ratio(k, ref.sample_dt);
  const std::size_t stride = std::size_t{1} << m;
  ConvergeRow row;
  row.scheme = std::string(to_string(scheme));
  row.dt = k;
  row.steps = cfg.steps_for(k);
  if (static_cast<std::size_t>(row.steps) * stride >= ref.q.size() + stride) {
    throw ConfigError("reference trajectory is shorter than the run");
  }
  auto stepper = make_experiment_stepper(cfg, scheme, model, k);
  double sum = 0.0;
  try {
    for (long long n = 0; n <= row.steps; ++n) {
      if (n > 0) stepper->step();
      sum += k * (stepper->position() - ref.q[static_cast<std::size_t>(n) * stride]).squaredNorm();
    }
    row.error = std::sqrt(sum);
  } catch (const Diverged&) {
    row.diverged = true;
    row.error = std::numeric_limits<double>::infinity();
  }
  return row;
}

inline ConvergeResult converge(const ExperimentConfig& cfg, const Trajectory* given = nullptr) {
  cfg.validate();
  std::vector<double> dts = cfg.dt_list.empty() ? std::vector<double>{cfg.dt} : cfg.dt_list;
  std::vector<SchemeKind> schemes =
      cfg.schemes.empty() ? std::vector<SchemeKind>{cfg.scheme} : cfg.schemes;
  const double dt_min = *std::min_element(dts.begin(), dts.end());
  const double dt_max = *std::max_element(dts.begin(), dts.end());

  Trajectory computed;
  const Trajectory* ref = given;
  if (ref == nullptr && !cfg.reference.empty()) {
    computed = load_trajectory(cfg.reference);
    ref = &computed;
  }
  if (ref == nullptr) {
    const double fine = resolve_fine_dt(cfg, dt_max);
    power_of_two_ratio(dt_min, fine);
    computed = reference(cfg, dt_min, fine);
    ref = &computed;
  }
  for (double k : dts) power_of_two_ratio(k, ref->sample_dt);

  const BuiltModel model = build_model(cfg);
  ConvergeResult out;
  for (SchemeKind s : schemes) {
    std::vector<double> errs;
    for (double k : dts) {
      out.rows.push_back(convergence_error(cfg, s, model, k, *ref));
      errs.push_back(out.rows.back().error);
    }
    out.slopes.emplace_back(std::string(to_string(s)), loglog_slope(dts, errs));
  }
  return out;
}

inline void write_converge_csv(std::ostream& out, const ConvergeResult& r) {
  out << "scheme,dt,error,steps,diverged\n";
  for (const auto& row : r.rows) {
    out << row.scheme << ',' << fmt(row.dt) << ',' << fmt(row.error) << ',' << row.steps << ','
        << (row.diverged ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchRow {
  std::string scheme;
  double dt = 0.0;
  long long steps = 0;
  int repetitions = 0;
  double median_time = 0.0;  // s
  double gradient_evals_per_step = 0.0;
  double linear_solves_per_step = 0.0;
  bool diverged = false;
};

/// Median wall time of the stepping loop (construction excluded) over
/// `repetitions` runs after one discarded warm-up run. Energy is not
/// evaluated inside the timed loop.
inline BenchRow bench_one(const ExperimentConfig& cfg, SchemeKind scheme, const BuiltModel& model,
                          double k) {
  BenchRow row;
  row.scheme = std::string(to_string(scheme));
  row.dt = k;
  row.steps = cfg.steps_for(k);
  row.repetitions = cfg.repetitions;
  std::vector<double> times;
  for (int rep = -1; rep < cfg.repetitions; ++rep) {
    auto stepper = make_experiment_stepper(cfg, scheme, model, k);
    if (auto* sv = dynamic_cast<StormerVerletStepper*>(stepper.get())) sv->set_track_energy(false);
    const auto start = std::chrono::steady_clock::now();
    try {
      for (long long n = 0; n < row.steps; ++n) stepper->step();
    } catch (const Diverged&) {
      row.diverged = true;
    }
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (rep >= 0) times.push_back(t);
    const auto& c = stepper->counters();
    if (c.steps > 0) {
      row.gradient_evals_per_step =
          static_cast<double>(c.gradient_evals) / static_cast<double>(c.steps);
      row.linear_solves_per_step =
          static_cast<double>(c.linear_solves) / static_cast<double>(c.steps);
    }
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  row.median_time = n % 2 == 1 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
  return row;
}

inline std::vector<BenchRow> bench(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<double> dts = cfg.dt_list.empty() ? std::vector<double>{cfg.dt} : cfg.dt_list;
  std::vector<SchemeKind> schemes =
      cfg.schemes.empty() ? std::vector<SchemeKind>{cfg.scheme} : cfg.schemes;
  const BuiltModel model = build_model(cfg);
  std::vector<BenchRow> rows;
  for (double k : dts) {
    for (SchemeKind s : schemes) rows.push_back(bench_one(cfg, s, model, k));
  }
  return rows;
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "scheme,dt,steps,repetitions,median_time_s,gradient_evals_per_step,"
         "linear_solves_per_step,diverged\n";
  for (const auto& r : rows) {
    out << r.scheme << ',' << fmt(r.dt) << ',' << r.steps << ',' << r.repetitions << ','
        << fmt(r.median_time) << ',' << fmt(r.gradient_evals_per_step) << ','
        << fmt(r.linear_solves_per_step) << ',' << (r.diverged ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// scan
// ---------------------------------------------------------------------------

struct ScanRow {
  double dt = 0.0;
  bool stable = true;
  long long diverged_step = -1;
};

/// dt_list if given, else dt_count points from dt_min to dt_max (linear or
/// logarithmic spacing).
inline std::vector<double> scan_grid(const ExperimentConfig& cfg) {
  if (!cfg.dt_list.empty()) return cfg.dt_list;
  if (cfg.dt_count < 1 || !(cfg.dt_min > 0.0) || !(cfg.dt_max >= cfg.dt_min)) {
    throw ConfigError("scan needs dt_list or dt_min <= dt_max and dt_count >= 1");
  }
  std::vector<double> out;
  for (int i = 0; i < cfg.dt_count; ++i) {
    const double f = cfg.dt_count == 1 ? 0.0 : static_cast<double>(i) / (cfg.dt_count - 1);
    out.push_back(cfg.dt_log ? cfg.dt_min * std::pow(cfg.dt_max / cfg.dt_min, f)
                             : cfg.dt_min + f * (cfg.dt_max - cfg.dt_min));
  }
  return out;
}

/// Runs cfg.scheme at each dt over the configured duration on a fixed grid;
/// divergence is recorded, not raised. The split-scheme bound check is
/// bypassed so the empirical boundary can be located.
inline std::vector<ScanRow> scan(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentConfig sc = cfg;
  sc.allow_unstable = true;
  const BuiltModel model = build_model(sc);
  std::vector<ScanRow> rows;
  for (double k : scan_grid(cfg)) {
    ScanRow row;
    row.dt = k;
    try {
      auto stepper = make_experiment_stepper(sc, sc.scheme, model, k);
      const long long steps = sc.steps_for(k);
      for (long long n = 0; n < steps; ++n) stepper->step();
    } catch (const Diverged& e) {
      row.stable = false;
      row.diverged_step = e.step();
    }
    rows.push_back(row);
  }
  return rows;
}

/// Largest dt of the leading run of stable rows (rows sorted by dt); NaN if
/// the first row is already unstable.
inline double stability_boundary(std::vector<ScanRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const ScanRow& a, const ScanRow& b) { return a.dt < b.dt; });
  double last = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : rows) {
    if (!r.stable) break;
    last = r.dt;
  }
  return last;
}

inline void write_scan_csv(std::ostream& out, const std::vector<ScanRow>& rows) {
  out << "dt,stable,diverged_step\n";
  for (const auto& r : rows) {
    out << fmt(r.dt) << ',' << (r.stable ? 1 : 0) << ',' << r.diverged_step << '\n';
  }
}

}  // namespace ieq::harness
