#pragma once

// Experiment configuration: flat `key = value` text, one key per line, `#`
// starts a comment. Later assignments (including --set overrides) win.

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ieq/errors.hpp"
#include "ieq/integrators.hpp"
#include "ieq/models/fpu.hpp"
#include "ieq/models/plate.hpp"
#include "ieq/models/string.hpp"

namespace ieq::harness {

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace detail

/// Parses one `key=value` assignment into `out`.
inline void apply_assignment(KeyValues& out, std::string_view line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError(where + ": expected key = value, got '" + std::string(line) + "'");
  }
  std::string key = detail::trim(line.substr(0, eq));
  std::string value = detail::trim(line.substr(eq + 1));
  if (key.empty()) throw ConfigError(where + ": empty key");
  out[key] = value;
}

inline KeyValues parse_config_text(std::string_view text, const std::string& source = "config") {
  KeyValues out;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view line = text.substr(pos, end == std::string_view::npos ? text.npos : end - pos);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (!detail::trim(line).empty()) {
      apply_assignment(out, line, source + ":" + std::to_string(line_no));
    }
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return out;
}

inline KeyValues load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

enum class ModelKind { fpu, string, plate };

inline std::string_view to_string(ModelKind m) {
  switch (m) {
    case ModelKind::fpu: return "fpu";
    case ModelKind::string: return "string";
    case ModelKind::plate: return "plate";
  }
  return "?";
}

/// Every scheme the harness can drive. The first five are the generic
/// integrators; the last two are model-specific baselines.
enum class SchemeKind { sv, marazzato, ieq, ieq_split, ieq_variable, string_implicit, plate_linimp };

inline std::string_view to_string(SchemeKind s) {
  switch (s) {
    case SchemeKind::sv: return "sv";
    case SchemeKind::marazzato: return "marazzato";
    case SchemeKind::ieq: return "ieq";
    case SchemeKind::ieq_split: return "ieq_split";
    case SchemeKind::ieq_variable: return "ieq_variable";
    case SchemeKind::string_implicit: return "string_implicit";
    case SchemeKind::plate_linimp: return "plate_linimp";
  }
  return "?";
}

inline SchemeKind parse_scheme(std::string_view name) {
  for (SchemeKind s : {SchemeKind::sv, SchemeKind::marazzato, SchemeKind::ieq,
                       SchemeKind::ieq_split, SchemeKind::ieq_variable,
                       SchemeKind::string_implicit, SchemeKind::plate_linimp}) {
    if (to_string(s) == name) return s;
  }
  if (name == "stormer_verlet") return SchemeKind::sv;
  throw ConfigError("unknown scheme '" + std::string(name) + "'");
}

inline ModelKind parse_model(std::string_view name) {
  for (ModelKind m : {ModelKind::fpu, ModelKind::string, ModelKind::plate}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown model '" + std::string(name) + "'");
}

inline bool scheme_valid_for(SchemeKind s, ModelKind m) {
  if (s == SchemeKind::string_implicit) return m == ModelKind::string;
  if (s == SchemeKind::plate_linimp) return m == ModelKind::plate;
  return true;
}

struct ExperimentConfig {
  ModelKind model = ModelKind::fpu;
  SchemeKind scheme = SchemeKind::ieq;
  double dt = 1e-3;
  double duration = 1.0;
  std::optional<long long> steps;  // overrides duration when set
  double alpha = 0.0;
  std::optional<double> eps;       // model default when unset
  int quad_nodes = 4;
  double divergence_threshold = 10.0;
  bool allow_unstable = false;
  int start_order = 2;
  std::vector<double> dt_sequence;
  std::optional<long long> probe;  // state index; model default when unset
  unsigned long long seed = 0;
  std::string output;
  std::string state_out;
  long long output_stride = 1;

  // reference / converge
  std::optional<double> fine_dt;
  std::string reference;
  std::vector<double> dt_list;
  std::vector<SchemeKind> schemes;

  // scan
  double dt_min = 0.0;
  double dt_max = 0.0;
  int dt_count = 0;
  bool dt_log = false;

  // bench
  int repetitions = 3;

  models::NewtonOptions newton;
  models::FpuParams fpu;
  models::StringParams string;
  models::PlateParams plate;
  bool string_grid_set = false;  // string.grid_dt or string.segments given
  bool plate_grid_set = false;

  double resolved_eps() const {
    if (eps) return *eps;
    return model == ModelKind::string ? string.eps : 0.0;
  }

  long long resolved_steps() const {
    if (steps) return *steps;
    return static_cast<long long>(std::llround(duration / dt));
  }

  /// Steps covering `duration` at step size k.
  long long steps_for(double k) const {
    if (steps) return static_cast<long long>(std::llround(static_cast<double>(*steps) * dt / k));
    return static_cast<long long>(std::llround(duration / k));
  }

  Scheme integrator_scheme() const {
    switch (scheme) {
      case SchemeKind::sv: return Scheme::stormer_verlet;
      case SchemeKind::marazzato: return Scheme::marazzato;
      case SchemeKind::ieq: return Scheme::ieq;
      case SchemeKind::ieq_split: return Scheme::ieq_split;
      case SchemeKind::ieq_variable: return Scheme::ieq_variable;
      default: return Scheme::stormer_verlet;
    }
  }

  SchemeConfig scheme_config(double k) const {
    SchemeConfig c;
    c.scheme = integrator_scheme();
    c.dt = k;
    c.dt_sequence = dt_sequence;
    c.eps = resolved_eps();
    c.quad_nodes = quad_nodes;
    c.divergence_threshold = divergence_threshold;
    c.allow_unstable = allow_unstable;
    c.start_order = start_order;
    return c;
  }

  /// Grid step for the string and plate grid rules: explicit *.grid_dt, else dt.
  void bind_grid_to(double k) {
    if (!string_grid_set) string.grid_dt = k;
    if (!plate_grid_set) plate.grid_dt = k;
  }

  void validate() const {
    if (!scheme_valid_for(scheme, model)) {
      throw ConfigError(std::string("scheme ") + std::string(to_string(scheme)) +
                        " is not available for model " + std::string(to_string(model)));
    }
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be > 0");
    if (!steps && !(duration > 0.0)) throw ConfigError("duration must be > 0");
    if (steps && *steps < 0) throw ConfigError("steps must be >= 0");
    if (output_stride < 1) throw ConfigError("output_stride must be >= 1");
    if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
    if (fine_dt && !(*fine_dt > 0.0)) throw ConfigError("fine_dt must be > 0");
    for (double k : dt_list) {
      if (!(k > 0.0)) throw ConfigError("dt_list entries must be > 0");
    }
    for (SchemeKind s : schemes) {
      if (!scheme_valid_for(s, model)) {
        throw ConfigError(std::string("scheme ") + std::string(to_string(s)) +
                          " is not available for model " + std::string(to_string(model)));
      }
    }
    if (!(newton.tol > 0.0) || newton.max_iter < 1) throw ConfigError("bad Newton options");
    scheme_config(dt).validate();
  }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("key '" + key + "': '" + v + "' is not a number");
  }
  return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(parse_double(key, s));
  return out;
}

}  // namespace detail

inline ExperimentConfig make_experiment_config(const KeyValues& kv) {
  using namespace detail;
  ExperimentConfig c;
  const std::set<std::string> known = {
      "model", "scheme", "dt", "duration", "steps", "alpha", "eps", "quad_nodes",
      "divergence_threshold", "allow_unstable", "start_order", "dt_sequence", "probe",
      "seed", "output", "state_out", "output_stride", "fine_dt", "reference", "dt_list",
      "schemes", "dt_min", "dt_max", "dt_count", "dt_spacing", "repetitions",
      "newton_tol", "newton_max_iter",
      "fpu.half_count", "fpu.omega", "fpu.quartic",
      "string.rho", "string.area", "string.length", "string.young", "string.tension",
      "string.segments", "string.grid_dt", "string.eps",
      "plate.rho", "plate.thickness", "plate.young", "plate.poisson", "plate.side",
      "plate.grid", "plate.grid_dt", "plate.probe_x", "plate.probe_y"};
  for (const auto& [key, value] : kv) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  auto num = [&](const char* key, double& dst) {
    if (auto v = get(key)) dst = parse_double(key, *v);
  };
  auto integer = [&](const char* key, auto& dst) {
    if (auto v = get(key)) dst = static_cast<std::remove_reference_t<decltype(dst)>>(parse_int(key, *v));
  };

  if (auto v = get("model")) c.model = parse_model(*v);
  if (auto v = get("scheme")) c.scheme = parse_scheme(*v);
  num("dt", c.dt);
  num("duration", c.duration);
  if (auto v = get("steps")) c.steps = parse_int("steps", *v);
  num("alpha", c.alpha);
  if (auto v = get("eps")) c.eps = parse_double("eps", *v);
  integer("quad_nodes", c.quad_nodes);
  num("divergence_threshold", c.divergence_threshold);
  if (auto v = get("allow_unstable")) c.allow_unstable = parse_bool("allow_unstable", *v);
  integer("start_order", c.start_order);
  if (auto v = get("dt_sequence")) c.dt_sequence = parse_doubles("dt_sequence", *v);
  if (auto v = get("probe")) c.probe = parse_int("probe", *v);
  if (auto v = get("seed")) c.seed = static_cast<unsigned long long>(parse_int("seed", *v));
  if (auto v = get("output")) c.output = *v;
  if (auto v = get("state_out")) c.state_out = *v;
  integer("output_stride", c.output_stride);
  if (auto v = get("fine_dt")) c.fine_dt = parse_double("fine_dt", *v);
  if (auto v = get("reference")) c.reference = *v;
  if (auto v = get("dt_list")) c.dt_list = parse_doubles("dt_list", *v);
  if (auto v = get("schemes")) {
    for (const auto& s : split_list(*v)) c.schemes.push_back(parse_scheme(s));
  }
  num("dt_min", c.dt_min);
  num("dt_max", c.dt_max);
  integer("dt_count", c.dt_count);
  if (auto v = get("dt_spacing")) {
    if (*v == "log") {
      c.dt_log = true;
    } else if (*v != "linear") {
      throw ConfigError("dt_spacing must be linear or log");
    }
  }
  integer("repetitions", c.repetitions);
  num("newton_tol", c.newton.tol);
  integer("newton_max_iter", c.newton.max_iter);

  integer("fpu.half_count", c.fpu.half_count);
  num("fpu.omega", c.fpu.omega);
  if (auto v = get("fpu.quartic")) c.fpu.quartic = parse_bool("fpu.quartic", *v);

  num("string.rho", c.string.rho);
  num("string.area", c.string.area);
  num("string.length", c.string.length);
  num("string.young", c.string.young);
  num("string.tension", c.string.tension);
  integer("string.segments", c.string.segments);
  num("string.grid_dt", c.string.grid_dt);
  num("string.eps", c.string.eps);
  c.string_grid_set = get("string.grid_dt") || get("string.segments");

  num("plate.rho", c.plate.rho);
  num("plate.thickness", c.plate.thickness);
  num("plate.young", c.plate.young);
  num("plate.poisson", c.plate.poisson);
  num("plate.side", c.plate.side);
  integer("plate.grid", c.plate.grid);
  num("plate.grid_dt", c.plate.grid_dt);
  num("plate.probe_x", c.plate.probe_x);
  num("plate.probe_y", c.plate.probe_y);
  c.plate_grid_set = get("plate.grid_dt") || get("plate.grid");

  c.bind_grid_to(c.dt);
  c.validate();
  return c;
}

}  // namespace ieq::harness
