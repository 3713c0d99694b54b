#pragma once

// Time-stepping schemes for separable Hamiltonian systems:
//   - Stormer-Verlet (two-step form)
//   - the free-flight scheme of Marazzato et al. (quadrature of grad V along
//     the free-flight path)
//   - the explicit quadratised (IEQ) scheme, non-split and split, whose
//     linearly implicit update I + alpha beta^T is inverted by
//     Sherman-Morrison
//   - the variable-step IEQ scheme in (q, p, psi) form.
//
// Every IEQ variant conserves its numerical energy to rounding error.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ieq/errors.hpp"
#include "ieq/hamiltonian.hpp"
#include "ieq/linalg.hpp"
#include "ieq/quadrature.hpp"

namespace ieq {

enum class Scheme { stormer_verlet, marazzato, ieq, ieq_split, ieq_variable };

inline std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::stormer_verlet: return "sv";
    case Scheme::marazzato: return "marazzato";
    case Scheme::ieq: return "ieq";
    case Scheme::ieq_split: return "ieq_split";
    case Scheme::ieq_variable: return "ieq_variable";
  }
  return "?";
}

struct SchemeConfig {
  Scheme scheme = Scheme::ieq;
  double dt = 1e-3;
  // q-step sequence k^{n+1/2} for ieq_variable, cycled; empty means dt.
  std::vector<double> dt_sequence;
  double eps = 0.0;
  int quad_nodes = 4;
  double divergence_threshold = 10.0;
  // Permit ieq_split above its stability bound.
  bool allow_unstable = false;
  // Order of the Taylor start for q^1: 1 is q0 + k M^{-1} p0, 2 also
  // subtracts (k^2/2) M^{-1} grad V(q0).
  int start_order = 2;

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be > 0");
    for (double k : dt_sequence) {
      if (!(k > 0.0) || !std::isfinite(k)) {
        throw ConfigError("dt_sequence entries must be > 0");
      }
    }
    if (quad_nodes < 1) throw ConfigError("quad_nodes must be >= 1");
    if (start_order != 1 && start_order != 2) {
      throw ConfigError("start_order must be 1 or 2");
    }
    if (!(eps >= 0.0)) throw ConfigError("eps must be >= 0");
    if (!(divergence_threshold > 0.0)) {
      throw ConfigError("divergence_threshold must be > 0");
    }
  }
};

/// Work tallies for the stepping loop (initialisation is not counted).
struct StepCounters {
  std::uint64_t steps = 0;
  std::uint64_t gradient_evals = 0;
  std::uint64_t mass_solves = 0;
  std::uint64_t linear_solves = 0;
  OpCounter ops;  // vector arithmetic outside gradient and mass solves
};

namespace detail {

inline void tally_gradient(StepCounters* c) {
  if (c != nullptr) ++c->gradient_evals;
}

inline void tally_mass_solve(StepCounters* c) {
  if (c != nullptr) ++c->mass_solves;
}

inline OpCounter* ops_of(StepCounters* c) {
  return c != nullptr ? &c->ops : nullptr;
}

inline void check_finite(const Vector& v, const char* scheme) {
  if (!v.allFinite()) {
    throw Diverged(std::string(scheme) + ": non-finite state");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stormer-Verlet
// ---------------------------------------------------------------------------

/// q^0 = q0, q^1 = q0 + k M^{-1} p0.
inline std::pair<Vector, Vector> sv_init(const HamiltonianSystem& sys,
                                         const Vector& q0, const Vector& p0,
                                         double k) {
  require_size(q0.size(), sys.dim, "sv_init(q0)");
  require_size(p0.size(), sys.dim, "sv_init(p0)");
  Vector q1 = q0 + k * sys.mass.solve(p0);
  return {q0, std::move(q1)};
}

/// sv_init with an optional second-order correction
/// q^1 = q0 + k M^{-1} p0 - (k^2/2) M^{-1} grad V(q0).
inline std::pair<Vector, Vector> start_pair(const HamiltonianSystem& sys,
                                            const Vector& q0, const Vector& p0,
                                            double k, int order) {
  auto out = sv_init(sys, q0, p0, k);
  if (order == 2) {
    Vector grad(sys.dim);
    sys.potential_with_gradient(q0, grad);
    out.second -= (0.5 * k * k) * sys.mass.solve(grad);
  }
  return out;
}

/// q^{n+1} = 2 q^n - q^{n-1} - k^2 M^{-1} grad V(q^n).
inline Vector sv_step(const HamiltonianSystem& sys, const Vector& q_n,
                      const Vector& q_nm1, double k,
                      StepCounters* counters = nullptr) {
  require_size(q_n.size(), sys.dim, "sv_step(q_n)");
  require_size(q_nm1.size(), sys.dim, "sv_step(q_nm1)");
  Vector grad(sys.dim);
  sys.potential_with_gradient(q_n, grad);
  detail::tally_gradient(counters);
  detail::tally_mass_solve(counters);
  Vector q_next = 2.0 * q_n - q_nm1 - (k * k) * sys.mass.solve(grad);
  count(detail::ops_of(counters), static_cast<std::uint64_t>(4 * sys.dim));
  detail::check_finite(q_next, "sv");
  return q_next;
}

// ---------------------------------------------------------------------------
// Marazzato free-flight scheme
// ---------------------------------------------------------------------------

struct MarazzatoUpdate {
  Vector q_next;      // q^{n+1}
  Vector p_next;      // p^{n+3/2}
};

/// q^{n+1} = q^n + k M^{-1} p^{n+1/2};
/// p^{n+3/2} = p^{n-1/2} - 2 int_{nk}^{(n+1)k} grad V(q^n + (t - nk) M^{-1} p^{n+1/2}) dt
/// with the integral evaluated by `quad_nodes`-point Gauss-Legendre.
inline MarazzatoUpdate marazzato_step(const HamiltonianSystem& sys,
                                      const Vector& q_n, const Vector& p_half,
                                      const Vector& p_mhalf, double k,
                                      int quad_nodes,
                                      StepCounters* counters = nullptr) {
  require_size(q_n.size(), sys.dim, "marazzato_step(q_n)");
  require_size(p_half.size(), sys.dim, "marazzato_step(p_half)");
  require_size(p_mhalf.size(), sys.dim, "marazzato_step(p_mhalf)");
  const QuadratureRule rule = gauss_legendre(quad_nodes);
  const Vector velocity = sys.mass.solve(p_half);
  detail::tally_mass_solve(counters);

  Vector integral = Vector::Zero(sys.dim);
  Vector grad(sys.dim);
  for (int j = 0; j < quad_nodes; ++j) {
    const Vector q_path = q_n + (rule.nodes[j] * k) * velocity;
    sys.potential_with_gradient(q_path, grad);
    detail::tally_gradient(counters);
    integral += (rule.weights[j] * k) * grad;
  }
  MarazzatoUpdate out{q_n + k * velocity, p_mhalf - 2.0 * integral};
  count(detail::ops_of(counters),
        static_cast<std::uint64_t>((4 * quad_nodes + 4) * sys.dim));
  detail::check_finite(out.q_next, "marazzato");
  detail::check_finite(out.p_next, "marazzato");
  return out;
}

/// 1/2 (p^{n+1/2})^T M^{-1} p^{n-1/2} + V(q^n). Not sign-definite.
inline double marazzato_energy(const HamiltonianSystem& sys, const Vector& p_half,
                               const Vector& p_mhalf, const Vector& q_n) {
  return 0.5 * sys.mass.inverse_inner(p_half, p_mhalf) + sys.potential(q_n);
}

// ---------------------------------------------------------------------------
// Quadratised (IEQ) schemes
// ---------------------------------------------------------------------------

/// psi^{1/2} to second order in k:
/// sqrt(2(V+eps)) + k / (2 sqrt(2(V+eps))) grad V^T M^{-1} p0.
inline double psi_init(const HamiltonianSystem& sys, const Vector& q0,
                       const Vector& p0, double k, double eps,
                       PotentialMode mode = PotentialMode::full) {
  require_size(p0.size(), sys.dim, "psi_init(p0)");
  Vector g(sys.dim);
  const double v = evaluate_gradient(sys, q0, mode, g);
  detail::scale_to_aux_gradient(v, eps, g);
  const double psi0 = std::sqrt(2.0 * (v + eps));
  return psi0 + 0.5 * k * sys.mass.inverse_inner(g, p0);
}

struct IeqUpdate {
  Vector q_next;  // q^{n+1}
  double psi;     // psi^{n+1/2}
  Vector p;       // p^{n+1/2}
};

namespace detail {

inline IeqUpdate ieq_update(const HamiltonianSystem& sys, PotentialMode mode,
                            const Vector& q_n, const Vector& q_nm1,
                            double psi_mhalf, double k, double eps,
                            StepCounters* counters) {
  const Index n = sys.dim;
  require_size(q_n.size(), n, "ieq_step(q_n)");
  require_size(q_nm1.size(), n, "ieq_step(q_nm1)");
  OpCounter* ops = ops_of(counters);
  const auto cost = [&](Index per_entry) {
    count(ops, static_cast<std::uint64_t>(per_entry * n));
  };

  Vector g(n);
  const double v = evaluate_gradient(sys, q_n, mode, g);
  tally_gradient(counters);
  scale_to_aux_gradient(v, eps, g);
  cost(1);

  const Vector alpha = (0.5 * k) * sys.mass.solve(g);
  tally_mass_solve(counters);
  const Vector beta = (0.5 * k) * g;
  cost(2);

  // b = L q^n - 2k alpha psi^{n-1/2} - (I - alpha beta^T) q^{n-1}
  Vector b = 2.0 * q_n - q_nm1;
  cost(2);
  if (mode == PotentialMode::residual) {
    const SparseOperator& stiffness = sys.split->stiffness;
    Vector kq(n);
    stiffness.apply(q_n, kq);
    b.noalias() -= (k * k) * sys.mass.solve(kq);
    tally_mass_solve(counters);
    count(ops, stiffness.apply_cost() + static_cast<std::uint64_t>(2 * n));
  }
  b += (beta.dot(q_nm1) - 2.0 * k * psi_mhalf) * alpha;
  cost(4);

  IeqUpdate out;
  sherman_morrison_solve(alpha, beta, b, out.q_next, ops);
  out.psi = psi_mhalf + 0.5 * g.dot(out.q_next - q_nm1);
  cost(3);
  out.p = sys.mass.apply((out.q_next - q_n) / k);
  cost(3);
  check_finite(out.q_next, "ieq");
  return out;
}

}  // namespace detail

/// One step of the non-split explicit scheme.
inline IeqUpdate ieq_step(const HamiltonianSystem& sys, const Vector& q_n,
                          const Vector& q_nm1, double psi_mhalf, double k,
                          double eps, StepCounters* counters = nullptr) {
  return detail::ieq_update(sys, PotentialMode::full, q_n, q_nm1, psi_mhalf, k,
                            eps, counters);
}

/// One step of the split scheme; psi quadratises V' only.
inline IeqUpdate ieq_split_step(const HamiltonianSystem& sys, const Vector& q_n,
                                const Vector& q_nm1, double psi_mhalf, double k,
                                double eps, StepCounters* counters = nullptr) {
  sys.require_split();
  return detail::ieq_update(sys, PotentialMode::residual, q_n, q_nm1, psi_mhalf,
                            k, eps, counters);
}

/// 1/2 p^T M^{-1} p + 1/2 psi^2 (non-negative).
inline double ieq_energy(const HamiltonianSystem& sys, const Vector& p,
                         double psi) {
  return 0.5 * sys.mass.inverse_inner(p, p) + 0.5 * psi * psi;
}

/// Split form: adds 1/2 (q^{n+1})^T K q^n.
inline double ieq_energy(const HamiltonianSystem& sys, const Vector& p,
                         double psi, const Vector& q_next, const Vector& q_n) {
  const SparseOperator& stiffness = sys.require_split().stiffness;
  return ieq_energy(sys, p, psi) + 0.5 * q_next.dot(stiffness.apply(q_n));
}

/// 2 / sqrt(lambda_max(M^{-1/2} K M^{-T/2})), the largest step for which the
/// split scheme's energy stays non-negative.
inline double max_stable_dt(const HamiltonianSystem& sys,
                            const EigenOptions& opt = {}) {
  const SparseOperator& stiffness = sys.require_split().stiffness;
  const double lambda = max_eig_sym(
      [&](const Vector& x, Vector& y) {
        y = sys.mass.whiten(stiffness.apply(sys.mass.whiten_transpose(x)));
      },
      sys.dim, opt);
  if (lambda <= 0.0) return std::numeric_limits<double>::infinity();
  return 2.0 / std::sqrt(lambda);
}

struct VariableState {
  Vector q;    // q^n
  Vector p;    // p^{n-1/2} on input, p^{n+1/2} on output
  double psi;  // psi^{n-1/2} on input, psi^{n+1/2} on output
};

/// Variable-step scheme in (q, p, psi) form. `k_n` = t^{n+1/2} - t^{n-1/2}
/// drives the p and psi updates, `k_half` = t^{n+1} - t^n the q update. The
/// implicit pair of p/psi equations collapses to
///   (I + a b^T) p^{n+1/2} = p^{n-1/2} - k_n g psi^{n-1/2} - a b^T p^{n-1/2}
/// with a = (k_n/2) g and b = (k_n/2) M^{-1} g.
/// Returns {q^{n+1}, p^{n+1/2}, psi^{n+1/2}}.
inline VariableState ieq_variable_step(const HamiltonianSystem& sys,
                                       const VariableState& state, double k_n,
                                       double k_half, double eps,
                                       StepCounters* counters = nullptr) {
  if (!(k_n > 0.0) || !(k_half > 0.0)) {
    throw ConfigError("variable steps must be positive");
  }
  const Index n = sys.dim;
  require_size(state.q.size(), n, "ieq_variable_step(q)");
  require_size(state.p.size(), n, "ieq_variable_step(p)");
  OpCounter* ops = detail::ops_of(counters);

  Vector g(n);
  const double v = sys.potential_with_gradient(state.q, g);
  detail::tally_gradient(counters);
  detail::scale_to_aux_gradient(v, eps, g);

  const Vector a = (0.5 * k_n) * g;
  const Vector b = (0.5 * k_n) * sys.mass.solve(g);
  detail::tally_mass_solve(counters);
  const Vector rhs = state.p - (k_n * state.psi + 0.5 * k_n * b.dot(state.p)) * g;

  VariableState out;
  sherman_morrison_solve(a, b, rhs, out.p, ops);
  out.psi = state.psi + b.dot(out.p + state.p);
  out.q = state.q + k_half * sys.mass.solve(out.p);
  detail::tally_mass_solve(counters);
  count(ops, static_cast<std::uint64_t>(12 * n));
  detail::check_finite(out.q, "ieq_variable");
  return out;
}

// ---------------------------------------------------------------------------
// Steppers: own the interleaved state and advance it one step at a time.
// ---------------------------------------------------------------------------

/// Snapshot from which the numerical energy of a row can be recomputed.
/// IEQ-type schemes persist (q^{n+1}, q^n, psi^{n+1/2}).
struct PersistedState {
  std::string scheme;
  std::int64_t step = 0;
  double dt = 0.0;
  Vector q;
  Vector q_prev;
  std::optional<double> psi;
  std::vector<std::pair<std::string, Vector>> extras;

  const Vector& extra(std::string_view key) const {
    for (const auto& [name, value] : extras) {
      if (name == key) return value;
    }
    throw ConfigError("persisted state lacks '" + std::string(key) + "'");
  }
};

/// Row n of a trajectory holds q^n, p^{n+1/2} and the numerical energy at
/// n + 1/2 (at n for the Marazzato scheme).
class Stepper {
 public:
  virtual ~Stepper() = default;

  virtual std::string_view name() const = 0;
  virtual void step() = 0;
  virtual double energy() const = 0;
  virtual const Vector& position() const = 0;
  virtual Vector momentum() const = 0;
  virtual PersistedState persist() const = 0;
  virtual double energy_of(const PersistedState& state) const = 0;

  std::int64_t index() const noexcept { return index_; }
  virtual double time() const { return static_cast<double>(index_) * dt_; }
  double dt() const noexcept { return dt_; }
  const StepCounters& counters() const noexcept { return counters_; }

  /// Throws Diverged when |p| exceeds threshold x the energy bound.
  void set_momentum_limit(double limit) { momentum_limit_ = limit; }
  double momentum_limit() const noexcept { return momentum_limit_; }

 protected:
  explicit Stepper(double dt) : dt_(dt) {}

  void advance(std::string_view scheme) {
    ++index_;
    ++counters_.steps;
    const Vector p = momentum();
    if (!p.allFinite() || !position().allFinite()) {
      throw Diverged(std::string(scheme) + ": non-finite state", index_);
    }
    const double norm = p.norm();
    if (norm > momentum_limit_) {
      throw Diverged(std::string(scheme) + ": |p| = " + std::to_string(norm) +
                         " exceeds divergence limit " +
                         std::to_string(momentum_limit_),
                     index_);
    }
  }

  double dt_;
  std::int64_t index_ = 0;
  StepCounters counters_;
  double momentum_limit_ = std::numeric_limits<double>::infinity();
};

namespace detail {

inline double divergence_limit(const HamiltonianSystem& sys, double h_reference,
                               double threshold) {
  return threshold * momentum_bound(sys, h_reference);
}

}  // namespace detail

class StormerVerletStepper final : public Stepper {
 public:
  StormerVerletStepper(SystemPtr sys, const Vector& q0, const Vector& p0,
                       const SchemeConfig& cfg)
      : Stepper(cfg.dt), sys_(std::move(sys)) {
    auto [a, b] = start_pair(*sys_, q0, p0, dt_, cfg.start_order);
    q_ = std::move(a);
    q_next_ = std::move(b);
    v_ = sys_->potential(q_);
    v_next_ = sys_->potential(q_next_);
    set_momentum_limit(detail::divergence_limit(
        *sys_, energy_continuous(*sys_, q0, p0), cfg.divergence_threshold));
  }

  std::string_view name() const override { return "sv"; }

  void step() override {
    Vector q_after = sv_step(*sys_, q_next_, q_, dt_, &counters_);
    q_ = std::move(q_next_);
    q_next_ = std::move(q_after);
    if (track_energy_) {
      v_ = v_next_;
      v_next_ = sys_->potential(q_next_);
    }
    advance("sv");
  }

  /// 1/2 p^T M^{-1} p + (V(q^n) + V(q^{n+1})) / 2 at n + 1/2.
  double energy() const override {
    return 0.5 * sys_->mass.inverse_inner(momentum(), momentum()) +
           0.5 * (v_ + v_next_);
  }

  const Vector& position() const override { return q_; }
  Vector momentum() const override {
    return sys_->mass.apply((q_next_ - q_) / dt_);
  }

  PersistedState persist() const override {
    return {"sv", index_, dt_, q_next_, q_, std::nullopt, {}};
  }

  double energy_of(const PersistedState& s) const override {
    const Vector p = sys_->mass.apply((s.q - s.q_prev) / s.dt);
    return 0.5 * sys_->mass.inverse_inner(p, p) +
           0.5 * (sys_->potential(s.q_prev) + sys_->potential(s.q));
  }

  /// Skip the diagnostic potential evaluations (for timing runs).
  void set_track_energy(bool on) { track_energy_ = on; }

 private:
  SystemPtr sys_;
  Vector q_;
  Vector q_next_;
  double v_ = 0.0;
  double v_next_ = 0.0;
  bool track_energy_ = true;
};

class MarazzatoStepper final : public Stepper {
 public:
  /// p^{+-1/2} = p0 -+ (k/2) grad V(q0); q^1 = q^0 + k M^{-1} p^{1/2}.
  MarazzatoStepper(SystemPtr sys, const Vector& q0, const Vector& p0,
                   const SchemeConfig& cfg)
      : Stepper(cfg.dt), sys_(std::move(sys)), nodes_(cfg.quad_nodes) {
    require_size(q0.size(), sys_->dim, "marazzato(q0)");
    require_size(p0.size(), sys_->dim, "marazzato(p0)");
    Vector grad(sys_->dim);
    sys_->potential_with_gradient(q0, grad);
    q_ = q0;
    p_half_ = p0 - (0.5 * dt_) * grad;
    p_mhalf_ = p0 + (0.5 * dt_) * grad;
    set_momentum_limit(detail::divergence_limit(
        *sys_, energy_continuous(*sys_, q0, p0), cfg.divergence_threshold));
  }

  std::string_view name() const override { return "marazzato"; }

  void step() override {
    MarazzatoUpdate u =
        marazzato_step(*sys_, q_, p_half_, p_mhalf_, dt_, nodes_, &counters_);
    q_ = std::move(u.q_next);
    p_mhalf_ = std::move(p_half_);
    p_half_ = std::move(u.p_next);
    advance("marazzato");
  }

  double energy() const override {
    return marazzato_energy(*sys_, p_half_, p_mhalf_, q_);
  }

  const Vector& position() const override { return q_; }
  Vector momentum() const override { return p_half_; }

  PersistedState persist() const override {
    return {"marazzato", index_, dt_, q_, q_, std::nullopt,
            {{"p_half", p_half_}, {"p_mhalf", p_mhalf_}}};
  }

  double energy_of(const PersistedState& s) const override {
    return marazzato_energy(*sys_, s.extra("p_half"), s.extra("p_mhalf"), s.q);
  }

 private:
  SystemPtr sys_;
  int nodes_;
  Vector q_;
  Vector p_half_;
  Vector p_mhalf_;
};

/// Non-split and split explicit quadratised schemes.
class IeqStepper final : public Stepper {
 public:
  IeqStepper(SystemPtr sys, const Vector& q0, const Vector& p0,
             const SchemeConfig& cfg, bool split)
      : Stepper(cfg.dt),
        sys_(std::move(sys)),
        mode_(split ? PotentialMode::residual : PotentialMode::full),
        eps_(cfg.eps) {
    if (split) {
      sys_->require_split();
      if (!cfg.allow_unstable) {
        const double bound = max_stable_dt(*sys_);
        if (dt_ > bound) {
          throw ConfigError("dt = " + std::to_string(dt_) +
                            " exceeds the split-scheme stability bound " +
                            std::to_string(bound) +
                            " (set allow_unstable to override)");
        }
      }
    }
    auto [a, b] = start_pair(*sys_, q0, p0, dt_, cfg.start_order);
    q_ = std::move(a);
    q_next_ = std::move(b);
    psi_ = psi_init(*sys_, q0, p0, dt_, eps_, mode_);
    const double h0 = std::max(energy(), energy_continuous(*sys_, q0, p0) + eps_);
    set_momentum_limit(
        detail::divergence_limit(*sys_, h0, cfg.divergence_threshold));
  }

  std::string_view name() const override { return is_split() ? "ieq_split" : "ieq"; }
  bool is_split() const noexcept { return mode_ == PotentialMode::residual; }

  void step() override {
    IeqUpdate u = is_split()
                      ? ieq_split_step(*sys_, q_next_, q_, psi_, dt_, eps_, &counters_)
                      : ieq_step(*sys_, q_next_, q_, psi_, dt_, eps_, &counters_);
    q_ = std::move(q_next_);
    q_next_ = std::move(u.q_next);
    psi_ = u.psi;
    advance(name());
  }

  double energy() const override { return energy_of(persist()); }

  const Vector& position() const override { return q_; }
  Vector momentum() const override {
    return sys_->mass.apply((q_next_ - q_) / dt_);
  }
  double psi() const noexcept { return psi_; }

  PersistedState persist() const override {
    return {std::string(name()), index_, dt_, q_next_, q_, psi_, {}};
  }

  double energy_of(const PersistedState& s) const override {
    const Vector p = sys_->mass.apply((s.q - s.q_prev) / s.dt);
    const double psi = s.psi.value_or(0.0);
    return is_split() ? ieq_energy(*sys_, p, psi, s.q, s.q_prev)
                      : ieq_energy(*sys_, p, psi);
  }

 private:
  SystemPtr sys_;
  PotentialMode mode_;
  double eps_;
  Vector q_;       // q^n
  Vector q_next_;  // q^{n+1}
  double psi_;     // psi^{n+1/2}
};

/// Variable-step scheme driven by a cycled sequence of q-steps k^{n+1/2};
/// the p/psi step is the mean of the adjacent q-steps (t^{n+1/2} sits at the
/// midpoint of [t^n, t^{n+1}]).
class IeqVariableStepper final : public Stepper {
 public:
  IeqVariableStepper(SystemPtr sys, const Vector& q0, const Vector& p0,
                     const SchemeConfig& cfg)
      : Stepper(cfg.dt),
        sys_(std::move(sys)),
        eps_(cfg.eps),
        steps_(cfg.dt_sequence.empty() ? std::vector<double>{cfg.dt}
                                       : cfg.dt_sequence) {
    const double k0 = q_step(0);
    auto [a, b] = start_pair(*sys_, q0, p0, k0, cfg.start_order);
    state_.q = std::move(b);
    state_.p = sys_->mass.apply((state_.q - q0) / k0);
    state_.psi = psi_init(*sys_, q0, p0, k0, eps_);
    q_ = q0;
    const double h0 = std::max(energy(), energy_continuous(*sys_, q0, p0) + eps_);
    set_momentum_limit(
        detail::divergence_limit(*sys_, h0, cfg.divergence_threshold));
  }

  std::string_view name() const override { return "ieq_variable"; }

  double q_step(std::int64_t n) const {
    return steps_[static_cast<std::size_t>(n) % steps_.size()];
  }

  void step() override {
    const double k_prev = q_step(index_);
    const double k_half = q_step(index_ + 1);
    const double k_n = 0.5 * (k_prev + k_half);
    Vector q_now = state_.q;
    state_ = ieq_variable_step(*sys_, state_, k_n, k_half, eps_, &counters_);
    q_ = std::move(q_now);
    time_ += k_prev;
    advance("ieq_variable");
  }

  double time() const override { return time_; }

  double energy() const override { return ieq_energy(*sys_, state_.p, state_.psi); }

  const Vector& position() const override { return q_; }
  Vector momentum() const override { return state_.p; }
  double psi() const noexcept { return state_.psi; }
  const VariableState& state() const noexcept { return state_; }

  PersistedState persist() const override {
    return {"ieq_variable", index_, q_step(index_), state_.q, q_, state_.psi, {}};
  }

  double energy_of(const PersistedState& s) const override {
    const Vector p = sys_->mass.apply((s.q - s.q_prev) / s.dt);
    return ieq_energy(*sys_, p, s.psi.value_or(0.0));
  }

 private:
  SystemPtr sys_;
  double eps_;
  std::vector<double> steps_;
  VariableState state_;  // q^{n+1}, p^{n+1/2}, psi^{n+1/2}
  Vector q_;             // q^n
  double time_ = 0.0;
};

inline std::unique_ptr<Stepper> make_stepper(SystemPtr sys, const Vector& q0,
                                             const Vector& p0,
                                             const SchemeConfig& cfg) {
  cfg.validate();
  switch (cfg.scheme) {
    case Scheme::stormer_verlet:
      return std::make_unique<StormerVerletStepper>(std::move(sys), q0, p0, cfg);
    case Scheme::marazzato:
      return std::make_unique<MarazzatoStepper>(std::move(sys), q0, p0, cfg);
    case Scheme::ieq:
      return std::make_unique<IeqStepper>(std::move(sys), q0, p0, cfg, false);
    case Scheme::ieq_split:
      return std::make_unique<IeqStepper>(std::move(sys), q0, p0, cfg, true);
    case Scheme::ieq_variable:
      return std::make_unique<IeqVariableStepper>(std::move(sys), q0, p0, cfg);
  }
  throw ConfigError("unknown scheme");
}

}  // namespace ieq
