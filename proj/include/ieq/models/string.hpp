#pragma once

// Geometrically exact string with coupled transverse (u) and longitudinal (v)
// motion, fixed ends, semi-discretised on M segments:
//   q = [u; v], M = rho A h I, V = h sum_l Vd(zeta_l, eta_l),
//   zeta = D- u, eta = D- v,
//   Vd = T0/2 (zeta^2 + eta^2) + (EA - T0)/2 (s - 1)^2,
//   s  = sqrt((1 + eta)^2 + zeta^2).
// The split keeps K = -T0 h blockdiag(D2, D2) and V' = h (EA - T0)/2 sum (s - 1)^2.
//
// Also provides the fully implicit discrete-gradient scheme used as the
// conservative baseline.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "ieq/hamiltonian.hpp"
#include "ieq/integrators.hpp"

namespace ieq::models {

struct StringParams {
  double rho = 7850.0;      // kg m^-3
  double area = 8.87e-7;    // m^2
  double length = 1.259;    // m
  double young = 2.02e11;   // kg s^-2 m^-1
  double tension = 759.0;   // kg m s^-2
  int segments = 0;         // M; 0 selects the grid rule for `grid_dt`
  double grid_dt = 2.4e-7;  // time step the grid rule is evaluated for
  double eps = 1e8;         // shift of V' used by the quadratised schemes

  /// C3 piano string.
  static StringParams c3() { return {}; }

  double ea() const { return young * area; }

  /// Longitudinal wave speed sqrt(E / rho).
  double longitudinal_speed() const { return std::sqrt(young / rho); }

  /// Largest M with L / M >= 1.05 sqrt(E/rho) k.
  int segments_for(double k) const {
    const double h_min = 1.05 * longitudinal_speed() * k;
    return static_cast<int>(std::floor(length / h_min));
  }

  int resolved_segments() const { return segments > 0 ? segments : segments_for(grid_dt); }

  void validate() const {
    if (!(rho > 0.0 && area > 0.0 && length > 0.0 && young > 0.0 && tension > 0.0)) {
      throw ConfigError("string: physical parameters must be positive");
    }
    if (!(ea() > tension)) throw ConfigError("string: requires EA > T0");
    if (segments == 0 && !(grid_dt > 0.0)) throw ConfigError("string: grid_dt must be > 0");
    if (resolved_segments() < 2) throw ConfigError("string: needs at least 2 segments");
  }
};

/// Potential density and its partial derivatives.
struct StringDensity {
  double t0;
  double ea;

  /// s - 1, free of cancellation for small strains.
  static double stretch_minus_one(double zeta, double eta) {
    const double s = std::hypot(1.0 + eta, zeta);
    return (eta * (2.0 + eta) + zeta * zeta) / (s + 1.0);
  }

  /// T0/2 (z^2 + e^2) + (EA - T0)/2 (s - 1)^2.
  double value(double zeta, double eta) const {
    const double sm1 = stretch_minus_one(zeta, eta);
    return 0.5 * t0 * (zeta * zeta + eta * eta) + 0.5 * (ea - t0) * sm1 * sm1;
  }

  /// EA/2 (z^2 + e^2) - (EA - T0)(s - 1 - e).
  double value_stretch_form(double zeta, double eta) const {
    const double s = std::hypot(1.0 + eta, zeta);
    const double excess = zeta * zeta / (s + 1.0 + eta);  // s - 1 - eta
    return 0.5 * ea * (zeta * zeta + eta * eta) - (ea - t0) * excess;
  }

  double residual(double zeta, double eta) const {
    const double sm1 = stretch_minus_one(zeta, eta);
    return 0.5 * (ea - t0) * sm1 * sm1;
  }

  /// Partials of the residual (EA - T0)/2 (s - 1)^2.
  void residual_partials(double zeta, double eta, double& dz, double& de) const {
    const double s = std::hypot(1.0 + eta, zeta);
    const double c = (ea - t0) * stretch_minus_one(zeta, eta) / s;
    dz = c * zeta;
    de = c * (1.0 + eta);
  }

  void partials(double zeta, double eta, double& dz, double& de) const {
    residual_partials(zeta, eta, dz, de);
    dz += t0 * zeta;
    de += t0 * eta;
  }

  /// Discrete gradient in zeta at fixed eta:
  /// (Vd(x, eta) - Vd(a, eta)) / (x - a), evaluated in factored form
  ///   T0/2 (x + a) + (EA - T0)/2 (x + a) (S - 2) / S,  S = s(x) + s(a),
  /// which is exact, free of the 0/0 at x = a, and reduces there to dVd/dzeta.
  /// `slope` receives d/dx of the quotient.
  double zeta_quotient(double x, double a, double eta, double& slope) const {
    const double sx = std::hypot(1.0 + eta, x);
    const double sa = std::hypot(1.0 + eta, a);
    const double S = sx + sa;
    const double shrink = (stretch_minus_one(x, eta) + stretch_minus_one(a, eta)) / S;
    const double sum = x + a;
    slope = 0.5 * t0 + 0.5 * (ea - t0) * (shrink + 2.0 * sum * x / (S * S * sx));
    return 0.5 * t0 * sum + 0.5 * (ea - t0) * sum * shrink;
  }

  /// Discrete gradient in eta at fixed zeta:
  ///   T0/2 (x + a) + (EA - T0)/2 (2 + x + a) (S - 2) / S.
  double eta_quotient(double x, double a, double zeta, double& slope) const {
    const double sx = std::hypot(1.0 + x, zeta);
    const double sa = std::hypot(1.0 + a, zeta);
    const double S = sx + sa;
    const double shrink = (stretch_minus_one(zeta, x) + stretch_minus_one(zeta, a)) / S;
    const double sum = 2.0 + x + a;
    slope = 0.5 * t0 + 0.5 * (ea - t0) * (shrink + 2.0 * sum * (1.0 + x) / (S * S * sx));
    return 0.5 * t0 * (x + a) + 0.5 * (ea - t0) * sum * shrink;
  }
};

/// Grid data the potential evaluators need; small enough to copy into them.
struct StringGrid {
  int segments = 0;  // M
  double h = 0.0;
  StringDensity density{};

  Index interior() const { return segments - 1; }

  /// zeta = D- u for one displacement block (u_0 = u_M = 0).
  Vector difference(const Vector& block) const {
    Vector out(segments);
    const Index n = interior();
    for (Index l = 0; l < segments; ++l) {
      const double right = l < n ? block[l] : 0.0;
      const double left = l > 0 ? block[l - 1] : 0.0;
      out[l] = (right - left) / h;
    }
    return out;
  }
};

struct StringModel {
  StringParams params;
  StringGrid grid;
  SparseOperator d_minus;  // M x (M-1)
  SystemPtr system;

  int segments() const { return grid.segments; }
  double h() const { return grid.h; }
  Index interior() const { return grid.interior(); }
};

namespace detail {

enum class StringPart { full, residual };

inline double string_potential(const StringGrid& m, const Vector& q, Vector* grad,
                               StringPart part) {
  const Index n = m.interior();
  const auto u = q.head(n);
  const auto v = q.tail(n);
  double total = 0.0;
  if (grad != nullptr) grad->setZero(2 * n);
  for (Index l = 0; l < m.segments; ++l) {
    const double ur = l < n ? u[l] : 0.0;
    const double ul = l > 0 ? u[l - 1] : 0.0;
    const double vr = l < n ? v[l] : 0.0;
    const double vl = l > 0 ? v[l - 1] : 0.0;
    const double zeta = (ur - ul) / m.h;
    const double eta = (vr - vl) / m.h;
    total += part == StringPart::full ? m.density.value(zeta, eta)
                                      : m.density.residual(zeta, eta);
    if (grad != nullptr) {
      double dz = 0.0;
      double de = 0.0;
      if (part == StringPart::full) {
        m.density.partials(zeta, eta, dz, de);
      } else {
        m.density.residual_partials(zeta, eta, dz, de);
      }
      // grad_u V = h D-^T dVd/dzeta; the h cancels the 1/h inside D-.
      if (l < n) {
        (*grad)[l] += dz;
        (*grad)[n + l] += de;
      }
      if (l > 0) {
        (*grad)[l - 1] -= dz;
        (*grad)[n + l - 1] -= de;
      }
    }
  }
  return m.h * total;
}

}  // namespace detail

/// D- as an M x (M-1) matrix: (D- u)_l = (u_l - u_{l-1}) / h.
inline SparseOperator string_difference_operator(int segments, double h) {
  std::vector<Triplet> t;
  for (int l = 0; l < segments; ++l) {
    if (l < segments - 1) t.emplace_back(l, l, 1.0 / h);
    if (l > 0) t.emplace_back(l, l - 1, -1.0 / h);
  }
  return SparseOperator::from_triplets(segments, segments - 1, t);
}

inline StringModel string_build(const StringParams& params) {
  params.validate();
  StringModel model;
  model.params = params;
  model.grid.segments = params.resolved_segments();
  model.grid.h = params.length / model.grid.segments;
  model.grid.density = {params.tension, params.ea()};
  model.d_minus = string_difference_operator(model.grid.segments, model.grid.h);

  const Index n = model.interior();
  // K = -T0 h blockdiag(D2, D2) = T0 h blockdiag(D-^T D-, D-^T D-)
  const SparseMatrix dtd =
      SparseMatrix(model.d_minus.matrix().transpose()) * model.d_minus.matrix();
  std::vector<Triplet> t;
  for (Index block = 0; block < 2; ++block) {
    for (Index r = 0; r < dtd.outerSize(); ++r) {
      for (SparseMatrix::InnerIterator it(dtd, r); it; ++it) {
        t.emplace_back(block * n + it.row(), block * n + it.col(),
                       params.tension * model.grid.h * it.value());
      }
    }
  }

  HamiltonianSystem sys;
  sys.name = "string";
  sys.dim = 2 * n;
  sys.mass = MassMatrix::scalar(2 * n, params.rho * params.area * model.grid.h);
  // Grid point nearest x = L/2.
  sys.probe_index = std::clamp<Index>(
      static_cast<Index>(std::lround(0.5 * model.grid.segments)) - 1, 0, n - 1);

  const StringGrid grid = model.grid;
  sys.potential = [grid](const Vector& q) {
    return detail::string_potential(grid, q, nullptr, detail::StringPart::full);
  };
  sys.potential_with_gradient = [grid](const Vector& q, Vector& g) {
    return detail::string_potential(grid, q, &g, detail::StringPart::full);
  };
  PotentialSplit split;
  split.stiffness = SparseOperator::from_triplets(2 * n, 2 * n, t);
  split.residual = [grid](const Vector& q) {
    return detail::string_potential(grid, q, nullptr, detail::StringPart::residual);
  };
  split.residual_with_gradient = [grid](const Vector& q, Vector& g) {
    return detail::string_potential(grid, q, &g, detail::StringPart::residual);
  };
  sys.split = std::move(split);
  model.system = std::make_shared<const HamiltonianSystem>(std::move(sys));
  return model;
}

/// u_l = alpha sqrt(A) sin(pi x_l / L), v = 0, p = 0.
inline std::pair<Vector, Vector> string_initial(const StringModel& model, double alpha) {
  const Index n = model.interior();
  Vector q = Vector::Zero(2 * n);
  const double amp = alpha * std::sqrt(model.params.area);
  for (Index l = 0; l < n; ++l) {
    const double x = static_cast<double>(l + 1) * model.h();
    q[l] = amp * std::sin(std::numbers::pi * x / model.params.length);
  }
  return {q, Vector::Zero(2 * n)};
}

struct NewtonOptions {
  double tol = 1e-13;  // on |increment|_inf relative to |iterate|_inf
  int max_iter = 20;
};

namespace detail {

/// Solves a symmetric tridiagonal system in place (Thomas algorithm).
/// `diag` and `rhs` are overwritten; `off[j]` couples j and j + 1.
inline void thomas_solve(Vector& diag, const Vector& off, Vector& rhs) {
  const Index n = diag.size();
  for (Index j = 1; j < n; ++j) {
    const double m = off[j - 1] / diag[j - 1];
    diag[j] -= m * off[j - 1];
    rhs[j] -= m * rhs[j - 1];
  }
  rhs[n - 1] /= diag[n - 1];
  for (Index j = n - 2; j >= 0; --j) {
    rhs[j] = (rhs[j] - off[j] * rhs[j + 1]) / diag[j];
  }
}

/// Newton solve for one displacement block x^{n+1} of
///   x^{n+1} - w + c D-^T G(D- x^{n+1}) = 0,
/// where G_l is the discrete-gradient quotient with its frozen arguments.
/// Returns the number of iterations used.
template <class Quotient>
int newton_block(const StringGrid& grid, const Vector& w, double c, Quotient quotient,
                 Vector& x, const NewtonOptions& opt) {
  const Index n = grid.interior();
  const double inv_h = 1.0 / grid.h;
  Vector q(grid.segments);
  Vector slope(grid.segments);
  Vector residual(n);
  Vector diag(n);
  Vector off(std::max<Index>(n - 1, 0));
  for (int it = 1; it <= opt.max_iter; ++it) {
    const Vector z = grid.difference(x);
    for (Index l = 0; l < grid.segments; ++l) q[l] = quotient(l, z[l], slope[l]);
    for (Index j = 0; j < n; ++j) {
      residual[j] = x[j] - w[j] + c * (q[j] - q[j + 1]) * inv_h;
      diag[j] = 1.0 + c * (slope[j] + slope[j + 1]) * inv_h * inv_h;
      if (j + 1 < n) off[j] = -c * slope[j + 1] * inv_h * inv_h;
    }
    thomas_solve(diag, off, residual);
    x -= residual;
    const double step = residual.lpNorm<Eigen::Infinity>();
    if (!std::isfinite(step)) break;
    if (step <= opt.tol * x.lpNorm<Eigen::Infinity>()) return it;
  }
  throw NewtonNoConvergence("string_implicit: Newton did not converge in " +
                            std::to_string(opt.max_iter) + " iterations");
}

}  // namespace detail

/// One step of the fully implicit discrete-gradient scheme
///   rho A (q^{n+1} - 2 q^n + q^{n-1}) / k^2 = -[D-^T Gz; D-^T Ge],
///   (Gz)_l = (Vd(z^{n+1}, e^n) - Vd(z^{n-1}, e^n)) / (z^{n+1} - z^{n-1}),
///   (Ge)_l = (Vd(z^n, e^{n+1}) - Vd(z^n, e^{n-1})) / (e^{n+1} - e^{n-1}).
/// The u and v blocks decouple; each Jacobian is tridiagonal.
inline Vector string_implicit_step(const StringModel& model, const Vector& q_n,
                                   const Vector& q_nm1, double k,
                                   const NewtonOptions& opt = {},
                                   StepCounters* counters = nullptr) {
  const HamiltonianSystem& sys = *model.system;
  require_size(q_n.size(), sys.dim, "string_implicit_step(q_n)");
  require_size(q_nm1.size(), sys.dim, "string_implicit_step(q_nm1)");
  const Index n = model.interior();
  const StringGrid& grid = model.grid;
  const double c = k * k / (model.params.rho * model.params.area);

  Vector q_next = sv_step(sys, q_n, q_nm1, k, counters);  // predictor
  const Vector w = 2.0 * q_n - q_nm1;

  const Vector z_n = grid.difference(q_n.head(n));
  const Vector e_n = grid.difference(q_n.tail(n));
  const Vector z_prev = grid.difference(q_nm1.head(n));
  const Vector e_prev = grid.difference(q_nm1.tail(n));

  Vector u = q_next.head(n);
  Vector v = q_next.tail(n);
  int iterations = detail::newton_block(
      grid, w.head(n), c,
      [&](Index l, double x, double& slope) {
        return grid.density.zeta_quotient(x, z_prev[l], e_n[l], slope);
      },
      u, opt);
  iterations += detail::newton_block(
      grid, w.tail(n), c,
      [&](Index l, double x, double& slope) {
        return grid.density.eta_quotient(x, e_prev[l], z_n[l], slope);
      },
      v, opt);
  if (counters != nullptr) counters->linear_solves += static_cast<std::uint64_t>(iterations);
  q_next.head(n) = u;
  q_next.tail(n) = v;
  ieq::detail::check_finite(q_next, "string_implicit");
  return q_next;
}

/// rho A h / 2 |(q^{n+1} - q^n) / k|^2 + h/2 sum [Vd(z^{n+1}, e^n) + Vd(z^n, e^{n+1})].
inline double string_implicit_energy(const StringModel& model, const Vector& q_next,
                                     const Vector& q_n, double k) {
  const Index n = model.interior();
  const StringGrid& grid = model.grid;
  const Vector z1 = grid.difference(q_next.head(n));
  const Vector e1 = grid.difference(q_next.tail(n));
  const Vector z0 = grid.difference(q_n.head(n));
  const Vector e0 = grid.difference(q_n.tail(n));
  double pot = 0.0;
  for (Index l = 0; l < grid.segments; ++l) {
    pot += grid.density.value(z1[l], e0[l]) + grid.density.value(z0[l], e1[l]);
  }
  const double kinetic = 0.5 * model.params.rho * model.params.area * grid.h *
                         (q_next - q_n).squaredNorm() / (k * k);
  return kinetic + 0.5 * grid.h * pot;
}

class StringImplicitStepper final : public Stepper {
 public:
  StringImplicitStepper(std::shared_ptr<const StringModel> model, const Vector& q0,
                        const Vector& p0, const SchemeConfig& cfg,
                        const NewtonOptions& newton = {})
      : Stepper(cfg.dt), model_(std::move(model)), newton_(newton) {
    auto [a, b] = start_pair(*model_->system, q0, p0, dt_, cfg.start_order);
    q_ = std::move(a);
    q_next_ = std::move(b);
    const double h0 =
        std::max(energy(), energy_continuous(*model_->system, q0, p0));
    set_momentum_limit(ieq::detail::divergence_limit(*model_->system, h0,
                                                cfg.divergence_threshold));
  }

  std::string_view name() const override { return "string_implicit"; }

  void step() override {
    Vector q_after =
        string_implicit_step(*model_, q_next_, q_, dt_, newton_, &counters_);
    q_ = std::move(q_next_);
    q_next_ = std::move(q_after);
    advance("string_implicit");
  }

  double energy() const override {
    return string_implicit_energy(*model_, q_next_, q_, dt_);
  }

  const Vector& position() const override { return q_; }
  Vector momentum() const override {
    return model_->system->mass.apply((q_next_ - q_) / dt_);
  }

  PersistedState persist() const override {
    return {"string_implicit", index_, dt_, q_next_, q_, std::nullopt, {}};
  }

  double energy_of(const PersistedState& s) const override {
    return string_implicit_energy(*model_, s.q, s.q_prev, s.dt);
  }

 private:
  std::shared_ptr<const StringModel> model_;
  NewtonOptions newton_;
  Vector q_;
  Vector q_next_;
};

}  // namespace ieq::models
