#pragma once

// Simply supported square plate (dynamic Foppl-von Karman), on the interior
// grid (M-1) x (M-1) with zero extension beyond it:
//   rho xi q'' = -Q D_bb q + l(q, F),   (2 / E xi) D_bb F = -l(q, q),
//   D_bb = D_lap D_lap, M = rho xi h^2 I,
//   V = Q h^2 / 2 |D_lap q|^2 + h^2 / (2 E xi) |D_lap F|^2.
// Split: K = Q h^2 D_bb, V' = h^2 / (2 E xi) |D_lap F|^2, grad V' = -h^2 l(q, F).

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

struct PlateParams {
  double rho = 7850.0;      // kg m^-3
  double thickness = 2e-3;  // xi, m
  double young = 2e11;      // Pa
  double poisson = 0.3;
  double side = 0.5;        // L, m
  int grid = 0;             // M; 0 selects the grid rule for `grid_dt`
  double grid_dt = 1e-5;    // time step the grid rule is evaluated for
  double probe_x = 0.3;     // probe location as a fraction of L
  double probe_y = 0.3;

  static PlateParams steel() { return {}; }

  /// Flexural rigidity Q = E xi^3 / 12 (1 - nu^2).
  double rigidity() const {
    return young * thickness * thickness * thickness / (12.0 * (1.0 - poisson * poisson));
  }

  /// h_min = 2 sqrt(k) (Q / rho xi)^(1/4).
  double min_spacing(double k) const {
    return 2.0 * std::sqrt(k) * std::pow(rigidity() / (rho * thickness), 0.25);
  }

  /// Largest M with L / M >= h_min(k).
  int grid_for(double k) const {
    return static_cast<int>(std::floor(side / min_spacing(k)));
  }

  int resolved_grid() const { return grid > 0 ? grid : grid_for(grid_dt); }

  void validate() const {
    if (!(rho > 0.0 && thickness > 0.0 && young > 0.0 && side > 0.0)) {
      throw ConfigError("plate: physical parameters must be positive");
    }
    if (!(poisson > 0.0 && poisson < 0.5)) throw ConfigError("plate: need 0 < poisson < 0.5");
    if (grid == 0 && !(grid_dt > 0.0)) throw ConfigError("plate: grid_dt must be > 0");
    if (resolved_grid() < 3) throw ConfigError("plate: grid M must be >= 3");
    if (!(probe_x > 0.0 && probe_x < 1.0 && probe_y > 0.0 && probe_y < 1.0)) {
      throw ConfigError("plate: probe must lie inside the plate");
    }
  }
};

/// Grid operators shared by the potential evaluators and the steppers.
struct PlateOperators {
  int grid = 0;     // M
  Index side = 0;   // M - 1 interior points per direction
  double h = 0.0;
  double e_xi = 0.0;  // E xi
  SparseOperator laplacian;    // D_lap
  SparseOperator biharmonic;   // D_bb
  FactorizationHandle biharmonic_factor;

  Index dim() const { return side * side; }
  Index index(Index l, Index m) const { return l + side * m; }

  /// Value at (l, m) with zero extension outside the interior.
  double at(const Vector& f, Index l, Index m) const {
    if (l < 0 || m < 0 || l >= side || m >= side) return 0.0;
    return f[index(l, m)];
  }

  /// l(f, g): D_xx f D_yy g + D_yy f D_xx g minus half the sum over the four
  /// cells touching (l, m) of the products of mixed differences.
  Vector ell(const Vector& f, const Vector& g) const {
    require_size(f.size(), dim(), "plate ell(f)");
    require_size(g.size(), dim(), "plate ell(g)");
    const double inv_h4 = 1.0 / (h * h * h * h);
    Vector out(dim());
    for (Index m = 0; m < side; ++m) {
      for (Index l = 0; l < side; ++l) {
        const double f0 = f[index(l, m)];
        const double g0 = g[index(l, m)];
        const double fxx = at(f, l + 1, m) - 2.0 * f0 + at(f, l - 1, m);
        const double fyy = at(f, l, m + 1) - 2.0 * f0 + at(f, l, m - 1);
        const double gxx = at(g, l + 1, m) - 2.0 * g0 + at(g, l - 1, m);
        const double gyy = at(g, l, m + 1) - 2.0 * g0 + at(g, l, m - 1);
        double mixed = 0.0;
        for (int sx : {-1, 1}) {
          for (int sy : {-1, 1}) {
            const double fm = at(f, l + sx, m + sy) - at(f, l + sx, m) - at(f, l, m + sy) + f0;
            const double gm = at(g, l + sx, m + sy) - at(g, l + sx, m) - at(g, l, m + sy) + g0;
            mixed += fm * gm;
          }
        }
        out[index(l, m)] = (fxx * gyy + fyy * gxx - 0.5 * mixed) * inv_h4;
      }
    }
    return out;
  }

  /// Matrix of g -> l(f, g) for fixed f. Symmetric; the sparsity pattern does
  /// not depend on f.
  SparseMatrix ell_matrix(const Vector& f) const {
    require_size(f.size(), dim(), "plate ell_matrix");
    const double inv_h4 = 1.0 / (h * h * h * h);
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(9 * dim()));
    auto add = [&](Index row, Index l, Index m, double v) {
      if (l < 0 || m < 0 || l >= side || m >= side) return;
      t.emplace_back(row, index(l, m), v * inv_h4);
    };
    for (Index m = 0; m < side; ++m) {
      for (Index l = 0; l < side; ++l) {
        const Index row = index(l, m);
        const double f0 = f[row];
        const double fxx = at(f, l + 1, m) - 2.0 * f0 + at(f, l - 1, m);
        const double fyy = at(f, l, m + 1) - 2.0 * f0 + at(f, l, m - 1);
        // fxx * D_yy g + fyy * D_xx g
        add(row, l, m + 1, fxx);
        add(row, l, m - 1, fxx);
        add(row, l + 1, m, fyy);
        add(row, l - 1, m, fyy);
        double centre = -2.0 * (fxx + fyy);
        for (int sx : {-1, 1}) {
          for (int sy : {-1, 1}) {
            const double fm =
                -0.5 * (at(f, l + sx, m + sy) - at(f, l + sx, m) - at(f, l, m + sy) + f0);
            add(row, l + sx, m + sy, fm);
            add(row, l + sx, m, -fm);
            add(row, l, m + sy, -fm);
            centre += fm;
          }
        }
        add(row, l, m, centre);
      }
    }
    SparseMatrix a(dim(), dim());
    a.setFromTriplets(t.begin(), t.end());
    return a;
  }

  /// F = -(E xi / 2) D_bb^{-1} l(q, q).
  Vector airy(const Vector& q) const {
    return (-0.5 * e_xi) * biharmonic_factor.solve(ell(q, q));
  }

  /// h^2 / (2 E xi) F^T D_bb F.
  double stress_energy(const Vector& F) const {
    return 0.5 * h * h / e_xi * F.dot(biharmonic.apply(F));
  }
};

using PlateOperatorsPtr = std::shared_ptr<const PlateOperators>;

struct PlateModel {
  PlateParams params;
  PlateOperatorsPtr ops;
  SystemPtr system;

  int grid() const { return ops->grid; }
  double h() const { return ops->h; }
};

/// D_lap = D_x+ D_x- + D_y+ D_y- on the interior grid, zero extension.
inline SparseOperator plate_laplacian(Index side, double h) {
  const double c = 1.0 / (h * h);
  std::vector<Triplet> t;
  auto idx = [side](Index l, Index m) { return l + side * m; };
  for (Index m = 0; m < side; ++m) {
    for (Index l = 0; l < side; ++l) {
      const Index row = idx(l, m);
      t.emplace_back(row, row, -4.0 * c);
      if (l > 0) t.emplace_back(row, idx(l - 1, m), c);
      if (l + 1 < side) t.emplace_back(row, idx(l + 1, m), c);
      if (m > 0) t.emplace_back(row, idx(l, m - 1), c);
      if (m + 1 < side) t.emplace_back(row, idx(l, m + 1), c);
    }
  }
  return SparseOperator::from_triplets(side * side, side * side, t);
}

namespace detail {

/// V' and optionally its gradient -h^2 l(q, F(q)).
inline double plate_residual(const PlateOperators& ops, const Vector& q, Vector* grad) {
  const Vector F = ops.airy(q);
  if (grad != nullptr) *grad = (-ops.h * ops.h) * ops.ell(q, F);
  return ops.stress_energy(F);
}

}  // namespace detail

inline PlateModel plate_build(const PlateParams& params) {
  params.validate();
  auto ops = std::make_shared<PlateOperators>();
  ops->grid = params.resolved_grid();
  ops->side = ops->grid - 1;
  ops->h = params.side / ops->grid;
  ops->e_xi = params.young * params.thickness;
  ops->laplacian = plate_laplacian(ops->side, ops->h);
  ops->biharmonic = ops->laplacian * ops->laplacian;
  ops->biharmonic_factor = spd_factorize(ops->biharmonic);

  PlateModel model;
  model.params = params;
  model.ops = ops;

  const Index n = ops->dim();
  const double h2 = ops->h * ops->h;
  HamiltonianSystem sys;
  sys.name = "plate";
  sys.dim = n;
  sys.mass = MassMatrix::scalar(n, params.rho * params.thickness * h2);
  auto nearest = [&](double frac) {
    return std::clamp<Index>(static_cast<Index>(std::lround(frac * ops->grid)) - 1, 0,
                             ops->side - 1);
  };
  sys.probe_index = ops->index(nearest(params.probe_x), nearest(params.probe_y));

  PotentialSplit split;
  split.stiffness = ops->biharmonic.scaled(params.rigidity() * h2);
  const SparseOperator stiffness = split.stiffness;
  PlateOperatorsPtr shared = ops;
  split.residual = [shared](const Vector& q) {
    return detail::plate_residual(*shared, q, nullptr);
  };
  split.residual_with_gradient = [shared](const Vector& q, Vector& g) {
    return detail::plate_residual(*shared, q, &g);
  };
  sys.potential = [shared, stiffness](const Vector& q) {
    return 0.5 * q.dot(stiffness.apply(q)) + detail::plate_residual(*shared, q, nullptr);
  };
  sys.potential_with_gradient = [shared, stiffness](const Vector& q, Vector& g) {
    const double v = detail::plate_residual(*shared, q, &g);
    const Vector kq = stiffness.apply(q);
    g += kq;
    return 0.5 * q.dot(kq) + v;
  };
  sys.split = std::move(split);
  model.system = std::make_shared<const HamiltonianSystem>(std::move(sys));
  return model;
}

/// q = alpha xi sin(pi x / L) sin(pi y / L), p = 0.
inline std::pair<Vector, Vector> plate_initial(const PlateModel& model, double alpha) {
  const PlateOperators& ops = *model.ops;
  Vector q(ops.dim());
  const double amp = alpha * model.params.thickness;
  for (Index m = 0; m < ops.side; ++m) {
    for (Index l = 0; l < ops.side; ++l) {
      const double x = static_cast<double>(l + 1) / ops.grid;
      const double y = static_cast<double>(m + 1) / ops.grid;
      q[ops.index(l, m)] =
          amp * std::sin(std::numbers::pi * x) * std::sin(std::numbers::pi * y);
    }
  }
  return {q, Vector::Zero(ops.dim())};
}

/// Explicit update with F^n from the Airy solve; the same as sv_step on the
/// plate system.
inline Vector plate_sv_step(const PlateModel& model, const Vector& q_n,
                            const Vector& q_nm1, double k,
                            StepCounters* counters = nullptr) {
  return sv_step(*model.system, q_n, q_nm1, k, counters);
}

struct PlateLinImpState {
  Vector q;       // q^{n+1}
  Vector q_prev;  // q^n
  Vector F;       // F^{n+1}
  Vector F_prev;  // F^n
};

/// Sparse LDL^T solver for the per-step system. The symbolic analysis is
/// reused across steps since the pattern is fixed; the numeric factorization
/// is redone every step.
class PlateLinImpSolver {
 public:
  const Vector& solve(const SparseMatrix& a, const Vector& rhs) {
    const Eigen::SparseMatrix<double> col(a);
    if (!analyzed_ || col.nonZeros() != pattern_nnz_) {
      ldlt_.analyzePattern(col);
      analyzed_ = true;
      pattern_nnz_ = col.nonZeros();
    }
    ldlt_.factorize(col);
    if (ldlt_.info() != Eigen::Success) {
      throw LinearSolveFailure("plate_linimp: factorization failed");
    }
    x_ = ldlt_.solve(rhs);
    // One step of iterative refinement.
    x_ += ldlt_.solve(rhs - col * x_);
    if (ldlt_.info() != Eigen::Success || !x_.allFinite()) {
      throw LinearSolveFailure("plate_linimp: solve failed");
    }
    return x_;
  }

 private:
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  bool analyzed_ = false;
  Index pattern_nnz_ = 0;
  Vector x_;
};

/// One step of the linearly implicit conservative scheme
///   q^{n+1} = (2I - Q k^2 / rho xi D_bb) q^n - q^{n-1} + k^2 / (2 rho xi) l(q^n, F^{n+1} + F^{n-1}),
///   (1 / E xi) D_bb (F^{n+1} + F^n) = -l(q^{n+1}, q^n).
/// With L = l(q^n, .) symmetric, q^{n+1} is eliminated and the SPD system
///   (D_bb / E xi + c L^2) F^{n+1} = -D_bb F^n / E xi - L r,  c = k^2 / (2 rho xi),
/// is assembled and factorized anew each step.
inline PlateLinImpState plate_linimp_step(const PlateModel& model,
                                          const PlateLinImpState& s, double k,
                                          PlateLinImpSolver& solver,
                                          StepCounters* counters = nullptr) {
  const PlateOperators& ops = *model.ops;
  const Index n = ops.dim();
  require_size(s.q.size(), n, "plate_linimp_step(q)");
  const double rho_xi = model.params.rho * model.params.thickness;
  const double c = k * k / (2.0 * rho_xi);
  const double stiff = model.params.rigidity() * k * k / rho_xi;

  const SparseMatrix L = ops.ell_matrix(s.q);
  const Vector r =
      2.0 * s.q - stiff * ops.biharmonic.apply(s.q) - s.q_prev + c * (L * s.F_prev);
  const SparseMatrix& D = ops.biharmonic.matrix();
  const SparseMatrix a = SparseMatrix(D * (1.0 / ops.e_xi)) + SparseMatrix(L * L) * c;
  const Vector rhs = -(D * s.F) / ops.e_xi - L * r;

  PlateLinImpState out;
  out.F = solver.solve(a, rhs);
  out.q = r + c * (L * out.F);
  out.q_prev = s.q;
  out.F_prev = s.F;
  if (counters != nullptr) ++counters->linear_solves;
  ieq::detail::check_finite(out.q, "plate_linimp");
  return out;
}

inline PlateLinImpState plate_linimp_step(const PlateModel& model,
                                          const PlateLinImpState& s, double k,
                                          StepCounters* counters = nullptr) {
  PlateLinImpSolver solver;
  return plate_linimp_step(model, s, k, solver, counters);
}

/// rho xi h^2 / 2 |(q^{n+1} - q^n) / k|^2 + Q h^2 / 2 (q^{n+1})^T D_bb q^n
///   + h^2 / (4 E xi) (F^{n+1 T} D_bb F^{n+1} + F^{n T} D_bb F^n).
inline double plate_linimp_energy(const PlateModel& model, const Vector& q_next,
                                  const Vector& q_n, const Vector& F_next,
                                  const Vector& F_n, double k) {
  const PlateOperators& ops = *model.ops;
  const double h2 = ops.h * ops.h;
  const double kinetic =
      0.5 * model.params.rho * model.params.thickness * h2 * (q_next - q_n).squaredNorm() / (k * k);
  const double linear = 0.5 * model.params.rigidity() * h2 * q_next.dot(ops.biharmonic.apply(q_n));
  return kinetic + linear + 0.5 * (ops.stress_energy(F_next) + ops.stress_energy(F_n));
}

class PlateLinImpStepper final : public Stepper {
 public:
  /// F^0 from the Airy solve, q^1 from start_pair, and
  /// F^1 from (1 / E xi) D_bb (F^1 + F^0) = -l(q^1, q^0).
  PlateLinImpStepper(std::shared_ptr<const PlateModel> model, const Vector& q0,
                     const Vector& p0, const SchemeConfig& cfg)
      : Stepper(cfg.dt), model_(std::move(model)) {
    const PlateOperators& ops = *model_->ops;
    auto [a, b] = start_pair(*model_->system, q0, p0, dt_, cfg.start_order);
    state_.q_prev = std::move(a);
    state_.q = std::move(b);
    state_.F_prev = ops.airy(state_.q_prev);
    state_.F = -ops.e_xi * ops.biharmonic_factor.solve(ops.ell(state_.q, state_.q_prev)) -
               state_.F_prev;
    const double h0 = std::max(energy(), energy_continuous(*model_->system, q0, p0));
    set_momentum_limit(ieq::detail::divergence_limit(*model_->system, h0,
                                                     cfg.divergence_threshold));
  }

  std::string_view name() const override { return "plate_linimp"; }

  void step() override {
    state_ = plate_linimp_step(*model_, state_, dt_, solver_, &counters_);
    advance("plate_linimp");
  }

  double energy() const override {
    return plate_linimp_energy(*model_, state_.q, state_.q_prev, state_.F, state_.F_prev,
                               dt_);
  }

  const Vector& position() const override { return state_.q_prev; }
  Vector momentum() const override {
    return model_->system->mass.apply((state_.q - state_.q_prev) / dt_);
  }
  const PlateLinImpState& state() const noexcept { return state_; }

  PersistedState persist() const override {
    return {"plate_linimp", index_, dt_, state_.q, state_.q_prev, std::nullopt,
            {{"F", state_.F}, {"F_prev", state_.F_prev}}};
  }

  double energy_of(const PersistedState& s) const override {
    return plate_linimp_energy(*model_, s.q, s.q_prev, s.extra("F"), s.extra("F_prev"),
                               s.dt);
  }

 private:
  std::shared_ptr<const PlateModel> model_;
  PlateLinImpState state_;
  PlateLinImpSolver solver_;
};

}  // namespace ieq::models
