#pragma once

// Separable Hamiltonian systems H = 1/2 p^T M^{-1} p + V(q) with V >= 0,
// their optional split V = 1/2 q^T K q + V'(q), and the quadratised
// auxiliary variable psi = sqrt(2 (V + eps)).

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "ieq/errors.hpp"
#include "ieq/linalg.hpp"

namespace ieq {

/// Evaluates a potential and writes its gradient into `grad` (resized by the
/// callee if needed). Returns the potential value.
using PotentialWithGradient = std::function<double(const Vector& q, Vector& grad)>;
using PotentialFn = std::function<double(const Vector& q)>;

struct PotentialSplit {
  SparseOperator stiffness;               // K, symmetric PSD
  PotentialFn residual;                   // V'(q) >= 0
  PotentialWithGradient residual_with_gradient;
};

struct HamiltonianSystem {
  std::string name;
  Index dim = 0;
  MassMatrix mass = MassMatrix::identity(1);
  PotentialFn potential;
  PotentialWithGradient potential_with_gradient;
  std::optional<PotentialSplit> split;
  Index probe_index = 0;

  bool has_split() const noexcept { return split.has_value(); }

  const PotentialSplit& require_split() const {
    if (!split) throw NoSplit(name + ": system has no potential split");
    return *split;
  }
};

using SystemPtr = std::shared_ptr<const HamiltonianSystem>;

/// Which potential the auxiliary variable quadratises.
enum class PotentialMode { full, residual };

inline double evaluate_potential(const HamiltonianSystem& sys, const Vector& q,
                                 PotentialMode mode) {
  require_size(q.size(), sys.dim, "potential");
  return mode == PotentialMode::full ? sys.potential(q)
                                     : sys.require_split().residual(q);
}

inline double evaluate_gradient(const HamiltonianSystem& sys, const Vector& q,
                                PotentialMode mode, Vector& grad) {
  require_size(q.size(), sys.dim, "gradient");
  return mode == PotentialMode::full
             ? sys.potential_with_gradient(q, grad)
             : sys.require_split().residual_with_gradient(q, grad);
}

inline double energy_continuous(const HamiltonianSystem& sys, const Vector& q,
                                const Vector& p) {
  require_size(q.size(), sys.dim, "energy_continuous(q)");
  require_size(p.size(), sys.dim, "energy_continuous(p)");
  return 0.5 * sys.mass.inverse_inner(p, p) + sys.potential(q);
}

namespace detail {

inline double shifted_potential(double v, double eps) {
  const double shifted = v + eps;
  if (!(shifted >= 0.0)) {
    throw NegativePotential("V(q) + eps = " + std::to_string(shifted) +
                            " is negative");
  }
  return shifted;
}

/// g = grad / sqrt(2 (V + eps)), with g = 0 whenever grad = 0.
inline void scale_to_aux_gradient(double v, double eps, Vector& grad) {
  const double shifted = shifted_potential(v, eps);
  if (grad.isZero(0.0)) return;
  if (shifted <= 1e-300) {
    throw DegeneratePotential(
        "V(q) + eps vanishes with a nonzero gradient; set eps > 0");
  }
  grad /= std::sqrt(2.0 * shifted);
}

}  // namespace detail

inline double quadratise(const HamiltonianSystem& sys, const Vector& q,
                         double eps, PotentialMode mode = PotentialMode::full) {
  return std::sqrt(2.0 * detail::shifted_potential(
                             evaluate_potential(sys, q, mode), eps));
}

inline Vector aux_gradient(const HamiltonianSystem& sys, const Vector& q,
                           double eps, PotentialMode mode = PotentialMode::full) {
  Vector g(sys.dim);
  const double v = evaluate_gradient(sys, q, mode, g);
  detail::scale_to_aux_gradient(v, eps, g);
  return g;
}

/// sqrt(2 lambda_max(M) H0): bound on |p| for a non-negative energy H0.
inline double momentum_bound(const HamiltonianSystem& sys, double h0) {
  return std::sqrt(2.0 * sys.mass.max_eigenvalue() * std::max(h0, 0.0));
}

}  // namespace ieq
