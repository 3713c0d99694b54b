#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <random>

#include "ieq/hamiltonian.hpp"

namespace ieq::test {

inline Vector random_vector(std::mt19937_64& rng, Index n, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

inline DenseMatrix random_spd(std::mt19937_64& rng, Index n, double shift = 1.0) {
  DenseMatrix a(n, n);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) a(i, j) = u(rng);
  }
  return a * a.transpose() / static_cast<double>(n) + shift * DenseMatrix::Identity(n, n);
}

/// V = 1/2 q^T K q + sum_i c_i q_i^4 / 4 with a dense SPD mass matrix.
struct ToySystem {
  DenseMatrix mass;
  DenseMatrix stiffness;
  Vector quartic;
  SystemPtr system;
};

inline double toy_residual(const Vector& c, const Vector& q, Vector* g) {
  double v = 0.0;
  for (Index i = 0; i < q.size(); ++i) {
    const double q2 = q[i] * q[i];
    v += 0.25 * c[i] * q2 * q2;
    if (g != nullptr) (*g)[i] = c[i] * q2 * q[i];
  }
  return v;
}

inline ToySystem toy_system(Index n, unsigned seed, bool identity_mass = false) {
  std::mt19937_64 rng(seed);
  ToySystem t;
  t.mass = identity_mass ? DenseMatrix(DenseMatrix::Identity(n, n)) : random_spd(rng, n);
  t.stiffness = random_spd(rng, n, 0.5) * 40.0;
  t.quartic = random_vector(rng, n).cwiseAbs() * 100.0;

  HamiltonianSystem sys;
  sys.name = "toy";
  sys.dim = n;
  sys.mass = identity_mass ? MassMatrix::identity(n) : MassMatrix::dense(t.mass);
  const DenseMatrix k = t.stiffness;
  const Vector c = t.quartic;
  sys.potential = [k, c](const Vector& q) { return 0.5 * q.dot(k * q) + toy_residual(c, q, nullptr); };
  sys.potential_with_gradient = [k, c](const Vector& q, Vector& g) {
    g.resize(q.size());
    const double v = toy_residual(c, q, &g);
    g += k * q;
    return v + 0.5 * q.dot(k * q);
  };
  PotentialSplit split;
  split.stiffness = SparseOperator(k.sparseView());
  split.residual = [c](const Vector& q) { return toy_residual(c, q, nullptr); };
  split.residual_with_gradient = [c](const Vector& q, Vector& g) {
    g.resize(q.size());
    return toy_residual(c, q, &g);
  };
  sys.split = std::move(split);
  t.system = std::make_shared<const HamiltonianSystem>(std::move(sys));
  return t;
}

/// Max over components of |analytic - central difference| (absolute step
/// `step`) relative to the gradient's infinity norm.
inline double gradient_fd_error(const std::function<double(const Vector&)>& f,
                                const Vector& grad, const Vector& q, double step) {
  Vector x = q;
  double worst = 0.0;
  const double scale = std::max(grad.lpNorm<Eigen::Infinity>(), 1e-300);
  for (Index i = 0; i < q.size(); ++i) {
    const double hi = step;
    x[i] = q[i] + hi;
    const double fp = f(x);
    x[i] = q[i] - hi;
    const double fm = f(x);
    x[i] = q[i];
    worst = std::max(worst, std::abs((fp - fm) / (2.0 * hi) - grad[i]) / scale);
  }
  return worst;
}

}  // namespace ieq::test
