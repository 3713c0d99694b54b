#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "ieq/hamiltonian.hpp"
#include "ieq/linalg.hpp"
#include "ieq/quadrature.hpp"
#include "support.hpp"

namespace ieq {
namespace {

TEST(ShermanMorrison, MatchesDenseSolveOnRandomRankOneSystems) {
  std::mt19937_64 rng(7);
  for (Index n : {1, 2, 5, 20, 100}) {
    for (int trial = 0; trial < 10; ++trial) {
      const Vector a = test::random_vector(rng, n);
      const Vector b = test::random_vector(rng, n);
      const Vector rhs = test::random_vector(rng, n);
      if (std::abs(1.0 + b.dot(a)) < 1e-3) continue;
      const DenseMatrix m = DenseMatrix::Identity(n, n) + a * b.transpose();
      const Vector dense = m.fullPivLu().solve(rhs);
      const Vector x = sherman_morrison_solve(a, b, rhs);
      EXPECT_LE((x - dense).norm(), 1e-12 * std::max(1.0, dense.norm())) << "n=" << n;
    }
  }
}

TEST(ShermanMorrison, SingularUpdateIsRejected) {
  Vector a(2);
  a << 1.0, 0.0;
  Vector b(2);
  b << -1.0, 0.0;
  EXPECT_THROW(sherman_morrison_solve(a, b, Vector::Ones(2)), SingularUpdate);
}

TEST(ShermanMorrison, CostIsLinear) {
  OpCounter small;
  OpCounter large;
  sherman_morrison_solve(Vector::Ones(10), Vector::Ones(10), Vector::Ones(10), &small);
  sherman_morrison_solve(Vector::Ones(1000), Vector::Ones(1000), Vector::Ones(1000), &large);
  // 6 N + 3: two dot products, one axpy and the scalar work.
  EXPECT_EQ(small.flops, 63u);
  EXPECT_EQ(large.flops - small.flops, 6u * 990u);
}

TEST(Factorization, DenseAndSparseSolveSpdSystems) {
  std::mt19937_64 rng(3);
  const DenseMatrix a = test::random_spd(rng, 40);
  const Vector b = test::random_vector(rng, 40);
  const Vector ref = a.llt().solve(b);
  EXPECT_LE((spd_factorize(a).solve(b) - ref).norm(), 1e-12 * ref.norm());
  const SparseMatrix s = a.sparseView();
  EXPECT_LE((spd_factorize(s).solve(b) - ref).norm(), 1e-12 * ref.norm());
}

TEST(Factorization, IndefiniteMatrixThrows) {
  DenseMatrix a(2, 2);
  a << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(spd_factorize(a), NotPositiveDefinite);
}

TEST(Factorization, DimensionMismatchThrows) {
  const auto f = spd_factorize(DenseMatrix(DenseMatrix::Identity(3, 3)));
  EXPECT_THROW(f.solve(Vector::Ones(4)), DimensionMismatch);
}

TEST(SparseOperatorTest, DenseAndSparsePathsAgree) {
  std::mt19937_64 rng(11);
  for (Index n : {8, 64}) {
    std::vector<Triplet> t;
    for (Index i = 0; i < n; ++i) {
      t.emplace_back(i, i, 2.0);
      if (i + 1 < n) t.emplace_back(i, i + 1, -1.0);
    }
    const SparseOperator op = SparseOperator::from_triplets(n, n, t);
    const Vector x = test::random_vector(rng, n);
    EXPECT_LE((op.apply(x) - op.to_dense() * x).norm(), 1e-14 * x.norm());
    EXPECT_LE((op.apply_transpose(x) - op.to_dense().transpose() * x).norm(), 1e-14 * x.norm());
  }
}

TEST(MaxEigenvalue, LaplacianLargestEigenvalue) {
  const Index n = 500;
  std::vector<Triplet> t;
  for (Index i = 0; i < n; ++i) {
    t.emplace_back(i, i, 2.0);
    if (i + 1 < n) {
      t.emplace_back(i, i + 1, -1.0);
      t.emplace_back(i + 1, i, -1.0);
    }
  }
  const double exact = 2.0 - 2.0 * std::cos(n * std::numbers::pi / (n + 1));
  const double got = max_eig_sym(SparseOperator::from_triplets(n, n, t));
  EXPECT_NEAR(got, exact, 1e-10 * exact);
}

TEST(MaxEigenvalue, DominantModeOrthogonalToOnes) {
  // [[1, -1], [-1, 1]] annihilates the ones vector.
  DenseMatrix a(2, 2);
  a << 1.0, -1.0, -1.0, 1.0;
  EXPECT_NEAR(max_eig_sym(a), 2.0, 1e-9);
}

TEST(MassMatrixTest, KindsAgreeWithDenseAlgebra) {
  std::mt19937_64 rng(5);
  const DenseMatrix a = test::random_spd(rng, 6);
  const Vector x = test::random_vector(rng, 6);
  const Vector y = test::random_vector(rng, 6);
  const MassMatrix m = MassMatrix::dense(a);
  EXPECT_LE((m.apply(x) - a * x).norm(), 1e-13);
  EXPECT_LE((m.solve(x) - a.llt().solve(x)).norm(), 1e-12);
  EXPECT_NEAR(m.inverse_inner(x, y), x.dot(a.llt().solve(y)), 1e-12);
  // whiten(x)^T whiten(y) = x^T M^{-1} y
  EXPECT_NEAR(m.whiten(x).dot(m.whiten(y)), m.inverse_inner(x, y), 1e-12);
  EXPECT_NEAR(m.max_eigenvalue(), a.selfadjointView<Eigen::Lower>().eigenvalues().maxCoeff(), 1e-8);

  const MassMatrix s = MassMatrix::scalar(6, 2.5);
  EXPECT_LE((s.solve(x) - x / 2.5).norm(), 1e-15);
  EXPECT_DOUBLE_EQ(s.max_eigenvalue(), 2.5);

  Vector d(3);
  d << 1.0, 2.0, 4.0;
  const MassMatrix diag = MassMatrix::diagonal(d);
  EXPECT_LE((diag.apply(Vector::Ones(3)) - d).norm(), 0.0);
  EXPECT_DOUBLE_EQ(diag.inverse_inner(Vector::Ones(3), Vector::Ones(3)), 1.75);
}

TEST(MassMatrixTest, RejectsNonPositive) {
  EXPECT_THROW(MassMatrix::scalar(3, 0.0), NotPositiveDefinite);
  DenseMatrix a(2, 2);
  a << 1.0, 0.0, 0.0, -1.0;
  EXPECT_THROW(MassMatrix::dense(a), NotPositiveDefinite);
}

TEST(Quadrature, GaussLegendreExactness) {
  for (int n = 1; n <= 8; ++n) {
    const QuadratureRule r = gauss_legendre(n);
    double wsum = 0.0;
    for (double w : r.weights) wsum += w;
    EXPECT_NEAR(wsum, 1.0, 1e-14);
    for (int deg = 0; deg <= 2 * n - 1; ++deg) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += r.weights[j] * std::pow(r.nodes[j], deg);
      EXPECT_NEAR(s, 1.0 / (deg + 1), 1e-14) << "n=" << n << " deg=" << deg;
    }
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += r.weights[j] * std::pow(r.nodes[j], 2 * n);
    EXPECT_GT(std::abs(s - 1.0 / (2 * n + 1)), 1e-10);
  }
  EXPECT_THROW(gauss_legendre(0), ConfigError);
}

TEST(Hamiltonian, QuadratiseAndAuxGradient) {
  const test::ToySystem toy = test::toy_system(5, 1);
  std::mt19937_64 rng(2);
  const Vector q = test::random_vector(rng, 5, 0.3);
  const double eps = 0.5;
  const double psi = quadratise(*toy.system, q, eps);
  EXPECT_NEAR(0.5 * psi * psi, toy.system->potential(q) + eps, 1e-12);
  // grad psi = grad V / sqrt(2 (V + eps))
  const Vector g = aux_gradient(*toy.system, q, eps);
  const double err = test::gradient_fd_error(
      [&](const Vector& x) { return quadratise(*toy.system, x, eps); }, g, q, 1e-6);
  EXPECT_LE(err, 1e-7);
}

TEST(Hamiltonian, NegativePotentialAndDegeneracy) {
  HamiltonianSystem sys;
  sys.name = "neg";
  sys.dim = 1;
  sys.potential = [](const Vector& q) { return -1.0 - q[0] * q[0]; };
  sys.potential_with_gradient = [](const Vector& q, Vector& g) {
    g.resize(1);
    g[0] = -2.0 * q[0];
    return -1.0 - q[0] * q[0];
  };
  EXPECT_THROW(quadratise(sys, Vector::Zero(1), 0.0), NegativePotential);
  EXPECT_NO_THROW(quadratise(sys, Vector::Zero(1), 2.0));

  HamiltonianSystem flat;
  flat.name = "flat";
  flat.dim = 1;
  flat.potential = [](const Vector&) { return 0.0; };
  flat.potential_with_gradient = [](const Vector&, Vector& g) {
    g = Vector::Ones(1);
    return 0.0;
  };
  EXPECT_THROW(aux_gradient(flat, Vector::Zero(1), 0.0), DegeneratePotential);
  EXPECT_THROW(flat.require_split(), NoSplit);
}

TEST(Hamiltonian, ContinuousEnergy) {
  const test::ToySystem toy = test::toy_system(4, 9);
  std::mt19937_64 rng(4);
  const Vector q = test::random_vector(rng, 4);
  const Vector p = test::random_vector(rng, 4);
  const double expected = 0.5 * p.dot(toy.mass.llt().solve(p)) + 0.5 * q.dot(toy.stiffness * q) +
                          test::toy_residual(toy.quartic, q, nullptr);
  EXPECT_NEAR(energy_continuous(*toy.system, q, p), expected, 1e-12 * std::abs(expected));
  EXPECT_THROW(energy_continuous(*toy.system, q, Vector::Ones(3)), DimensionMismatch);
}

}  // namespace
}  // namespace ieq
