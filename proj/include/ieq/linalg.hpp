#pragma once

// Small linear-algebra kernel shared by the integrators and the models:
// sparse/dense operator storage, cached SPD factorizations, the rank-1
// Sherman-Morrison solve and a power-iteration bound on lambda_max.

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "ieq/errors.hpp"

namespace ieq {

using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using DenseMatrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

/// Floating-point operation tally used by the cost tests.
struct OpCounter {
  std::uint64_t flops = 0;

  void add(std::uint64_t n) noexcept { flops += n; }
};

inline void count(OpCounter* ops, std::uint64_t n) noexcept {
  if (ops != nullptr) ops->add(n);
}

inline void require_size(Index got, Index expected, const char* what) {
  if (got != expected) {
    throw DimensionMismatch(std::string(what) + ": expected size " +
                            std::to_string(expected) + ", got " +
                            std::to_string(got));
  }
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

// ---------------------------------------------------------------------------
// SparseOperator
// ---------------------------------------------------------------------------

/// Real linear operator stored by compressed rows. Operators smaller than
/// kDenseBelow in both dimensions are additionally kept as a dense matrix and
/// applied through it.
class SparseOperator {
 public:
  static constexpr Index kDenseBelow = 32;

  SparseOperator() = default;

  explicit SparseOperator(SparseMatrix m) : sparse_(std::move(m)) {
    sparse_.makeCompressed();
    if (sparse_.rows() < kDenseBelow && sparse_.cols() < kDenseBelow) {
      dense_ = DenseMatrix(sparse_);
    }
  }

  static SparseOperator from_triplets(Index rows, Index cols,
                                      const std::vector<Triplet>& entries) {
    SparseMatrix m(rows, cols);
    m.setFromTriplets(entries.begin(), entries.end());
    return SparseOperator(std::move(m));
  }

  static SparseOperator identity(Index n) {
    SparseMatrix m(n, n);
    m.setIdentity();
    return SparseOperator(std::move(m));
  }

  Index rows() const noexcept { return sparse_.rows(); }
  Index cols() const noexcept { return sparse_.cols(); }
  Index nonzeros() const noexcept { return sparse_.nonZeros(); }
  bool is_dense() const noexcept { return dense_.has_value(); }

  const SparseMatrix& matrix() const noexcept { return sparse_; }

  DenseMatrix to_dense() const { return dense_ ? *dense_ : DenseMatrix(sparse_); }

  void apply(const Vector& x, Vector& y) const {
    require_size(x.size(), cols(), "SparseOperator::apply");
    if (dense_) {
      y.noalias() = *dense_ * x;
    } else {
      y.noalias() = sparse_ * x;
    }
  }

  Vector apply(const Vector& x) const {
    Vector y(rows());
    apply(x, y);
    return y;
  }

  void apply_transpose(const Vector& x, Vector& y) const {
    require_size(x.size(), rows(), "SparseOperator::apply_transpose");
    if (dense_) {
      y.noalias() = dense_->transpose() * x;
    } else {
      y.noalias() = sparse_.transpose() * x;
    }
  }

  Vector apply_transpose(const Vector& x) const {
    Vector y(cols());
    apply_transpose(x, y);
    return y;
  }

  /// Floating-point cost of one application.
  std::uint64_t apply_cost() const noexcept {
    return dense_ ? static_cast<std::uint64_t>(2 * rows() * cols())
                  : static_cast<std::uint64_t>(2 * nonzeros());
  }

  SparseOperator operator*(const SparseOperator& rhs) const {
    require_size(rhs.rows(), cols(), "SparseOperator product");
    return SparseOperator(SparseMatrix(sparse_ * rhs.sparse_));
  }

  SparseOperator transpose() const {
    return SparseOperator(SparseMatrix(sparse_.transpose()));
  }

  SparseOperator scaled(double s) const {
    return SparseOperator(SparseMatrix(s * sparse_));
  }

  double symmetry_defect() const {
    SparseMatrix d = sparse_ - SparseMatrix(sparse_.transpose());
    return d.norm();
  }

 private:
  SparseMatrix sparse_;
  std::optional<DenseMatrix> dense_;
};

// ---------------------------------------------------------------------------
// SPD factorization
// ---------------------------------------------------------------------------

/// Opaque Cholesky factorization of an SPD matrix. Copies share the same
/// immutable factor; solves are const and may run concurrently.
class FactorizationHandle {
 public:
  using SparseLlt = Eigen::SimplicialLLT<Eigen::SparseMatrix<double>>;
  using DenseLlt = Eigen::LLT<DenseMatrix>;

  FactorizationHandle() = default;

  Index dim() const noexcept { return dim_; }
  bool valid() const noexcept { return impl_ != nullptr; }

  Vector solve(const Vector& b) const {
    require_size(b.size(), dim_, "FactorizationHandle::solve");
    return std::visit([&](const auto& f) -> Vector { return f.solve(b); },
                      *impl_);
  }

  /// Lower-triangular solve L^{-1} b (dense factorizations only).
  Vector solve_lower(const Vector& b) const {
    const auto* dense = std::get_if<DenseLlt>(impl_.get());
    if (dense == nullptr) throw Error("solve_lower requires a dense factor");
    return dense->matrixL().solve(b);
  }

  Vector solve_upper(const Vector& b) const {
    const auto* dense = std::get_if<DenseLlt>(impl_.get());
    if (dense == nullptr) throw Error("solve_upper requires a dense factor");
    return dense->matrixU().solve(b);
  }

  friend FactorizationHandle spd_factorize(const DenseMatrix& a);
  friend FactorizationHandle spd_factorize(const SparseMatrix& a);

 private:
  using Impl = std::variant<DenseLlt, SparseLlt>;

  std::shared_ptr<const Impl> impl_;
  Index dim_ = 0;
};

namespace detail {

inline void check_symmetric(double defect, double scale) {
  if (!(defect <= 1e-12 * (1.0 + scale))) {
    throw NotPositiveDefinite("matrix is not symmetric");
  }
}

}  // namespace detail

inline FactorizationHandle spd_factorize(const DenseMatrix& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("spd_factorize: not square");
  detail::check_symmetric((a - a.transpose()).norm(), a.norm());
  auto impl = std::make_shared<FactorizationHandle::Impl>(
      std::in_place_type<FactorizationHandle::DenseLlt>, a);
  if (std::get<FactorizationHandle::DenseLlt>(*impl).info() != Eigen::Success) {
    throw NotPositiveDefinite("Cholesky factorization hit a non-positive pivot");
  }
  FactorizationHandle h;
  h.impl_ = std::move(impl);
  h.dim_ = a.rows();
  return h;
}

inline FactorizationHandle spd_factorize(const SparseMatrix& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("spd_factorize: not square");
  detail::check_symmetric(
      SparseMatrix(a - SparseMatrix(a.transpose())).norm(), a.norm());
  if (a.rows() < SparseOperator::kDenseBelow) return spd_factorize(DenseMatrix(a));
  auto impl = std::make_shared<FactorizationHandle::Impl>(
      std::in_place_type<FactorizationHandle::SparseLlt>);
  auto& llt = std::get<FactorizationHandle::SparseLlt>(*impl);
  llt.compute(Eigen::SparseMatrix<double>(a));
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("sparse Cholesky hit a non-positive pivot");
  }
  FactorizationHandle h;
  h.impl_ = std::move(impl);
  h.dim_ = a.rows();
  return h;
}

inline FactorizationHandle spd_factorize(const SparseOperator& a) {
  return spd_factorize(a.matrix());
}

// ---------------------------------------------------------------------------
// Sherman-Morrison
// ---------------------------------------------------------------------------

/// Solves (I + alpha beta^T) x = b in O(N): two dot products and one axpy.
inline void sherman_morrison_solve(const Vector& alpha, const Vector& beta,
                                   const Vector& b, Vector& x,
                                   OpCounter* ops = nullptr) {
  const Index n = b.size();
  require_size(alpha.size(), n, "sherman_morrison_solve(alpha)");
  require_size(beta.size(), n, "sherman_morrison_solve(beta)");
  const double denom = 1.0 + beta.dot(alpha);
  if (!(std::abs(denom) >= 1e-14)) {
    throw SingularUpdate("1 + beta^T alpha is numerically zero");
  }
  const double coef = beta.dot(b) / denom;
  x = b - coef * alpha;
  count(ops, static_cast<std::uint64_t>(6 * n + 3));
}

inline Vector sherman_morrison_solve(const Vector& alpha, const Vector& beta,
                                     const Vector& b, OpCounter* ops = nullptr) {
  Vector x(b.size());
  sherman_morrison_solve(alpha, beta, b, x, ops);
  return x;
}

// ---------------------------------------------------------------------------
// Largest eigenvalue
// ---------------------------------------------------------------------------

struct EigenOptions {
  double tol = 1e-9;       // Ritz residual relative to the Ritz value
  Index krylov_dim = 80;   // Lanczos basis size per restart
  int max_restarts = 500;
};

/// Largest eigenvalue of a symmetric PSD operator given by its action
/// `apply(x, y)` (y = A x). Explicitly restarted Lanczos with full
/// reorthogonalisation from a fixed pseudo-random start, so the result is
/// deterministic and the start cannot be orthogonal to the dominant mode by
/// symmetry.
template <class Apply>
double max_eig_sym(Apply&& apply, Index n, const EigenOptions& opt = {}) {
  if (n <= 0) throw DimensionMismatch("max_eig_sym: empty operator");
  const Index m_max = std::min<Index>(n, std::max<Index>(opt.krylov_dim, 2));
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> unit(0.5, 1.5);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = (rng() & 1U ? 1.0 : -1.0) * unit(rng);

  DenseMatrix basis(n, m_max + 1);
  Vector alpha(m_max);
  Vector beta(m_max);
  Vector x(n);
  Vector w(n);
  for (int restart = 0; restart <= opt.max_restarts; ++restart) {
    basis.col(0) = v.normalized();
    Index m = 0;
    bool invariant = false;
    for (Index j = 0; j < m_max; ++j) {
      x = basis.col(j);
      apply(x, w);
      alpha[j] = x.dot(w);
      for (int pass = 0; pass < 2; ++pass) {
        const Vector c = basis.leftCols(j + 1).transpose() * w;
        w.noalias() -= basis.leftCols(j + 1) * c;
      }
      beta[j] = w.norm();
      m = j + 1;
      if (beta[j] <= 1e-14 * std::max(std::abs(alpha[j]), 1e-300)) {
        invariant = true;
        break;
      }
      basis.col(j + 1) = w / beta[j];
    }
    DenseMatrix t = DenseMatrix::Zero(m, m);
    for (Index j = 0; j < m; ++j) {
      t(j, j) = alpha[j];
      if (j + 1 < m) t(j, j + 1) = t(j + 1, j) = beta[j];
    }
    const Eigen::SelfAdjointEigenSolver<DenseMatrix> es(t);
    const double theta = es.eigenvalues()[m - 1];
    const Vector s = es.eigenvectors().col(m - 1);
    const double residual = invariant ? 0.0 : std::abs(beta[m - 1] * s[m - 1]);
    if (residual <= opt.tol * std::max(std::abs(theta), 1e-300) || m == n) {
      return std::max(theta, 0.0);
    }
    v = basis.leftCols(m) * s;
  }
  throw NoConvergence("Lanczos did not converge within " +
                      std::to_string(opt.max_restarts) + " restarts");
}

inline double max_eig_sym(const SparseOperator& a,
                          const EigenOptions& opt = {}) {
  if (a.rows() != a.cols()) throw DimensionMismatch("max_eig_sym: not square");
  return max_eig_sym([&](const Vector& x, Vector& y) { a.apply(x, y); },
                     a.rows(), opt);
}

inline double max_eig_sym(const DenseMatrix& a,
                          const EigenOptions& opt = {}) {
  if (a.rows() != a.cols()) throw DimensionMismatch("max_eig_sym: not square");
  return max_eig_sym([&](const Vector& x, Vector& y) { y.noalias() = a * x; },
                     a.rows(), opt);
}

// ---------------------------------------------------------------------------
// MassMatrix
// ---------------------------------------------------------------------------

/// Constant SPD mass matrix: c I, diag(d) or a dense SPD matrix.
class MassMatrix {
 public:
  enum class Kind { scalar, diagonal, dense };

  static MassMatrix scalar(Index n, double c) {
    if (n <= 0) throw DimensionMismatch("MassMatrix: empty");
    if (!(c > 0.0) || !std::isfinite(c)) {
      throw NotPositiveDefinite("scalar mass must be positive");
    }
    MassMatrix m;
    m.kind_ = Kind::scalar;
    m.n_ = n;
    m.scalar_ = c;
    return m;
  }

  static MassMatrix identity(Index n) { return scalar(n, 1.0); }

  static MassMatrix diagonal(Vector d) {
    if (d.size() == 0) throw DimensionMismatch("MassMatrix: empty");
    if (!(d.minCoeff() > 0.0) || !d.allFinite()) {
      throw NotPositiveDefinite("diagonal mass entries must be positive");
    }
    MassMatrix m;
    m.kind_ = Kind::diagonal;
    m.n_ = d.size();
    m.diag_ = std::move(d);
    return m;
  }

  static MassMatrix dense(const DenseMatrix& a) {
    MassMatrix m;
    m.kind_ = Kind::dense;
    m.n_ = a.rows();
    m.factor_ = spd_factorize(a);
    m.dense_ = a;
    return m;
  }

  Kind kind() const noexcept { return kind_; }
  Index dim() const noexcept { return n_; }

  Vector apply(const Vector& x) const {
    require_size(x.size(), n_, "MassMatrix::apply");
    switch (kind_) {
      case Kind::scalar: return scalar_ * x;
      case Kind::diagonal: return diag_.cwiseProduct(x);
      case Kind::dense: return dense_ * x;
    }
    return x;
  }

  /// M^{-1} x.
  Vector solve(const Vector& x) const {
    require_size(x.size(), n_, "MassMatrix::solve");
    switch (kind_) {
      case Kind::scalar: return x / scalar_;
      case Kind::diagonal: return x.cwiseQuotient(diag_);
      case Kind::dense: return factor_.solve(x);
    }
    return x;
  }

  /// Cost of one solve, in flops.
  std::uint64_t solve_cost() const noexcept {
    switch (kind_) {
      case Kind::scalar:
      case Kind::diagonal: return static_cast<std::uint64_t>(n_);
      case Kind::dense: return static_cast<std::uint64_t>(2 * n_ * n_);
    }
    return 0;
  }

  /// x^T M^{-1} y.
  double inverse_inner(const Vector& x, const Vector& y) const {
    if (kind_ == Kind::scalar) return x.dot(y) / scalar_;
    return x.dot(solve(y));
  }

  /// L^{-1} x for the Cholesky factor M = L L^T.
  Vector whiten(const Vector& x) const {
    switch (kind_) {
      case Kind::scalar: return x / std::sqrt(scalar_);
      case Kind::diagonal: return x.cwiseQuotient(diag_.cwiseSqrt());
      case Kind::dense: return factor_.solve_lower(x);
    }
    return x;
  }

  /// L^{-T} x.
  Vector whiten_transpose(const Vector& x) const {
    switch (kind_) {
      case Kind::scalar: return x / std::sqrt(scalar_);
      case Kind::diagonal: return x.cwiseQuotient(diag_.cwiseSqrt());
      case Kind::dense: return factor_.solve_upper(x);
    }
    return x;
  }

  double max_eigenvalue() const {
    switch (kind_) {
      case Kind::scalar: return scalar_;
      case Kind::diagonal: return diag_.maxCoeff();
      case Kind::dense: return max_eig_sym(dense_);
    }
    return 0.0;
  }

  DenseMatrix to_dense() const {
    switch (kind_) {
      case Kind::scalar: return scalar_ * DenseMatrix::Identity(n_, n_);
      case Kind::diagonal: return diag_.asDiagonal();
      case Kind::dense: return dense_;
    }
    return {};
  }

 private:
  MassMatrix() = default;

  Kind kind_ = Kind::scalar;
  Index n_ = 0;
  double scalar_ = 1.0;
  Vector diag_;
  DenseMatrix dense_;
  FactorizationHandle factor_;
};

}  // namespace ieq
