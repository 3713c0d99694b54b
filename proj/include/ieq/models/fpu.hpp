#pragma once

// Fermi-Pasta-Ulam chain: 2M unit masses joined alternately by stiff linear
// springs and soft quartic springs, fixed walls at both ends:
//   V = w^2/4 sum_{i=1}^{M} (q_{2i} - q_{2i-1})^2 + sum_{i=0}^{M} (q_{2i+1} - q_{2i})^4
// with q_0 = q_{2M+1} = 0.

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "ieq/hamiltonian.hpp"

namespace ieq::models {

struct FpuParams {
  int half_count = 3;   // M; the state has N = 2M coordinates
  double omega = 50.0;  // linear spring frequency [1/s]
  bool quartic = true;  // false keeps only the linear springs (V' = 0)

  void validate() const {
    if (half_count < 1) throw ConfigError("fpu: half_count must be >= 1");
    if (!(omega > 0.0)) throw ConfigError("fpu: omega must be > 0");
  }
};

namespace detail {

// Quartic springs join (q_{2i}, q_{2i+1}) for i = 0..M; in 0-based storage
// that is (x[2i-1], x[2i]) with out-of-range entries treated as walls.
inline double quartic_springs(const Vector& q, Vector* grad) {
  const Index n = q.size();
  double v = 0.0;
  for (Index i = 0; i <= n / 2; ++i) {
    const Index left = 2 * i - 1;
    const Index right = 2 * i;
    const double ql = left >= 0 ? q[left] : 0.0;
    const double qr = right < n ? q[right] : 0.0;
    const double d = qr - ql;
    const double d2 = d * d;
    v += d2 * d2;
    if (grad != nullptr) {
      const double f = 4.0 * d2 * d;
      if (left >= 0) (*grad)[left] -= f;
      if (right < n) (*grad)[right] += f;
    }
  }
  return v;
}

// The gradient is formed as K q entry by entry, so with V' = 0 the split
// scheme and Stormer-Verlet see bit-identical forces.
inline double linear_springs(const Vector& q, double omega, Vector* grad) {
  const double c = 0.25 * omega * omega;
  const double k = 0.5 * omega * omega;
  double v = 0.0;
  for (Index i = 0; i + 1 < q.size(); i += 2) {
    const double d = q[i + 1] - q[i];
    v += c * d * d;
    if (grad != nullptr) {
      (*grad)[i] += k * q[i] - k * q[i + 1];
      (*grad)[i + 1] += k * q[i + 1] - k * q[i];
    }
  }
  return v;
}

}  // namespace detail

/// K = (w^2/2) I_M (x) [[1, -1], [-1, 1]].
inline SparseOperator fpu_stiffness(const FpuParams& params) {
  const double c = 0.5 * params.omega * params.omega;
  std::vector<Triplet> t;
  for (int i = 0; i < params.half_count; ++i) {
    const Index a = 2 * i;
    t.emplace_back(a, a, c);
    t.emplace_back(a, a + 1, -c);
    t.emplace_back(a + 1, a, -c);
    t.emplace_back(a + 1, a + 1, c);
  }
  const Index n = 2 * params.half_count;
  return SparseOperator::from_triplets(n, n, t);
}

inline HamiltonianSystem fpu_build(const FpuParams& params) {
  params.validate();
  const Index n = 2 * params.half_count;
  const double omega = params.omega;
  const bool quartic = params.quartic;

  HamiltonianSystem sys;
  sys.name = "fpu";
  sys.dim = n;
  sys.mass = MassMatrix::identity(n);
  sys.probe_index = 0;  // q_1
  sys.potential = [omega, quartic](const Vector& q) {
    return detail::linear_springs(q, omega, nullptr) +
           (quartic ? detail::quartic_springs(q, nullptr) : 0.0);
  };
  sys.potential_with_gradient = [omega, quartic](const Vector& q, Vector& g) {
    g.setZero(q.size());
    return detail::linear_springs(q, omega, &g) +
           (quartic ? detail::quartic_springs(q, &g) : 0.0);
  };

  PotentialSplit split;
  split.stiffness = fpu_stiffness(params);
  split.residual = [quartic](const Vector& q) {
    return quartic ? detail::quartic_springs(q, nullptr) : 0.0;
  };
  split.residual_with_gradient = [quartic](const Vector& q, Vector& g) {
    g.setZero(q.size());
    return quartic ? detail::quartic_springs(q, &g) : 0.0;
  };
  sys.split = std::move(split);
  return sys;
}

inline SystemPtr fpu_system(const FpuParams& params) {
  return std::make_shared<const HamiltonianSystem>(fpu_build(params));
}

/// q0 = alpha at the 4th coordinate (q_4), zeros elsewhere; p0 = 0.
inline std::pair<Vector, Vector> fpu_initial(const FpuParams& params, double alpha) {
  if (params.half_count < 2) {
    throw IndexOutOfRange("fpu_initial needs at least 4 coordinates (M >= 2)");
  }
  const Index n = 2 * params.half_count;
  Vector q = Vector::Zero(n);
  q[3] = alpha;
  return {q, Vector::Zero(n)};
}

}  // namespace ieq::models
