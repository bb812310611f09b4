#pragma once

// Brute-force references for the closed-form solvers: every prior class is
// written as an explicit weighted design-matrix least-squares problem and
// solved by a complete orthogonal decomposition. Also central finite
// differences. Slow by design; used by tests only.
//
// Column layout of the unknowns:
//   Rigid parts        [vech(A); b], matching SkewParams::stacked()
//   DivFree            beta
//   Directional        per-point coefficients c_i of u_i = N c_i, N an
//                      orthonormal basis of the complement of span(V)

#include <functional>
#include <optional>
#include <vector>

#include "rematch/curl_basis.hpp"
#include "rematch/velocity_priors.hpp"

namespace rematch {

struct DesignSystem {
  Matrix design;   ///< N x p
  Vector target;   ///< N
  Vector weights;  ///< N, >= 0

  void validate() const {
    if (target.size() != design.rows() || weights.size() != design.rows())
      throw InvalidArgument("DesignSystem: inconsistent shapes");
    if (weights.size() > 0 && weights.minCoeff() < 0.0)
      throw InvalidArgument("DesignSystem: weights must be nonnegative");
  }
};

struct OracleSolution {
  Vector params;
  double residual = 0.0;  ///< sum_r w_r (design_r . params - target_r)^2
};

/// Minimises |sqrt(W)(design p - target)|^2; minimum-norm p when rank-deficient.
inline OracleSolution oracle_solve(const DesignSystem& sys) {
  sys.validate();
  const Vector sw = sys.weights.cwiseSqrt();
  const Matrix a = sw.asDiagonal() * sys.design;
  const Vector y = sw.asDiagonal() * sys.target;
  OracleSolution out;
  if (a.cols() == 0) {
    out.params = Vector::Zero(0);
  } else {
    out.params = Eigen::CompleteOrthogonalDecomposition<Matrix>(a).solve(y);
  }
  out.residual = (a * out.params - y).squaredNorm();
  return out;
}

namespace detail {

/// d x (d - l) orthonormal basis of the orthogonal complement of span(V).
inline Matrix complement_basis(const Matrix& v) {
  const int d = static_cast<int>(v.rows());
  Eigen::JacobiSVD<Matrix> svd(v, Eigen::ComputeFullU);
  return svd.matrixU().rightCols(d - v.cols());
}

// d x m block whose column k is E_k x, E_k = unvech_skew(e_k).
inline Matrix skew_action(const Vector& x) {
  const int d = static_cast<int>(x.size());
  const int m = skew_size(d);
  Matrix out(d, m);
  for (int k = 0; k < m; ++k) out.col(k) = unvech_skew(Vector::Unit(m, k), d) * x;
  return out;
}

inline Matrix rigid_rows(const Vector& x) {
  const int d = static_cast<int>(x.size());
  Matrix out(d, skew_size(d) + d);
  out << skew_action(x), Matrix::Identity(d, d);
  return out;
}

inline Vector part_column(const std::optional<PartWeights>& w, int part, Eigen::Index n) {
  if (!w) return Vector::Ones(n);
  if (part < 0 || part >= w->parts())
    throw InvalidArgument("assemble_design: part index out of range");
  return w->w.col(part);
}

inline bool is_directional_part(const PriorClass& prior, int part) {
  return prior.tag == PriorTag::Directional ||
         (prior.tag == PriorTag::DirectionalPlusRigid && part == 0);
}

inline void check_part(const PriorClass& prior, int part,
                       const std::optional<PartWeights>& w) {
  if (prior.adaptive()) {
    if (!w) throw InvalidArgument("assemble_design: adaptive prior requires weights");
    if (part < 0 || part >= prior.parts)
      throw InvalidArgument("assemble_design: adaptive prior requires a valid part index");
  } else if (part != 0) {
    throw InvalidArgument("assemble_design: non-adaptive prior has only part 0");
  }
}

/// Minimum-norm transport velocity -s g / |g|^2 (zero where |g| <= 1e-12).
inline Vector transport_velocity(const Vector& g, double s) {
  const double g2 = g.squaredNorm();
  if (std::sqrt(g2) <= 1e-12) return Vector::Zero(g.size());
  return -s / g2 * g;
}

}  // namespace detail

/// Particle form: rows are the d velocity components of each particle.
inline DesignSystem assemble_design(const PriorClass& prior, const TrajectorySample& s,
                                    int part = 0,
                                    const std::optional<PartWeights>& w = std::nullopt) {
  prior.validate();
  s.validate();
  detail::check_part(prior, part, w);
  const int d = s.dim();
  const Eigen::Index n = s.size();
  const Vector wp = detail::part_column(w, part, n);
  DesignSystem sys;
  sys.target = vec(s.velocities.transpose());  // particle-major
  sys.weights.resize(n * d);
  for (Eigen::Index i = 0; i < n; ++i) sys.weights.segment(i * d, d).setConstant(wp(i));

  if (detail::is_directional_part(prior, part)) {
    detail::check_directions(prior.directions, d);
    const Matrix nb = detail::complement_basis(prior.directions);
    const Eigen::Index c = nb.cols();
    sys.design = Matrix::Zero(n * d, n * c);
    for (Eigen::Index i = 0; i < n; ++i) sys.design.block(i * d, i * c, d, c) = nb;
    return sys;
  }
  if (prior.tag == PriorTag::DivFree) {
    const CurlBasis basis = build_curl_basis(prior.frequencies, d);
    sys.design.resize(n * d, static_cast<Eigen::Index>(basis.size()));
    for (Eigen::Index i = 0; i < n; ++i)
      sys.design.middleRows(i * d, d) = basis_matrix(basis, s.positions.row(i).transpose());
    return sys;
  }
  detail::check_dim(d);
  sys.design.resize(n * d, skew_size(d) + d);
  for (Eigen::Index i = 0; i < n; ++i)
    sys.design.middleRows(i * d, d) = detail::rigid_rows(s.positions.row(i).transpose());
  return sys;
}

/// Field form: one row per point, design . p = <g, u(x)> and target -s.
/// For the directional part the rows are instead the d components of
/// u_i - v_i with v_i the minimum-norm transport velocity.
inline DesignSystem assemble_design(const PriorClass& prior, const FieldSample& s,
                                    int part = 0,
                                    const std::optional<PartWeights>& w = std::nullopt) {
  prior.validate();
  s.validate();
  detail::check_part(prior, part, w);
  const int d = s.dim();
  const Eigen::Index n = s.size();
  const Vector wp = detail::part_column(w, part, n);
  DesignSystem sys;

  if (detail::is_directional_part(prior, part)) {
    detail::check_directions(prior.directions, d);
    const Matrix nb = detail::complement_basis(prior.directions);
    const Eigen::Index c = nb.cols();
    sys.design = Matrix::Zero(n * d, n * c);
    sys.target.resize(n * d);
    sys.weights.resize(n * d);
    for (Eigen::Index i = 0; i < n; ++i) {
      sys.design.block(i * d, i * c, d, c) = nb;
      sys.target.segment(i * d, d) =
          detail::transport_velocity(s.grads.row(i).transpose(), s.dpsidt(i));
      sys.weights.segment(i * d, d).setConstant(wp(i));
    }
    return sys;
  }

  sys.target = -s.dpsidt;
  sys.weights = wp;
  if (prior.tag == PriorTag::DivFree) {
    const CurlBasis basis = build_curl_basis(prior.frequencies, d);
    sys.design.resize(n, static_cast<Eigen::Index>(basis.size()));
    for (Eigen::Index i = 0; i < n; ++i)
      sys.design.row(i) = s.grads.row(i) * basis_matrix(basis, s.points.row(i).transpose());
    return sys;
  }
  detail::check_dim(d);
  sys.design.resize(n, skew_size(d) + d);
  for (Eigen::Index i = 0; i < n; ++i)
    sys.design.row(i) = s.grads.row(i) * detail::rigid_rows(s.points.row(i).transpose());
  return sys;
}

namespace detail {

// Weighted field residual sum_i w_i (s_i + <g_i, u_i>)^2 of the per-point
// velocities from a directional oracle solve.
inline double directional_field_objective(const PriorClass& prior, const FieldSample& s,
                                          const Vector& coeffs, const Vector& w) {
  const Matrix nb = complement_basis(prior.directions);
  const Eigen::Index c = nb.cols();
  double rho = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const Vector u = nb * coeffs.segment(i * c, c);
    const double e = s.dpsidt(i) + s.grads.row(i).dot(u);
    rho += w(i) * e * e;
  }
  return rho;
}

}  // namespace detail

/// Oracle counterpart of ProjectionSolution::residual: the optimal objective
/// of each part's design problem, summed over parts (the weighted bound for
/// adaptive classes).
inline double oracle_objective(const PriorClass& prior, const TrajectorySample& s,
                               const std::optional<PartWeights>& w = std::nullopt) {
  double total = 0.0;
  for (int j = 0; j < prior.part_count(); ++j)
    total += oracle_solve(assemble_design(prior, s, j, w)).residual;
  return total;
}

inline double oracle_objective(const PriorClass& prior, const FieldSample& s,
                               const std::optional<PartWeights>& w = std::nullopt) {
  double total = 0.0;
  for (int j = 0; j < prior.part_count(); ++j) {
    const DesignSystem sys = assemble_design(prior, s, j, w);
    const OracleSolution sol = oracle_solve(sys);
    if (detail::is_directional_part(prior, j)) {
      total += detail::directional_field_objective(prior, s, sol.params,
                                                   detail::part_column(w, j, s.size()));
    } else {
      total += sol.residual;
    }
  }
  return total;
}

/// Global minimum over all k rigid parts jointly of the exact blended residual
/// sum_i |sum_j w_ij u_j(x_i) - dgamma_i/dt|^2. With the weights fixed this is
/// linear least squares in the stacked part parameters.
inline OracleSolution oracle_blended_minimum(const TrajectorySample& s, const PartWeights& w) {
  s.validate();
  detail::check_dim(s.dim());
  const int d = s.dim();
  const int k = w.parts();
  const int p = skew_size(d) + d;
  DesignSystem sys;
  sys.design.resize(s.size() * d, k * p);
  sys.target = vec(s.velocities.transpose());
  sys.weights = Vector::Ones(s.size() * d);
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const Matrix rows = detail::rigid_rows(s.positions.row(i).transpose());
    for (int j = 0; j < k; ++j) sys.design.block(i * d, j * p, d, p) = w.w(i, j) * rows;
  }
  return oracle_solve(sys);
}

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h.
inline Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& p,
                               double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_grad: h must be positive");
  Vector g(p.size());
  Vector q = p;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    q(i) = p(i) + h;
    const double fp = f(q);
    q(i) = p(i) - h;
    const double fm = f(q);
    q(i) = p(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace rematch
