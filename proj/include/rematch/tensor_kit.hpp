#pragma once

// Dense linear-algebra helpers behind the skew-constrained least-squares
// solvers: Kronecker products, half-vectorization of antisymmetric matrices
// with its duplication matrix, a symmetric solver with ridge fallback and a
// 2x2 block inverse built on the Schur complement.
//
// vech ordering for an antisymmetric d x d matrix A is the strictly lower
// triangle read column by column:
//   d = 2: [A(1,0)]
//   d = 3: [A(1,0), A(2,0), A(2,1)]
// vec() is column-major, matching the usual Kronecker identities
// vec(X A Y) = (Y^T kron X) vec(A).

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "rematch/errors.hpp"

namespace rematch {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace detail {

// Relative pivot / reciprocal-condition level below which a factorization is
// treated as singular and the ridge fallback kicks in.
inline constexpr double kSingularTol = 1e-13;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline double ridge_for(const Matrix& a) {
  return 1e-10 * (1.0 + std::abs(a.trace()));
}

}  // namespace detail

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Column-major stacking of a matrix.
inline Vector vec(const Matrix& a) {
  return Eigen::Map<const Vector>(a.data(), a.size());
}

inline constexpr int skew_size(int d) { return d * (d - 1) / 2; }

inline Vector vech_skew(const Matrix& a) {
  if (a.rows() != a.cols())
    throw InvalidArgument("vech_skew: matrix must be square");
  if (!detail::all_finite(a))
    throw InvalidArgument("vech_skew: non-finite entries");
  if ((a + a.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw InvalidArgument("vech_skew: matrix is not antisymmetric");
  const int d = static_cast<int>(a.rows());
  Vector v(skew_size(d));
  int k = 0;
  for (int c = 0; c < d; ++c)
    for (int r = c + 1; r < d; ++r) v(k++) = a(r, c);
  return v;
}

inline Matrix unvech_skew(const Vector& v, int d) {
  if (d < 1 || v.size() != skew_size(d))
    throw InvalidArgument("unvech_skew: expected " +
                          std::to_string(skew_size(d)) + " entries for d=" +
                          std::to_string(d));
  Matrix a = Matrix::Zero(d, d);
  int k = 0;
  for (int c = 0; c < d; ++c)
    for (int r = c + 1; r < d; ++r) {
      a(r, c) = v(k);
      a(c, r) = -v(k);
      ++k;
    }
  return a;
}

/// D_d with D_d * vech_skew(A) = vec(A) for antisymmetric A; d^2 x d(d-1)/2.
inline Matrix duplication_skew(int d) {
  Matrix dup = Matrix::Zero(d * d, skew_size(d));
  int k = 0;
  for (int c = 0; c < d; ++c)
    for (int r = c + 1; r < d; ++r) {
      dup(c * d + r, k) = 1.0;   // entry (r, c)
      dup(r * d + c, k) = -1.0;  // entry (c, r)
      ++k;
    }
  return dup;
}

/// Moore-Penrose left inverse (D^T D)^{-1} D^T, so that L * D = I.
inline Matrix left_inverse_dup(const Matrix& dup) {
  const Matrix gram = dup.transpose() * dup;
  return gram.ldlt().solve(dup.transpose());
}

/// Rigid velocity generator u(x) = A x + b with A = unvech_skew(vech_a).
struct SkewParams {
  int dim = 3;
  Vector vech_a;
  Vector b;

  static SkewParams zero(int d) {
    if (d != 2 && d != 3) throw UnsupportedDimension(d);
    return {d, Vector::Zero(skew_size(d)), Vector::Zero(d)};
  }

  static SkewParams from_matrix(const Matrix& a, const Vector& b) {
    const int d = static_cast<int>(a.rows());
    if (d != 2 && d != 3) throw UnsupportedDimension(d);
    if (b.size() != d)
      throw InvalidArgument("SkewParams: translation has wrong length");
    return {d, vech_skew(a), b};
  }

  Matrix a() const { return unvech_skew(vech_a, dim); }

  Vector apply(const Vector& x) const { return a() * x + b; }

  /// [vech(A); b] as one parameter vector.
  Vector stacked() const {
    Vector p(vech_a.size() + b.size());
    p << vech_a, b;
    return p;
  }
};

inline void check_symmetric_finite(const Matrix& a, const char* who) {
  if (a.rows() != a.cols())
    throw InvalidArgument(std::string(who) + ": matrix must be square");
  if (!detail::all_finite(a))
    throw InvalidArgument(std::string(who) + ": non-finite entries");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw InvalidArgument(std::string(who) + ": matrix is not symmetric");
}

namespace detail {

inline bool ldlt_singular(const Eigen::LDLT<Matrix>& f) {
  if (f.info() != Eigen::Success) return true;
  const Vector d = f.vectorD().cwiseAbs();
  if (d.size() == 0) return false;
  const double dmax = d.maxCoeff();
  return dmax == 0.0 || d.minCoeff() <= kSingularTol * dmax;
}

}  // namespace detail

/// Solves (a + ridge*I) x = rhs for symmetric a. Uses pivoted LDL^T; when the
/// shifted matrix is still singular, returns the minimum-norm least-squares
/// solution from a complete orthogonal decomposition.
inline Vector solve_spd(const Matrix& a, const Vector& rhs, double ridge) {
  check_symmetric_finite(a, "solve_spd");
  if (rhs.size() != a.rows())
    throw InvalidArgument("solve_spd: right-hand side has wrong length");
  if (!rhs.allFinite())
    throw InvalidArgument("solve_spd: non-finite right-hand side");
  if (!(ridge >= 0.0)) throw InvalidArgument("solve_spd: ridge must be >= 0");
  Matrix shifted = a;
  shifted.diagonal().array() += ridge;
  Eigen::LDLT<Matrix> f(shifted);
  if (!detail::ldlt_singular(f)) return f.solve(rhs);
  return Eigen::CompleteOrthogonalDecomposition<Matrix>(shifted).solve(rhs);
}

struct RegularizedSolve {
  Vector x;
  double ridge = 0.0;  ///< 0 when the unshifted system was factorized
};

/// Normal-equation solve: plain factorization first, ridge
/// 1e-10 * (1 + |trace|) only when the factorization reports singularity.
inline RegularizedSolve solve_regularized(const Matrix& a, const Vector& rhs) {
  check_symmetric_finite(a, "solve_regularized");
  Eigen::LDLT<Matrix> f(a);
  if (!detail::ldlt_singular(f)) return {f.solve(rhs), 0.0};
  const double ridge = detail::ridge_for(a);
  return {solve_spd(a, rhs, ridge), ridge};
}

namespace detail {

// rcond() alone is not trusted: Eigen reports 1 when a pivot is exactly zero.
inline bool lu_usable(const Eigen::PartialPivLU<Matrix>& lu, double rcond) {
  if (!(rcond > kSingularTol) || !std::isfinite(rcond)) return false;
  const Vector piv = lu.matrixLU().diagonal().cwiseAbs();
  return piv.size() == 0 || piv.minCoeff() > kSingularTol * piv.maxCoeff();
}

inline Matrix invert_with_ridge(const Matrix& m, const char* what) {
  if (!m.allFinite())
    throw SingularSystem(std::string(what) + " has non-finite entries",
                         std::numeric_limits<double>::infinity());
  Eigen::PartialPivLU<Matrix> lu(m);
  if (lu_usable(lu, lu.rcond())) return lu.inverse();

  Matrix shifted = m;
  shifted.diagonal().array() += ridge_for(m);
  Eigen::PartialPivLU<Matrix> lu2(shifted);
  const double rcond2 = lu2.rcond();
  if (lu_usable(lu2, rcond2)) return lu2.inverse();
  throw SingularSystem(std::string(what) + " is singular after ridge fallback",
                       rcond2 > 0.0 ? 1.0 / rcond2
                                    : std::numeric_limits<double>::infinity());
}

}  // namespace detail

/// Inverse of [[q, r], [s, t]] through the Schur complement U = (q - r t^-1 s)^-1:
///   [[ U,            -U r t^-1                ],
///    [ -t^-1 s U,    t^-1 + t^-1 s U r t^-1   ]]
/// A singular t or Schur complement gets the ridge fallback first; if that is
/// not enough a SingularSystem carrying the condition estimate is thrown.
inline Matrix block_inverse(const Matrix& q, const Matrix& r, const Matrix& s,
                            const Matrix& t) {
  if (q.rows() != q.cols() || t.rows() != t.cols() || r.rows() != q.rows() ||
      r.cols() != t.cols() || s.rows() != t.rows() || s.cols() != q.cols())
    throw InvalidArgument("block_inverse: inconsistent block shapes");
  const Matrix t_inv = detail::invert_with_ridge(t, "block_inverse: T block");
  const Matrix tis = t_inv * s;
  const Matrix rti = r * t_inv;
  const Matrix u = detail::invert_with_ridge(q - r * tis,
                                             "block_inverse: Schur complement");
  const Eigen::Index m = q.rows();
  const Eigen::Index p = t.rows();
  Matrix out(m + p, m + p);
  out.topLeftCorner(m, m) = u;
  out.topRightCorner(m, p) = -u * rti;
  out.bottomLeftCorner(p, m) = -tis * u;
  out.bottomRightCorner(p, p) = t_inv + tis * u * rti;
  return out;
}

}  // namespace rematch
