#pragma once

// Velocity-field prior classes and their closed-form projections.
//
// Two residual forms are supported:
//   particle form  rho = sum_i |u(gamma_i) - dgamma_i/dt|^2
//   field form     rho = sum_i (s_i + <g_i, u(x_i)>)^2,  s = dpsi/dt, g = grad psi
//
// Prior classes:
//   Directional            u orthogonal to the columns of V
//   Rigid                  u(x) = A x + b, A antisymmetric
//   DivFree                u = sum_j beta_j b_j, b_j from build_curl_basis
//   PiecewiseRigid         k rigid parts blended by per-point weights
//   DirectionalPlusRigid   part 0 directional, parts 1..k-1 rigid
//
// For the two adaptive (weighted) classes the solvers minimise the Jensen
// upper bound sum_i sum_j w_ij |u_j(x_i) - target_i|^2, one independent
// weighted problem per part; `residual` reports that bound and
// `blended_residual` the exact rho of the blended field.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rematch/curl_basis.hpp"
#include "rematch/tensor_kit.hpp"

namespace rematch {

struct TrajectorySample {
  double t = 0.0;
  Matrix positions;   ///< n x d, rows gamma_i
  Matrix velocities;  ///< n x d, rows dgamma_i/dt

  Eigen::Index size() const { return positions.rows(); }
  int dim() const { return static_cast<int>(positions.cols()); }

  void validate() const {
    if (positions.rows() < 1)
      throw InvalidArgument("TrajectorySample: needs at least one particle");
    if (positions.rows() != velocities.rows() ||
        positions.cols() != velocities.cols())
      throw InvalidArgument("TrajectorySample: positions/velocities shape mismatch");
    if (!positions.allFinite() || !velocities.allFinite())
      throw InvalidArgument("TrajectorySample: non-finite entries");
  }
};

struct FieldSample {
  double t = 0.0;
  Matrix points;  ///< n x d
  Matrix grads;   ///< n x d, grad psi_t at the points
  Vector dpsidt;  ///< n, dpsi_t/dt at the points

  Eigen::Index size() const { return points.rows(); }
  int dim() const { return static_cast<int>(points.cols()); }

  void validate() const {
    if (points.rows() < 1)
      throw InvalidArgument("FieldSample: needs at least one point");
    if (points.rows() != grads.rows() || points.cols() != grads.cols() ||
        dpsidt.size() != points.rows())
      throw InvalidArgument("FieldSample: inconsistent shapes");
    if (!points.allFinite() || !grads.allFinite() || !dpsidt.allFinite())
      throw InvalidArgument("FieldSample: non-finite entries");
  }
};

enum class PriorTag { Directional, Rigid, DivFree, PiecewiseRigid, DirectionalPlusRigid };

inline std::string to_string(PriorTag tag) {
  switch (tag) {
    case PriorTag::Directional: return "directional";
    case PriorTag::Rigid: return "rigid";
    case PriorTag::DivFree: return "divfree";
    case PriorTag::PiecewiseRigid: return "piecewise-rigid";
    case PriorTag::DirectionalPlusRigid: return "directional-plus-rigid";
  }
  return "unknown";
}

inline PriorTag parse_prior_tag(const std::string& s) {
  for (PriorTag tag : {PriorTag::Directional, PriorTag::Rigid, PriorTag::DivFree,
                       PriorTag::PiecewiseRigid, PriorTag::DirectionalPlusRigid})
    if (to_string(tag) == s) return tag;
  throw InvalidArgument("unknown prior class '" + s + "'");
}

struct PriorClass {
  PriorTag tag = PriorTag::Rigid;
  Matrix directions;                   ///< d x l orthonormal V (directional family)
  std::vector<Frequency> frequencies;  ///< DivFree only
  int parts = 1;

  static PriorClass directional(Matrix v) {
    PriorClass p{PriorTag::Directional, std::move(v), {}, 1};
    p.validate();
    return p;
  }
  static PriorClass rigid() { return {PriorTag::Rigid, {}, {}, 1}; }
  static PriorClass divfree(std::vector<Frequency> freqs) {
    PriorClass p{PriorTag::DivFree, {}, std::move(freqs), 1};
    p.validate();
    return p;
  }
  static PriorClass piecewise_rigid(int k) {
    PriorClass p{PriorTag::PiecewiseRigid, {}, {}, k};
    p.validate();
    return p;
  }
  static PriorClass directional_plus_rigid(Matrix v, int k) {
    PriorClass p{PriorTag::DirectionalPlusRigid, std::move(v), {}, k};
    p.validate();
    return p;
  }

  bool adaptive() const {
    return tag == PriorTag::PiecewiseRigid || tag == PriorTag::DirectionalPlusRigid;
  }

  /// Number of weight columns the class consumes (1 for non-adaptive classes).
  int part_count() const { return adaptive() ? parts : 1; }

  void validate() const {
    if (tag == PriorTag::Directional || tag == PriorTag::DirectionalPlusRigid) {
      if (directions.cols() < 1 || directions.rows() < directions.cols())
        throw InvalidArgument("PriorClass: directions must be d x l with 1 <= l <= d");
      const Matrix gram = directions.transpose() * directions;
      const Matrix id = Matrix::Identity(gram.rows(), gram.cols());
      if ((gram - id).cwiseAbs().maxCoeff() > 1e-10)
        throw InvalidArgument("PriorClass: direction columns are not orthonormal");
    }
    if (tag == PriorTag::DivFree) {
      if (frequencies.empty())
        throw InvalidArgument("PriorClass: DivFree needs at least one frequency tuple");
      for (const auto& f : frequencies)
        for (int j : f)
          if (j < 1) throw InvalidArgument("PriorClass: frequencies must be positive");
    }
    if (adaptive() && parts < 2)
      throw InvalidArgument("PriorClass: adaptive classes need at least 2 parts");
    if (!adaptive() && parts != 1)
      throw InvalidArgument("PriorClass: non-adaptive classes have exactly 1 part");
  }
};

/// Per-point soft assignment to k parts; rows are probability vectors.
struct PartWeights {
  Matrix w;  ///< n x k

  static PartWeights uniform(Eigen::Index n, int k) {
    return {Matrix::Constant(n, k, 1.0 / k)};
  }
  static PartWeights ones(Eigen::Index n) { return {Matrix::Ones(n, 1)}; }

  Eigen::Index size() const { return w.rows(); }
  int parts() const { return static_cast<int>(w.cols()); }

  void validate(Eigen::Index n, int k) const {
    if (w.rows() != n || w.cols() != k)
      throw InvalidArgument("PartWeights: expected " + std::to_string(n) + " x " +
                            std::to_string(k) + " weights");
    if (!w.allFinite() || w.minCoeff() < 0.0 || w.maxCoeff() > 1.0)
      throw InvalidArgument("PartWeights: entries must lie in [0, 1]");
    const Vector sums = w.rowwise().sum();
    if ((sums.array() - 1.0).abs().maxCoeff() > 1e-8)
      throw InvalidArgument("PartWeights: rows must sum to 1");
  }
};

using VelocityEvaluator = std::function<Vector(const Vector&)>;

struct ProjectionSolution {
  PriorTag tag = PriorTag::Rigid;
  /// Rigid family: one entry per part. For DirectionalPlusRigid slot 0 is the
  /// directional part and holds zero parameters.
  std::vector<SkewParams> rigid_parts;
  Vector beta;  ///< DivFree coefficients
  /// Minimised objective (Jensen bound for adaptive classes).
  double residual = 0.0;
  /// Exact rho of the blended field at the sample; equals `residual` for
  /// non-adaptive classes.
  double blended_residual = 0.0;
  /// n x k unweighted squared residual of each part at each point.
  Matrix part_residuals;
  /// Non-zero when a singular system needed the ridge fallback.
  double ridge = 0.0;
  VelocityEvaluator evaluate;
};

inline double rho_particles(const VelocityEvaluator& u, const TrajectorySample& s) {
  double rho = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const Vector x = s.positions.row(i).transpose();
    rho += (u(x) - s.velocities.row(i).transpose()).squaredNorm();
  }
  return rho;
}

/// Drops the psi * div(u) term, so u must come from a divergence-free class.
inline double rho_field(const VelocityEvaluator& u, const FieldSample& s) {
  double rho = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const Vector x = s.points.row(i).transpose();
    const double e = s.dpsidt(i) + s.grads.row(i).dot(u(x));
    rho += e * e;
  }
  return rho;
}

namespace detail {

inline Eigen::Index nearest_row(const Matrix& pts, const Vector& x) {
  Eigen::Index best = 0;
  (pts.rowwise() - x.transpose()).rowwise().squaredNorm().minCoeff(&best);
  return best;
}

/// Evaluator returning a per-sample velocity, extended by nearest neighbour.
inline VelocityEvaluator nearest_sample_field(Matrix pts, Matrix vel) {
  return [pts = std::move(pts), vel = std::move(vel)](const Vector& x) -> Vector {
    return vel.row(nearest_row(pts, x)).transpose();
  };
}

inline Matrix orth_complement_projector(const Matrix& v) {
  return Matrix::Identity(v.rows(), v.rows()) - v * v.transpose();
}

inline void check_directions(const Matrix& v, int d) {
  if (v.rows() != d)
    throw InvalidArgument("directions have " + std::to_string(v.rows()) +
                          " rows for a d=" + std::to_string(d) + " sample");
}

// Reduced square system [[q, r], [s, t]] [vech A; b] = rhs.
struct SkewBlockSystem {
  Matrix q, r, s, t;
  Vector rhs;
};

inline SkewParams solve_skew_system(const SkewBlockSystem& sys, int d, int part) {
  Matrix inv;
  try {
    inv = block_inverse(sys.q, sys.r, sys.s, sys.t);
  } catch (const SingularSystem& e) {
    throw SingularSystem("rigid part " + std::to_string(part) + ": " + e.what(),
                         e.condition_estimate(), part);
  }
  const Vector p = inv * sys.rhs;
  if (!p.allFinite())
    throw SingularSystem("rigid part " + std::to_string(part) +
                             ": non-finite solution",
                         std::numeric_limits<double>::infinity(), part);
  const int m = skew_size(d);
  return {d, p.head(m), p.tail(d)};
}

// Particle form, weights normalised to sum 1 (the solution is invariant to the
// weight scale). With M = G^T W G, c = G^T W 1, C = Gdot^T W G:
//   Q' = I kron M + M kron I,  R = c kron I - I kron c,  S' = -(I kron c^T),
//   rhs = [vec(C - C^T); Gdot^T W 1]
// and the d^2 stationarity rows are mapped onto vech coordinates with L_d.
inline SkewBlockSystem rigid_particle_system(const TrajectorySample& s,
                                             const Vector& w) {
  const int d = s.dim();
  const Matrix pos_w = s.positions.array().colwise() * w.array();
  const Matrix m = s.positions.transpose() * pos_w;
  const Vector c = pos_w.colwise().sum().transpose();
  const Matrix cross = s.velocities.transpose() * pos_w;
  const Vector mean_vel = s.velocities.transpose() * w;

  const Matrix id = Matrix::Identity(d, d);
  const Matrix dup = duplication_skew(d);
  const Matrix left = left_inverse_dup(dup);
  const Matrix q_full = kron(id, m) + kron(m, id);
  const Matrix r_full = kron(c, id) - kron(id, c);
  const Matrix s_full = -kron(id, c.transpose());

  SkewBlockSystem sys;
  sys.q = left * q_full * dup;
  sys.r = left * r_full;
  sys.s = s_full * dup;
  sys.t = id;
  sys.rhs.resize(skew_size(d) + d);
  sys.rhs << vech_skew(cross - cross.transpose()), mean_vel;
  return sys;
}

// Field form: with y_i = x_i kron g_i,
//   Q' = sum w (x x^T kron g g^T + g g^T kron x x^T)
//   R  = sum w (x kron g g^T - g g^T kron x)
//   S' = sum w g y^T,   T = G^T W G
//   rhs = [sum w s vec(x g^T - g x^T); -G^T W s]
inline SkewBlockSystem rigid_field_system(const FieldSample& s, const Vector& w) {
  const int d = s.dim();
  const Matrix dup = duplication_skew(d);
  const Matrix left = left_inverse_dup(dup);
  Matrix q_full = Matrix::Zero(d * d, d * d);
  Matrix r_full = Matrix::Zero(d * d, d);
  Matrix s_full = Matrix::Zero(d, d * d);
  Matrix t = Matrix::Zero(d, d);
  Matrix rhs_a = Matrix::Zero(d, d);
  Vector rhs_b = Vector::Zero(d);
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double wi = w(i);
    if (wi == 0.0) continue;
    const Vector x = s.points.row(i).transpose();
    const Vector g = s.grads.row(i).transpose();
    const Matrix xx = x * x.transpose();
    const Matrix gg = g * g.transpose();
    q_full += wi * (kron(xx, gg) + kron(gg, xx));
    r_full += wi * (kron(x, gg) - kron(gg, x));
    s_full += wi * g * kron(x, g).transpose();
    t += wi * gg;
    rhs_a += wi * s.dpsidt(i) * (x * g.transpose() - g * x.transpose());
    rhs_b -= wi * s.dpsidt(i) * g;
  }
  SkewBlockSystem sys;
  sys.q = left * q_full * dup;
  sys.r = left * r_full;
  sys.s = s_full * dup;
  sys.t = t;
  sys.rhs.resize(skew_size(d) + d);
  sys.rhs << vech_skew(rhs_a), rhs_b;
  return sys;
}

inline double part_total(const Vector& w) { return w.sum(); }

// Weighted rigid fit for one part; zero-mass parts keep zero parameters.
inline SkewParams fit_rigid_part_particles(const TrajectorySample& s,
                                           const Vector& w, int part) {
  const double total = part_total(w);
  if (!(total > 0.0)) return SkewParams::zero(s.dim());
  return solve_skew_system(rigid_particle_system(s, w / total), s.dim(), part);
}

inline SkewParams fit_rigid_part_field(const FieldSample& s, const Vector& w,
                                       int part) {
  const double total = part_total(w);
  if (!(total > 0.0)) return SkewParams::zero(s.dim());
  return solve_skew_system(rigid_field_system(s, w / total), s.dim(), part);
}

inline void check_dim(int d) {
  if (d != 2 && d != 3) throw UnsupportedDimension(d);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Directional restriction
// ---------------------------------------------------------------------------

inline ProjectionSolution project_directional_particles(const Matrix& v,
                                                        const TrajectorySample& s) {
  s.validate();
  detail::check_directions(v, s.dim());
  ProjectionSolution sol;
  sol.tag = PriorTag::Directional;
  const Matrix normal = s.velocities * v;  // n x l, V^T dgamma/dt per row
  sol.part_residuals = normal.rowwise().squaredNorm();
  sol.residual = sol.part_residuals.sum();
  sol.blended_residual = sol.residual;
  const Matrix proj = detail::orth_complement_projector(v);
  sol.evaluate = detail::nearest_sample_field(s.positions, s.velocities * proj);
  return sol;
}

/// Uses the minimum-norm transport velocity v_i = -s_i g_i / |g_i|^2 projected
/// onto the allowed subspace, u_i = (I - V V^T) v_i, and reports rho at that u:
///   sum_i s_i^2 (1 - <g_i, V_* g_i> / |g_i|^2)^2.
/// Points with |g_i| <= 1e-12 contribute s_i^2.
inline ProjectionSolution project_directional_field(const Matrix& v,
                                                    const FieldSample& s) {
  s.validate();
  detail::check_directions(v, s.dim());
  const Matrix proj = detail::orth_complement_projector(v);
  ProjectionSolution sol;
  sol.tag = PriorTag::Directional;
  sol.part_residuals.resize(s.size(), 1);
  Matrix vel = Matrix::Zero(s.size(), s.dim());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const Vector g = s.grads.row(i).transpose();
    const double g2 = g.squaredNorm();
    const double si = s.dpsidt(i);
    if (std::sqrt(g2) <= 1e-12) {
      sol.part_residuals(i, 0) = si * si;
      continue;
    }
    const double ratio = g.dot(proj * g) / g2;
    sol.part_residuals(i, 0) = si * si * (1.0 - ratio) * (1.0 - ratio);
    vel.row(i) = (proj * (-si / g2 * g)).transpose();
  }
  sol.residual = sol.part_residuals.sum();
  sol.blended_residual = sol.residual;
  sol.evaluate = detail::nearest_sample_field(s.points, std::move(vel));
  return sol;
}

// ---------------------------------------------------------------------------
// Rigid and piecewise rigid
// ---------------------------------------------------------------------------

namespace detail {

inline Matrix rigid_velocities(const SkewParams& p, const Matrix& pts) {
  return (pts * p.a().transpose()).rowwise() + p.b.transpose();
}

// Blended evaluator: sum_j w_j(nearest sample) u_j(x); rigid parts only, or a
// directional slot 0 whose velocity is looked up per sample.
inline VelocityEvaluator blended_field(std::vector<SkewParams> parts, Matrix pts,
                                       Matrix w, std::optional<Matrix> slot0) {
  return [parts = std::move(parts), pts = std::move(pts), w = std::move(w),
          slot0 = std::move(slot0)](const Vector& x) -> Vector {
    const Eigen::Index i = nearest_row(pts, x);
    Vector u = Vector::Zero(x.size());
    for (std::size_t j = 0; j < parts.size(); ++j) {
      const double wij = w(i, static_cast<Eigen::Index>(j));
      if (j == 0 && slot0) {
        u += wij * slot0->row(i).transpose();
      } else {
        u += wij * parts[j].apply(x);
      }
    }
    return u;
  };
}

inline VelocityEvaluator single_rigid_field(const SkewParams& p) {
  return [a = p.a(), b = p.b](const Vector& x) -> Vector { return a * x + b; };
}

}  // namespace detail

inline ProjectionSolution project_rigid_particles(const TrajectorySample& s,
                                                  const PartWeights& w) {
  s.validate();
  detail::check_dim(s.dim());
  if (w.parts() < 1) throw InvalidArgument("project_rigid_particles: k must be >= 1");
  w.validate(s.size(), w.parts());
  const int k = w.parts();
  ProjectionSolution sol;
  sol.tag = k == 1 ? PriorTag::Rigid : PriorTag::PiecewiseRigid;
  sol.part_residuals.resize(s.size(), k);
  Matrix blended = Matrix::Zero(s.size(), s.dim());
  for (int j = 0; j < k; ++j) {
    sol.rigid_parts.push_back(detail::fit_rigid_part_particles(s, w.w.col(j), j));
    const Matrix uj = detail::rigid_velocities(sol.rigid_parts.back(), s.positions);
    sol.part_residuals.col(j) = (uj - s.velocities).rowwise().squaredNorm();
    blended += (uj.array().colwise() * w.w.col(j).array()).matrix();
  }
  sol.residual = (sol.part_residuals.array() * w.w.array()).sum();
  sol.blended_residual = (blended - s.velocities).squaredNorm();
  sol.evaluate = k == 1 ? detail::single_rigid_field(sol.rigid_parts[0])
                        : detail::blended_field(sol.rigid_parts, s.positions, w.w,
                                                std::nullopt);
  return sol;
}

inline ProjectionSolution project_rigid_field(const FieldSample& s,
                                              const PartWeights& w) {
  s.validate();
  detail::check_dim(s.dim());
  if (w.parts() < 1) throw InvalidArgument("project_rigid_field: k must be >= 1");
  w.validate(s.size(), w.parts());
  const int k = w.parts();
  ProjectionSolution sol;
  sol.tag = k == 1 ? PriorTag::Rigid : PriorTag::PiecewiseRigid;
  sol.part_residuals.resize(s.size(), k);
  Vector blended = s.dpsidt;
  for (int j = 0; j < k; ++j) {
    sol.rigid_parts.push_back(detail::fit_rigid_part_field(s, w.w.col(j), j));
    const Matrix uj = detail::rigid_velocities(sol.rigid_parts.back(), s.points);
    const Vector e = s.dpsidt + (s.grads.array() * uj.array()).rowwise().sum().matrix();
    sol.part_residuals.col(j) = e.array().square().matrix();
    blended += (w.w.col(j).array() * (e - s.dpsidt).array()).matrix();
  }
  sol.residual = (sol.part_residuals.array() * w.w.array()).sum();
  sol.blended_residual = blended.squaredNorm();
  sol.evaluate = k == 1 ? detail::single_rigid_field(sol.rigid_parts[0])
                        : detail::blended_field(sol.rigid_parts, s.points, w.w,
                                                std::nullopt);
  return sol;
}

// ---------------------------------------------------------------------------
// Divergence-free combinations
// ---------------------------------------------------------------------------

namespace detail {

inline VelocityEvaluator combo_field(CurlBasis basis, Vector beta) {
  return [basis = std::move(basis), beta = std::move(beta)](const Vector& x) {
    return combo_value(basis, beta, x);
  };
}

}  // namespace detail

inline ProjectionSolution project_divfree_particles(const CurlBasis& basis,
                                                    const TrajectorySample& s) {
  s.validate();
  if (basis.empty()) throw InvalidArgument("project_divfree_particles: empty basis");
  if (basis.front().dim() != s.dim())
    throw InvalidArgument("project_divfree_particles: basis/sample dimension mismatch");
  const auto k = static_cast<Eigen::Index>(basis.size());
  Matrix gram = Matrix::Zero(k, k);
  Vector rhs = Vector::Zero(k);
  std::vector<Matrix> columns;
  columns.reserve(static_cast<std::size_t>(s.size()));
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    columns.push_back(basis_matrix(basis, s.positions.row(i).transpose()));
    gram += columns.back().transpose() * columns.back();
    rhs += columns.back().transpose() * s.velocities.row(i).transpose();
  }
  const RegularizedSolve solve = solve_regularized(gram, rhs);
  ProjectionSolution sol;
  sol.tag = PriorTag::DivFree;
  sol.beta = solve.x;
  sol.ridge = solve.ridge;
  sol.part_residuals.resize(s.size(), 1);
  for (Eigen::Index i = 0; i < s.size(); ++i)
    sol.part_residuals(i, 0) =
        (columns[static_cast<std::size_t>(i)] * sol.beta -
         s.velocities.row(i).transpose()).squaredNorm();
  sol.residual = sol.part_residuals.sum();
  sol.blended_residual = sol.residual;
  sol.evaluate = detail::combo_field(basis, sol.beta);
  return sol;
}

inline ProjectionSolution project_divfree_field(const CurlBasis& basis,
                                                const FieldSample& s) {
  s.validate();
  if (basis.empty()) throw InvalidArgument("project_divfree_field: empty basis");
  if (basis.front().dim() != s.dim())
    throw InvalidArgument("project_divfree_field: basis/sample dimension mismatch");
  const auto k = static_cast<Eigen::Index>(basis.size());
  Matrix rows(s.size(), k);  // a_ij = <g_i, b_j(x_i)>
  for (Eigen::Index i = 0; i < s.size(); ++i)
    rows.row(i) = s.grads.row(i) * basis_matrix(basis, s.points.row(i).transpose());
  const RegularizedSolve solve =
      solve_regularized(rows.transpose() * rows, -(rows.transpose() * s.dpsidt));
  ProjectionSolution sol;
  sol.tag = PriorTag::DivFree;
  sol.beta = solve.x;
  sol.ridge = solve.ridge;
  sol.part_residuals = (s.dpsidt + rows * sol.beta).array().square().matrix();
  sol.residual = sol.part_residuals.sum();
  sol.blended_residual = sol.residual;
  sol.evaluate = detail::combo_field(basis, sol.beta);
  return sol;
}

// ---------------------------------------------------------------------------
// Directional + rigid adaptive combination
// ---------------------------------------------------------------------------

inline ProjectionSolution project_combined_particles(const PriorClass& prior,
                                                     const TrajectorySample& s,
                                                     const PartWeights& w) {
  if (prior.tag != PriorTag::DirectionalPlusRigid)
    throw InvalidArgument("project_combined_particles: prior must be directional-plus-rigid");
  s.validate();
  detail::check_dim(s.dim());
  detail::check_directions(prior.directions, s.dim());
  w.validate(s.size(), prior.parts);
  const int k = prior.parts;
  ProjectionSolution sol;
  sol.tag = PriorTag::DirectionalPlusRigid;
  sol.part_residuals.resize(s.size(), k);
  sol.part_residuals.col(0) = (s.velocities * prior.directions).rowwise().squaredNorm();
  const Matrix slot0 =
      s.velocities * detail::orth_complement_projector(prior.directions);
  Matrix blended = (slot0.array().colwise() * w.w.col(0).array()).matrix();
  sol.rigid_parts.push_back(SkewParams::zero(s.dim()));
  for (int j = 1; j < k; ++j) {
    sol.rigid_parts.push_back(detail::fit_rigid_part_particles(s, w.w.col(j), j));
    const Matrix uj = detail::rigid_velocities(sol.rigid_parts.back(), s.positions);
    sol.part_residuals.col(j) = (uj - s.velocities).rowwise().squaredNorm();
    blended += (uj.array().colwise() * w.w.col(j).array()).matrix();
  }
  sol.residual = (sol.part_residuals.array() * w.w.array()).sum();
  sol.blended_residual = (blended - s.velocities).squaredNorm();
  sol.evaluate = detail::blended_field(sol.rigid_parts, s.positions, w.w, slot0);
  return sol;
}

/// Field-form counterpart: slot 0 uses the directional field closed form.
inline ProjectionSolution project_combined_field(const PriorClass& prior,
                                                 const FieldSample& s,
                                                 const PartWeights& w) {
  if (prior.tag != PriorTag::DirectionalPlusRigid)
    throw InvalidArgument("project_combined_field: prior must be directional-plus-rigid");
  s.validate();
  detail::check_dim(s.dim());
  detail::check_directions(prior.directions, s.dim());
  w.validate(s.size(), prior.parts);
  const int k = prior.parts;
  const ProjectionSolution dir = project_directional_field(prior.directions, s);
  ProjectionSolution sol;
  sol.tag = PriorTag::DirectionalPlusRigid;
  sol.part_residuals.resize(s.size(), k);
  sol.part_residuals.col(0) = dir.part_residuals.col(0);
  Matrix slot0(s.size(), s.dim());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    slot0.row(i) = dir.evaluate(s.points.row(i).transpose()).transpose();
  Vector blended = s.dpsidt;
  blended += (w.w.col(0).array() *
              (s.grads.array() * slot0.array()).rowwise().sum()).matrix();
  sol.rigid_parts.push_back(SkewParams::zero(s.dim()));
  for (int j = 1; j < k; ++j) {
    sol.rigid_parts.push_back(detail::fit_rigid_part_field(s, w.w.col(j), j));
    const Matrix uj = detail::rigid_velocities(sol.rigid_parts.back(), s.points);
    const Vector flux = (s.grads.array() * uj.array()).rowwise().sum().matrix();
    sol.part_residuals.col(j) = (s.dpsidt + flux).array().square().matrix();
    blended += (w.w.col(j).array() * flux.array()).matrix();
  }
  sol.residual = (sol.part_residuals.array() * w.w.array()).sum();
  sol.blended_residual = blended.squaredNorm();
  sol.evaluate = detail::blended_field(sol.rigid_parts, s.points, w.w, slot0);
  return sol;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

namespace detail {

inline void require_weights(const PriorClass& prior,
                            const std::optional<PartWeights>& w) {
  if (prior.adaptive() && !w)
    throw InvalidArgument("project: adaptive prior '" + to_string(prior.tag) +
                          "' requires part weights");
}

}  // namespace detail

inline ProjectionSolution project(const PriorClass& prior, const TrajectorySample& s,
                                  const std::optional<PartWeights>& w = std::nullopt) {
  prior.validate();
  detail::require_weights(prior, w);
  switch (prior.tag) {
    case PriorTag::Directional:
      return project_directional_particles(prior.directions, s);
    case PriorTag::Rigid:
      return project_rigid_particles(s, PartWeights::ones(s.size()));
    case PriorTag::DivFree:
      return project_divfree_particles(build_curl_basis(prior.frequencies, s.dim()), s);
    case PriorTag::PiecewiseRigid:
      w->validate(s.size(), prior.parts);
      return project_rigid_particles(s, *w);
    case PriorTag::DirectionalPlusRigid:
      return project_combined_particles(prior, s, *w);
  }
  throw InvalidArgument("project: unknown prior tag");
}

inline ProjectionSolution project(const PriorClass& prior, const FieldSample& s,
                                  const std::optional<PartWeights>& w = std::nullopt) {
  prior.validate();
  detail::require_weights(prior, w);
  switch (prior.tag) {
    case PriorTag::Directional:
      return project_directional_field(prior.directions, s);
    case PriorTag::Rigid:
      return project_rigid_field(s, PartWeights::ones(s.size()));
    case PriorTag::DivFree:
      return project_divfree_field(build_curl_basis(prior.frequencies, s.dim()), s);
    case PriorTag::PiecewiseRigid:
      w->validate(s.size(), prior.parts);
      return project_rigid_field(s, *w);
    case PriorTag::DirectionalPlusRigid:
      return project_combined_field(prior, s, *w);
  }
  throw InvalidArgument("project: unknown prior tag");
}

}  // namespace rematch
