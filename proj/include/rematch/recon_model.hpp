#pragma once

// Simulation-free dynamic reconstruction model.
//
// Particle i follows
//   gamma_i(t) = base_i + sum_r theta_{i,r} B_r(t),     B_r(0) = 0
// and carries part-weight logits
//   l_ij(t) = sum_q L_{i,j,q} C_q(t),   C_0 = 1, C_q = B_q for q >= 1
// turned into weights w_ij(t) by a row-wise softmax. Positions and
// velocities are linear in theta, so each evaluation is a single step.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "rematch/flow_lab.hpp"
#include "rematch/velocity_priors.hpp"

namespace rematch {

enum class TimeBasisKind { Polynomial, Fourier };

inline std::string to_string(TimeBasisKind k) {
  return k == TimeBasisKind::Polynomial ? "polynomial" : "fourier";
}

inline TimeBasisKind parse_time_basis_kind(const std::string& s) {
  if (s == "polynomial") return TimeBasisKind::Polynomial;
  if (s == "fourier") return TimeBasisKind::Fourier;
  throw InvalidArgument("unknown time basis '" + s + "'");
}

/// B_1..B_m with B_r(0) = 0.
///   polynomial: B_r(t) = P_r(2t - 1) - P_r(-1), P_r Legendre
///   fourier:    B_{2q-1}(t) = sin(q pi t), B_{2q}(t) = 1 - cos(q pi t)
struct TimeBasis {
  TimeBasisKind kind = TimeBasisKind::Polynomial;
  int order = 5;

  /// Values and time derivatives of B_1..B_count at t.
  void evaluate(double t, int count, Vector& values, Vector& derivs) const {
    values.resize(count);
    derivs.resize(count);
    if (kind == TimeBasisKind::Polynomial) {
      const double x = 2.0 * t - 1.0;
      double p_prev = 1.0, p = x;          // P_0, P_1
      double dp_prev = 0.0, dp = 1.0;      // P_0', P_1'
      for (int r = 1; r <= count; ++r) {
        values(r - 1) = p - ((r % 2 == 0) ? 1.0 : -1.0);
        derivs(r - 1) = 2.0 * dp;
        const double p_next = ((2.0 * r + 1.0) * x * p - r * p_prev) / (r + 1.0);
        const double dp_next = dp_prev + (2.0 * r + 1.0) * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
      }
      return;
    }
    for (int r = 1; r <= count; ++r) {
      const double w = std::numbers::pi * ((r + 1) / 2);
      if (r % 2 == 1) {
        values(r - 1) = std::sin(w * t);
        derivs(r - 1) = w * std::cos(w * t);
      } else {
        values(r - 1) = 1.0 - std::cos(w * t);
        derivs(r - 1) = w * std::sin(w * t);
      }
    }
  }

  Vector values(double t, int count) const {
    Vector v, d;
    evaluate(t, count, v, d);
    return v;
  }
};

struct ReconModel {
  TimeBasis basis;
  int weight_order = 2;  ///< weight logits use C_0 = 1 plus B_1..B_weight_order
  int k = 1;
  Matrix base;    ///< n x d
  Matrix theta;   ///< n x (order * d), entry (i, r*d + c)
  Matrix logits;  ///< n x (k * (weight_order + 1)), entry (i, j*(weight_order+1) + q)

  static ReconModel zeros(Eigen::Index n, int d, int parts, TimeBasis basis = {},
                          int weight_order = 2) {
    if (n < 1 || d < 1 || parts < 1 || basis.order < 1 || weight_order < 0)
      throw InvalidArgument("ReconModel: invalid dimensions");
    ReconModel m;
    m.basis = basis;
    m.weight_order = weight_order;
    m.k = parts;
    m.base = Matrix::Zero(n, d);
    m.theta = Matrix::Zero(n, basis.order * d);
    m.logits = Matrix::Zero(n, parts * (weight_order + 1));
    return m;
  }

  Eigen::Index size() const { return base.rows(); }
  int dim() const { return static_cast<int>(base.cols()); }
  int order() const { return basis.order; }
  int logit_width() const { return weight_order + 1; }

  void validate() const {
    if (k < 1) throw InvalidArgument("ReconModel: k must be >= 1");
    if (theta.rows() != size() || theta.cols() != order() * dim() ||
        logits.rows() != size() || logits.cols() != k * logit_width())
      throw InvalidArgument("ReconModel: inconsistent parameter shapes");
    if (!base.allFinite() || !theta.allFinite() || !logits.allFinite())
      throw InvalidArgument("ReconModel: non-finite parameters");
  }

  /// C_0..C_weight_order at t.
  Vector weight_features(double t) const {
    Vector f(logit_width());
    f(0) = 1.0;
    if (weight_order > 0) f.tail(weight_order) = basis.values(t, weight_order);
    return f;
  }

  Eigen::Index parameter_count() const {
    return base.size() + theta.size() + logits.size();
  }

  /// base, theta, logits flattened in that order (each column-major).
  Vector flat() const {
    Vector p(parameter_count());
    p << vec(base), vec(theta), vec(logits);
    return p;
  }

  void set_flat(const Vector& p) {
    if (p.size() != parameter_count())
      throw InvalidArgument("ReconModel::set_flat: wrong parameter count");
    Eigen::Index o = 0;
    for (Matrix* m : {&base, &theta, &logits}) {
      *m = Eigen::Map<const Matrix>(p.data() + o, m->rows(), m->cols());
      o += m->size();
    }
  }
};

struct Observation {
  double time = 0.0;
  Matrix positions;  ///< n x d
};

inline TrajectorySample eval_trajectories(const ReconModel& model, double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw InvalidArgument("eval_trajectories: t must lie in [0, 1]");
  Vector b, db;
  model.basis.evaluate(t, model.order(), b, db);
  const int d = model.dim();
  TrajectorySample s;
  s.t = t;
  s.positions = model.base;
  s.velocities = Matrix::Zero(model.size(), d);
  for (int r = 0; r < model.order(); ++r) {
    const auto coeff = model.theta.middleCols(r * d, d);
    s.positions += b(r) * coeff;
    s.velocities += db(r) * coeff;
  }
  return s;
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix w(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    w.row(i) = (logits.row(i).array() - mx).exp().matrix();
    w.row(i) /= w.row(i).sum();
  }
  return w;
}

/// n x k matrix of per-particle logits at t.
inline Matrix weight_logits_at(const ReconModel& model, double t) {
  const Vector f = model.weight_features(t);
  Matrix out(model.size(), model.k);
  for (int j = 0; j < model.k; ++j)
    out.col(j) = model.logits.middleCols(j * model.logit_width(), model.logit_width()) * f;
  return out;
}

inline PartWeights eval_weights(const ReconModel& model, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("eval_weights: t must lie in [0, 1]");
  return {softmax_rows(weight_logits_at(model, t))};
}

// ---------------------------------------------------------------------------
// Analytic advected fields
// ---------------------------------------------------------------------------

/// Anisotropic Gaussian psi_0(x) = exp(-1/2 sum_l (x_l - m_l)^2 / var_l).
/// Distinct variances keep rigid motions identifiable from grad psi.
struct GaussianBump {
  Vector center;
  Vector variances;

  static GaussianBump standard(int d) {
    if (d != 2 && d != 3) throw UnsupportedDimension(d);
    GaussianBump g;
    g.center = Vector::Constant(d, 0.5);
    g.variances.resize(d);
    if (d == 2) g.variances << 0.03, 0.07;
    else g.variances << 0.03, 0.05, 0.08;
    return g;
  }

  double value(const Vector& y) const {
    return std::exp(-0.5 * ((y - center).array().square() / variances.array()).sum());
  }

  Vector gradient(const Vector& y) const {
    return -value(y) * ((y - center).array() / variances.array()).matrix();
  }
};

/// psi_t(x) = psi_0(phi_t^{-1}(x)) for a stationary Constant or Rigid
/// generator, with closed-form pullback:
///   Constant c:  y = x - t c
///   Rigid A, b:  y = e^{-tA}(x - c_t),  [e^{tA} c_t; 0 1] = exp(t [A b; 0 0])
/// Then grad psi_t(x) = J^T grad psi_0(y) and dpsi/dt = -<grad psi_0(y), v(y)>.
class AdvectedBump {
 public:
  AdvectedBump(GaussianBump bump, const VelocityFieldSpec& generator)
      : bump_(std::move(bump)), d_(generator.dim()) {
    if (const auto* c = std::get_if<ConstantField>(&generator.kind())) {
      a_ = Matrix::Zero(d_, d_);
      b_ = c->c;
    } else if (const auto* r = std::get_if<RigidField>(&generator.kind())) {
      a_ = r->params.a();
      b_ = r->params.b;
    } else {
      throw InvalidArgument("analytic_field: generator kind '" + generator.kind_name() +
                            "' has no closed-form flow");
    }
    if (bump_.center.size() != d_)
      throw InvalidArgument("analytic_field: bump dimension mismatch");
  }

  /// Pullback point y and the rotation part e^{-tA} of its Jacobian.
  void pullback(const Vector& x, double t, Vector& y, Matrix& rot_inv) const {
    Matrix aug = Matrix::Zero(d_ + 1, d_ + 1);
    aug.topLeftCorner(d_, d_) = t * a_;
    aug.topRightCorner(d_, 1) = t * b_;
    const Matrix e = aug.exp();
    rot_inv = e.topLeftCorner(d_, d_).transpose();  // e^{-tA} = (e^{tA})^T
    y = rot_inv * (x - e.topRightCorner(d_, 1));
  }

  double value(const Vector& x, double t) const {
    Vector y;
    Matrix r;
    pullback(x, t, y, r);
    return bump_.value(y);
  }

  Vector gradient(const Vector& x, double t) const {
    Vector y;
    Matrix r;
    pullback(x, t, y, r);
    return r.transpose() * bump_.gradient(y);
  }

  double time_derivative(const Vector& x, double t) const {
    Vector y;
    Matrix r;
    pullback(x, t, y, r);
    return -bump_.gradient(y).dot(a_ * y + b_);
  }

  ScalarField as_scalar_field() const {
    return {[self = *this](const Vector& x, double t) { return self.value(x, t); },
            [self = *this](const Vector& x, double t) { return self.gradient(x, t); },
            [self = *this](const Vector& x, double t) {
              return self.time_derivative(x, t);
            }};
  }

 private:
  GaussianBump bump_;
  int d_;
  Matrix a_;
  Vector b_;
};

/// Field sample of a transported Gaussian bump. Only kind
/// "gaussian-bump-advect" exists.
inline FieldSample analytic_field(const std::string& kind,
                                  const VelocityFieldSpec& generator, double t,
                                  const Matrix& points,
                                  std::optional<GaussianBump> bump = std::nullopt) {
  if (kind != "gaussian-bump-advect")
    throw InvalidArgument("analytic_field: unknown kind '" + kind + "'");
  if (points.cols() != generator.dim())
    throw InvalidArgument("analytic_field: points have wrong dimension");
  const AdvectedBump field(bump ? *bump : GaussianBump::standard(generator.dim()),
                           generator);
  FieldSample s;
  s.t = t;
  s.points = points;
  s.grads.resize(points.rows(), points.cols());
  s.dpsidt.resize(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Vector x = points.row(i).transpose();
    s.grads.row(i) = field.gradient(x, t).transpose();
    s.dpsidt(i) = field.time_derivative(x, t);
  }
  return s;
}

/// f(v) = -0.1 ln(1 - |v|) sign(v); intensities are mapped through f and
/// points whose mapped value is within `threshold` of 0 are kept.
inline double intensity_transform(double v) {
  if (!(std::abs(v) < 1.0))
    throw InvalidArgument("intensity_transform: |value| must be < 1");
  const double sign = (v > 0.0) - (v < 0.0);
  return -0.1 * std::log(1.0 - std::abs(v)) * sign;
}

inline std::vector<Eigen::Index> select_field_points(const Vector& values,
                                                     double threshold) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (std::abs(intensity_transform(values(i))) <= threshold) idx.push_back(i);
  return idx;
}

}  // namespace rematch
