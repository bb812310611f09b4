#pragma once

// Ground-truth flows: velocity field descriptions, RK4 integration of
// dphi/dt = v(phi, t) from phi_0 = id, continuity-equation residuals and the
// synthetic scenes used by the experiments.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "rematch/curl_basis.hpp"
#include "rematch/random.hpp"
#include "rematch/tensor_kit.hpp"
#include "rematch/velocity_priors.hpp"

namespace rematch {

struct ConstantField {
  Vector c;
};

struct RigidField {
  SkewParams params;
};

struct DivFreeComboField {
  std::vector<Frequency> frequencies;
  Vector beta;
  CurlBasis basis;  ///< derived from frequencies
};

struct CustomField {
  std::function<Vector(const Vector&, double)> value;
  std::function<Matrix(const Vector&, double)> jacobian;
};

class VelocityFieldSpec {
 public:
  using Kind = std::variant<ConstantField, RigidField, DivFreeComboField, CustomField>;

  static VelocityFieldSpec constant(Vector c) {
    const int d = static_cast<int>(c.size());
    return VelocityFieldSpec(d, ConstantField{std::move(c)});
  }

  static VelocityFieldSpec rigid(const Matrix& a, const Vector& b) {
    SkewParams p = SkewParams::from_matrix(a, b);
    const int d = p.dim;
    return VelocityFieldSpec(d, RigidField{std::move(p)});
  }

  static VelocityFieldSpec rigid(SkewParams p) {
    const int d = p.dim;
    return VelocityFieldSpec(d, RigidField{std::move(p)});
  }

  static VelocityFieldSpec divfree_combo(std::vector<Frequency> freqs, Vector beta,
                                         int d) {
    CurlBasis basis = build_curl_basis(freqs, d);
    if (static_cast<std::size_t>(beta.size()) != basis.size())
      throw InvalidArgument("divfree_combo: beta has " + std::to_string(beta.size()) +
                            " entries for " + std::to_string(basis.size()) +
                            " basis fields");
    if (!beta.allFinite()) throw InvalidArgument("divfree_combo: non-finite beta");
    return VelocityFieldSpec(d, DivFreeComboField{std::move(freqs), std::move(beta),
                                                  std::move(basis)});
  }

  static VelocityFieldSpec custom(int d, std::function<Vector(const Vector&, double)> v,
                                  std::function<Matrix(const Vector&, double)> jac) {
    return VelocityFieldSpec(d, CustomField{std::move(v), std::move(jac)});
  }

  int dim() const { return dim_; }
  const Kind& kind() const { return kind_; }
  std::string kind_name() const {
    return std::visit(
        [](const auto& k) -> std::string {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, ConstantField>) return "constant";
          else if constexpr (std::is_same_v<T, RigidField>) return "rigid";
          else if constexpr (std::is_same_v<T, DivFreeComboField>) return "divfree";
          else return "custom";
        },
        kind_);
  }

  Vector velocity(const Vector& x, double t) const {
    return std::visit(
        [&](const auto& k) -> Vector {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, ConstantField>) return k.c;
          else if constexpr (std::is_same_v<T, RigidField>) return k.params.apply(x);
          else if constexpr (std::is_same_v<T, DivFreeComboField>)
            return combo_value(k.basis, k.beta, x);
          else return k.value(x, t);
        },
        kind_);
  }

  Matrix jacobian(const Vector& x, double t) const {
    return std::visit(
        [&](const auto& k) -> Matrix {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, ConstantField>) return Matrix::Zero(dim_, dim_);
          else if constexpr (std::is_same_v<T, RigidField>) return k.params.a();
          else if constexpr (std::is_same_v<T, DivFreeComboField>)
            return combo_jacobian(k.basis, k.beta, x);
          else return k.jacobian(x, t);
        },
        kind_);
  }

  double divergence(const Vector& x, double t) const { return jacobian(x, t).trace(); }

  /// Field with reversed direction; integrating it pulls points back along a
  /// stationary flow.
  VelocityFieldSpec negated() const {
    return std::visit(
        [&](const auto& k) -> VelocityFieldSpec {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, ConstantField>) return constant(-k.c);
          else if constexpr (std::is_same_v<T, RigidField>)
            return rigid(SkewParams{k.params.dim, -k.params.vech_a, -k.params.b});
          else if constexpr (std::is_same_v<T, DivFreeComboField>)
            return divfree_combo(k.frequencies, -k.beta, dim_);
          else
            return custom(
                dim_, [f = k.value](const Vector& x, double t) -> Vector { return -f(x, t); },
                [j = k.jacobian](const Vector& x, double t) -> Matrix { return -j(x, t); });
        },
        kind_);
  }

 private:
  VelocityFieldSpec(int d, Kind kind) : dim_(d), kind_(std::move(kind)) {
    if (d < 1) throw InvalidArgument("VelocityFieldSpec: dimension must be positive");
  }

  int dim_;
  Kind kind_;
};

/// Classical RK4 for dphi/dt = v(phi, t) on [0, t] with `steps` uniform steps.
inline Vector integrate_flow(const VelocityFieldSpec& v, const Vector& x0, double t,
                             int steps) {
  if (steps < 1) throw InvalidArgument("integrate_flow: steps must be >= 1");
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("integrate_flow: t must lie in [0, 1]");
  if (x0.size() != v.dim()) throw InvalidArgument("integrate_flow: point has wrong dimension");
  const double h = t / steps;
  Vector x = x0;
  for (int step = 0; step < steps; ++step) {
    const double s = step * h;
    const Vector k1 = v.velocity(x, s);
    const Vector k2 = v.velocity(x + 0.5 * h * k1, s + 0.5 * h);
    const Vector k3 = v.velocity(x + 0.5 * h * k2, s + 0.5 * h);
    const Vector k4 = v.velocity(x + h * k3, s + h);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite())
      throw NumericalDivergence("integrate_flow: non-finite state at step " +
                                    std::to_string(step + 1),
                                static_cast<std::size_t>(step + 1));
  }
  return x;
}

/// Scalar function psi(x, t) with its spatial gradient and time derivative.
struct ScalarField {
  std::function<double(const Vector&, double)> value;
  std::function<Vector(const Vector&, double)> gradient;
  std::function<double(const Vector&, double)> time_derivative;
};

enum class ContinuityForm {
  Full,     ///< dpsi/dt + <grad psi, v> + psi div v
  Reduced,  ///< dpsi/dt + <grad psi, v>, valid for divergence-free v
};

inline double continuity_residual(const ScalarField& psi, const VelocityFieldSpec& v,
                                  const Vector& x, double t,
                                  ContinuityForm form = ContinuityForm::Full) {
  double r = psi.time_derivative(x, t) + psi.gradient(x, t).dot(v.velocity(x, t));
  if (form == ContinuityForm::Full) r += psi.value(x, t) * v.divergence(x, t);
  return r;
}

struct Scene {
  std::string name;
  std::string kind;
  std::uint64_t seed = 0;
  Matrix initial_positions;                  ///< n x d
  std::vector<VelocityFieldSpec> generators;  ///< one per ground-truth part
  std::vector<int> part_labels;              ///< length n
  std::vector<double> observation_times;

  Eigen::Index size() const { return initial_positions.rows(); }
  int dim() const { return static_cast<int>(initial_positions.cols()); }
  int parts() const { return static_cast<int>(generators.size()); }

  void validate() const {
    if (generators.empty()) throw InvalidArgument("Scene: no generators");
    if (static_cast<Eigen::Index>(part_labels.size()) != size())
      throw InvalidArgument("Scene: one label per particle required");
    for (int l : part_labels)
      if (l < 0 || l >= parts()) throw InvalidArgument("Scene: label out of range");
    for (const auto& g : generators)
      if (g.dim() != dim()) throw InvalidArgument("Scene: generator dimension mismatch");
    for (std::size_t i = 0; i < observation_times.size(); ++i) {
      const double t = observation_times[i];
      if (!(t >= 0.0 && t <= 1.0))
        throw InvalidArgument("Scene: observation times must lie in [0, 1]");
      if (i > 0 && !(t > observation_times[i - 1]))
        throw InvalidArgument("Scene: observation times must be strictly increasing");
    }
    if (!initial_positions.allFinite())
      throw InvalidArgument("Scene: non-finite initial positions");
  }
};

inline constexpr int kDefaultFlowSteps = 200;

inline TrajectorySample trajectory_sample(const Scene& scene, double t,
                                          int steps = kDefaultFlowSteps) {
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("trajectory_sample: t must lie in [0, 1]");
  TrajectorySample s;
  s.t = t;
  s.positions.resize(scene.size(), scene.dim());
  s.velocities.resize(scene.size(), scene.dim());
  for (Eigen::Index i = 0; i < scene.size(); ++i) {
    const auto& gen = scene.generators[static_cast<std::size_t>(
        scene.part_labels[static_cast<std::size_t>(i)])];
    const Vector x0 = scene.initial_positions.row(i).transpose();
    const Vector x = t == 0.0 ? x0 : integrate_flow(gen, x0, t, steps);
    s.positions.row(i) = x.transpose();
    s.velocities.row(i) = gen.velocity(x, t).transpose();
  }
  return s;
}

/// 0/1 weights matching the scene's ground-truth labels.
inline PartWeights label_weights(const Scene& scene) {
  PartWeights w{Matrix::Zero(scene.size(), scene.parts())};
  for (Eigen::Index i = 0; i < scene.size(); ++i)
    w.w(i, scene.part_labels[static_cast<std::size_t>(i)]) = 1.0;
  return w;
}

// ---------------------------------------------------------------------------
// Synthetic scenes. All are 3D and live inside [0.1, 0.9]^3.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& scene_kinds() {
  static const std::vector<std::string> kinds = {
      "translation-xy", "single-rigid", "two-rigid", "swirl", "restricted-floor"};
  return kinds;
}

inline std::vector<double> default_observation_times() {
  return {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
}

namespace detail {

inline Matrix cross_matrix(const Vector& w) {
  Matrix a(3, 3);
  a << 0.0, -w(2), w(1),
       w(2), 0.0, -w(0),
       -w(1), w(0), 0.0;
  return a;
}

/// Rotation about `center` with angular velocity omega * axis.
inline VelocityFieldSpec rotation_about(const Vector& center, const Vector& axis,
                                        double omega) {
  const Matrix a = cross_matrix(omega * axis);
  return VelocityFieldSpec::rigid(a, -a * center);
}

inline Vector clipped_gaussian_point(Rng& rng, const Vector& center, double sigma,
                                     double max_radius) {
  for (;;) {
    Vector offset = sigma * rng.normal_vector(center.size());
    if (offset.norm() <= max_radius) return center + offset;
  }
}

}  // namespace detail

/// Deterministic synthetic scene.
///   translation-xy    one constant velocity (cx, cy, 0)
///   single-rigid      one cluster rotating about its centre
///   two-rigid         two Gaussian clusters, each rotating about its own centre
///   swirl             divergence-free combination of the 3 curl fields of (1,1,1)
///   restricted-floor  a cluster moving parallel to the floor (no z velocity)
inline Scene make_scene(const std::string& kind, Eigen::Index n, std::uint64_t seed) {
  if (n < 4) throw InvalidArgument("make_scene: n must be >= 4");
  const auto& kinds = scene_kinds();
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
    throw InvalidArgument("make_scene: unknown scene kind '" + kind + "'");

  Rng rng(seed);
  Scene scene;
  scene.kind = kind;
  scene.name = kind + "-n" + std::to_string(n) + "-s" + std::to_string(seed);
  scene.seed = seed;
  scene.observation_times = default_observation_times();
  scene.initial_positions.resize(n, 3);
  scene.part_labels.assign(static_cast<std::size_t>(n), 0);

  if (kind == "translation-xy") {
    Vector c(3);
    c << rng.uniform(0.1, 0.25), rng.uniform(0.1, 0.25), 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      scene.initial_positions.row(i) << rng.uniform(0.1, 0.9 - c(0)),
          rng.uniform(0.1, 0.9 - c(1)), rng.uniform(0.1, 0.9);
    scene.generators.push_back(VelocityFieldSpec::constant(c));
  } else if (kind == "single-rigid") {
    const Vector center = Vector::Constant(3, 0.5);
    const Vector axis = rng.unit_vector(3);
    const double omega = rng.uniform(1.5, 2.5);
    for (Eigen::Index i = 0; i < n; ++i)
      scene.initial_positions.row(i) =
          detail::clipped_gaussian_point(rng, center, 0.12, 0.35).transpose();
    scene.generators.push_back(detail::rotation_about(center, axis, omega));
  } else if (kind == "two-rigid") {
    Vector c0(3), c1(3);
    c0 << 0.3, 0.5, 0.5;
    c1 << 0.7, 0.5, 0.5;
    const Vector axis0 = rng.unit_vector(3);
    const Vector axis1 = rng.unit_vector(3);
    const double omega0 = rng.uniform(1.5, 2.5);
    const double omega1 = -rng.uniform(1.5, 2.5);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % 2);
      scene.part_labels[static_cast<std::size_t>(i)] = label;
      scene.initial_positions.row(i) =
          detail::clipped_gaussian_point(rng, label == 0 ? c0 : c1, 0.06, 0.17)
              .transpose();
    }
    scene.generators.push_back(detail::rotation_about(c0, axis0, omega0));
    scene.generators.push_back(detail::rotation_about(c1, axis1, omega1));
  } else if (kind == "swirl") {
    Vector beta(3);
    for (int l = 0; l < 3; ++l) {
      const double mag = rng.uniform(0.08, 0.16);
      beta(l) = rng.uniform() < 0.5 ? -mag : mag;
    }
    scene.generators.push_back(
        VelocityFieldSpec::divfree_combo({Frequency{1, 1, 1}}, beta, 3));
    // Rejection sampling: keep starts whose path stays in the box at t = 0, 0.05, ..., 1.
    auto stays_inside = [&](const Vector& x0) {
      Vector x = x0;
      for (int s = 1; s <= 20; ++s) {
        x = integrate_flow(scene.generators[0], x, 0.05, 4);
        if (x.minCoeff() < 0.1 || x.maxCoeff() > 0.9) return false;
      }
      return true;
    };
    for (Eigen::Index i = 0; i < n; ++i) {
      Vector x0(3);
      do {
        x0 << rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9);
      } while (!stays_inside(x0));
      scene.initial_positions.row(i) = x0.transpose();
    }
  } else {  // restricted-floor
    Vector center(3);
    center << 0.4, 0.4, 0.3;
    Vector up(3);
    up << 0.0, 0.0, 1.0;
    const double omega = rng.uniform(1.0, 2.0);
    const Matrix a = detail::cross_matrix(omega * up);
    Vector drift(3);
    drift << rng.uniform(0.03, 0.08), rng.uniform(0.03, 0.08), 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      scene.initial_positions.row(i) << center(0) + rng.uniform(-0.12, 0.12),
          center(1) + rng.uniform(-0.12, 0.12), center(2) + rng.uniform(-0.15, 0.15);
    scene.generators.push_back(VelocityFieldSpec::rigid(a, drift - a * center));
  }
  scene.validate();
  return scene;
}

}  // namespace rematch
