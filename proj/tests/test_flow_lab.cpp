#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_support.hpp"

namespace rematch {
namespace {

constexpr double kPi = std::numbers::pi;

VelocityFieldSpec z_rotation(double omega) {
  Matrix a = Matrix::Zero(3, 3);
  a(0, 1) = -omega;
  a(1, 0) = omega;
  return VelocityFieldSpec::rigid(a, Vector::Zero(3));
}

Vector e1() { return Vector::Unit(3, 0); }

TEST(IntegrateFlow, ConstantFieldIsExact) {
  Vector c(3);
  c << 1, 2, 3;
  Vector x0(3);
  x0 << 0.25, -0.5, 0.125;
  for (int steps : {1, 7, 100}) {
    const Vector x = integrate_flow(VelocityFieldSpec::constant(c), x0, 1.0, steps);
    EXPECT_LE((x - (x0 + c)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(IntegrateFlow, QuarterTurn) {
  const Vector x = integrate_flow(z_rotation(kPi / 2), e1(), 1.0, 100);
  EXPECT_LE((x - Vector::Unit(3, 1)).norm(), 1e-8);
}

TEST(IntegrateFlow, FourthOrderConvergence) {
  const Vector exact = Vector::Unit(3, 1);
  const double e1_err = (integrate_flow(z_rotation(kPi / 2), e1(), 1.0, 10) - exact).norm();
  const double e2_err = (integrate_flow(z_rotation(kPi / 2), e1(), 1.0, 20) - exact).norm();
  const double ratio = e1_err / e2_err;
  EXPECT_GE(ratio, 12.0);
  EXPECT_LE(ratio, 20.0);
}

TEST(IntegrateFlow, RigidFlowPreservesDistances) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto v = VelocityFieldSpec::rigid(test::random_skew(rng, 3), rng.normal_vector(3));
    const Vector p = rng.uniform_matrix(3, 1, 0, 1), q = rng.uniform_matrix(3, 1, 0, 1);
    const double t = rng.uniform();
    const double after = (integrate_flow(v, p, t, 200) - integrate_flow(v, q, t, 200)).norm();
    EXPECT_NEAR(after, (p - q).norm(), 1e-7);
  }
}

TEST(IntegrateFlow, DivFreeFlowPreservesVolume) {
  Rng rng(2);
  const auto v = VelocityFieldSpec::divfree_combo({{1, 1, 1}}, rng.normal_vector(3) * 0.3, 3);
  const Vector base = Vector::Constant(3, 0.45);
  const double edge = 0.02;
  Matrix before = edge * Matrix::Identity(3, 3);
  Matrix after(3, 3);
  const Vector b0 = integrate_flow(v, base, 1.0, 1000);
  for (int c = 0; c < 3; ++c)
    after.col(c) = integrate_flow(v, base + before.col(c), 1.0, 1000) - b0;
  EXPECT_NEAR(after.determinant() / before.determinant(), 1.0, 1e-2);
  EXPECT_NEAR(after.determinant(), before.determinant(), 1e-4);
}

TEST(IntegrateFlow, DivergenceIsReported) {
  const auto blowup = VelocityFieldSpec::custom(
      1, [](const Vector& x, double) -> Vector { return x.array().square().matrix() * 1e200; },
      [](const Vector& x, double) -> Matrix { return 2e200 * x.asDiagonal(); });
  try {
    integrate_flow(blowup, Vector::Ones(1), 1.0, 10);
    FAIL() << "expected NumericalDivergence";
  } catch (const NumericalDivergence& e) {
    EXPECT_GE(e.index(), 1u);
    EXPECT_LE(e.index(), 10u);
  }
}

TEST(IntegrateFlow, Preconditions) {
  const auto v = VelocityFieldSpec::constant(Vector::Ones(3));
  EXPECT_THROW(integrate_flow(v, Vector::Zero(3), 1.0, 0), InvalidArgument);
  EXPECT_THROW(integrate_flow(v, Vector::Zero(3), 1.5, 10), InvalidArgument);
  EXPECT_THROW(integrate_flow(v, Vector::Zero(2), 1.0, 10), InvalidArgument);
}

TEST(TrajectorySampleTest, TimeZeroIsIdentity) {
  const Scene scene = make_scene("two-rigid", 12, 3);
  const TrajectorySample s = trajectory_sample(scene, 0.0);
  EXPECT_EQ(s.positions, scene.initial_positions);
}

TEST(TrajectorySampleTest, ConstantFieldVelocities) {
  const Scene scene = make_scene("translation-xy", 10, 4);
  const Vector c = std::get<ConstantField>(scene.generators[0].kind()).c;
  const TrajectorySample s = trajectory_sample(scene, 0.7);
  for (Eigen::Index i = 0; i < s.size(); ++i)
    EXPECT_EQ(Vector(s.velocities.row(i).transpose()), c);
}

TEST(TrajectorySampleTest, TwoRigidSelfConsistency) {
  const Scene scene = make_scene("two-rigid", 20, 5);
  const TrajectorySample s = trajectory_sample(scene, 0.5);
  const PartWeights w = label_weights(scene);
  const auto truth = [&](const Vector& x) -> Vector {
    // Blend of the ground-truth generators with the true 0/1 weights of the
    // nearest sample point.
    const Eigen::Index i = detail::nearest_row(s.positions, x);
    Vector u = Vector::Zero(3);
    for (int j = 0; j < scene.parts(); ++j) u += w.w(i, j) * scene.generators[j].velocity(x, 0.5);
    return u;
  };
  EXPECT_EQ(rho_particles(truth, s), 0.0);
}

TEST(TrajectorySampleTest, VelocitiesMatchFiniteDifferences) {
  const Scene scene = make_scene("swirl", 8, 6);
  const double h = 1e-3;
  const TrajectorySample s = trajectory_sample(scene, 0.5, 400);
  const TrajectorySample sp = trajectory_sample(scene, 0.5 + h, 400);
  const TrajectorySample sm = trajectory_sample(scene, 0.5 - h, 400);
  const Matrix fd = (sp.positions - sm.positions) / (2.0 * h);
  EXPECT_LE((fd - s.velocities).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Continuity, TranslatedProfileIsTransported) {
  Vector c(2);
  c << 0.3, -0.2;
  ScalarField psi;
  psi.value = [&](const Vector& x, double t) { return std::exp(-(x - t * c).squaredNorm()); };
  psi.gradient = [&](const Vector& x, double t) -> Vector {
    return -2.0 * (x - t * c) * psi.value(x, t);
  };
  psi.time_derivative = [&](const Vector& x, double t) {
    return 2.0 * (x - t * c).dot(c) * psi.value(x, t);
  };
  Rng rng(7);
  for (int i = 0; i < 50; ++i)
    EXPECT_LE(std::abs(continuity_residual(psi, VelocityFieldSpec::constant(c),
                                           rng.uniform_matrix(2, 1, 0, 1), rng.uniform())),
              1e-10);
}

TEST(Continuity, StaticFieldZeroVelocity) {
  ScalarField psi;
  psi.value = [](const Vector& x, double) { return x.sum(); };
  psi.gradient = [](const Vector& x, double) -> Vector { return Vector::Ones(x.size()); };
  psi.time_derivative = [](const Vector&, double) { return 0.0; };
  EXPECT_EQ(continuity_residual(psi, VelocityFieldSpec::constant(Vector::Zero(3)),
                                Vector::Constant(3, 0.2), 0.4),
            0.0);
}

TEST(Continuity, RigidPullbackFromIntegratedFlow) {
  // psi_t(x) = psi_0(phi_{-t}(x)) with the backward map obtained by RK4.
  Rng rng(8);
  const auto v = VelocityFieldSpec::rigid(0.8 * test::random_skew(rng, 3), 0.2 * rng.normal_vector(3));
  const GaussianBump bump = GaussianBump::standard(3);
  const auto back = v.negated();
  ScalarField psi;
  psi.value = [&](const Vector& x, double t) { return bump.value(integrate_flow(back, x, t, 200)); };
  psi.gradient = [&](const Vector& x, double t) -> Vector {
    // The pullback of a rigid flow has Jacobian exp(-tA).
    const Matrix jac = (-t * std::get<RigidField>(v.kind()).params.a()).exp();
    return jac.transpose() * bump.gradient(integrate_flow(back, x, t, 200));
  };
  psi.time_derivative = [&](const Vector& x, double t) {
    const double h = 1e-5;
    return (psi.value(x, t + h) - psi.value(x, t - h)) / (2.0 * h);
  };
  for (int i = 0; i < 100; ++i) {
    const Vector x = rng.uniform_matrix(3, 1, 0.2, 0.8);
    const double t = rng.uniform(0.1, 0.9);
    EXPECT_LE(std::abs(continuity_residual(psi, v, x, t)), 1e-7);
  }
}

TEST(Scenes, Deterministic) {
  for (const auto& kind : scene_kinds()) {
    const Scene a = make_scene(kind, 16, 42);
    const Scene b = make_scene(kind, 16, 42);
    EXPECT_EQ(a.initial_positions, b.initial_positions) << kind;
    EXPECT_EQ(a.part_labels, b.part_labels);
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  }
}

TEST(Scenes, StayInsideTheBox) {
  for (const auto& kind : scene_kinds())
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Scene scene = make_scene(kind, 30, seed);
      for (double t : scene.observation_times) {
        const TrajectorySample s = trajectory_sample(scene, t);
        EXPECT_GE(s.positions.minCoeff(), 0.1 - 1e-9) << kind << " t=" << t;
        EXPECT_LE(s.positions.maxCoeff(), 0.9 + 1e-9) << kind << " t=" << t;
      }
    }
}

TEST(Scenes, SingleRigidIsInRigidClass) {
  const Scene scene = make_scene("single-rigid", 25, 9);
  for (double t : {0.0, 0.3, 0.8})
    EXPECT_LE(project(PriorClass::rigid(), trajectory_sample(scene, t)).residual, 1e-10);
}

TEST(Scenes, SwirlIsInDivFreeClass) {
  const Scene scene = make_scene("swirl", 25, 10);
  for (double t : {0.0, 0.4, 1.0})
    EXPECT_LE(project(PriorClass::divfree({{1, 1, 1}}), trajectory_sample(scene, t)).residual,
              1e-10);
}

TEST(Scenes, RestrictedFloorIsInDirectionalClass) {
  const Scene scene = make_scene("restricted-floor", 25, 11);
  EXPECT_LE(project(PriorClass::directional(Vector::Unit(3, 2)), trajectory_sample(scene, 0.6))
                .residual,
            1e-20);
}

TEST(Scenes, TwoRigidLabelsAreBalanced) {
  const Scene scene = make_scene("two-rigid", 40, 12);
  EXPECT_EQ(scene.parts(), 2);
  EXPECT_EQ(std::count(scene.part_labels.begin(), scene.part_labels.end(), 1), 20);
}

TEST(Scenes, Errors) {
  EXPECT_THROW(make_scene("vortex-street", 10, 1), InvalidArgument);
  EXPECT_THROW(make_scene("swirl", 2, 1), InvalidArgument);
  Scene s = make_scene("swirl", 6, 1);
  s.observation_times = {0.5, 0.2};
  EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(Scenes, JsonRoundTrip) {
  for (const auto& kind : scene_kinds()) {
    const Scene a = make_scene(kind, 9, 13);
    const Json j = to_json(a);
    EXPECT_EQ(j.at("d").get<int>(), 3);
    EXPECT_EQ(j.at("n").get<int>(), 9);
    const Scene b = scene_from_json(Json::parse(j.dump()));
    EXPECT_EQ(a.initial_positions, b.initial_positions);
    EXPECT_EQ(to_json(b).dump(), j.dump());
    const TrajectorySample sa = trajectory_sample(a, 0.5), sb = trajectory_sample(b, 0.5);
    EXPECT_EQ(sa.positions, sb.positions);
  }
}

TEST(Scenes, JsonRejectsInconsistentCounts) {
  Json j = to_json(make_scene("swirl", 6, 2));
  j["n"] = 7;
  EXPECT_THROW(scene_from_json(j), InvalidArgument);
}

}  // namespace
}  // namespace rematch
