#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "test_support.hpp"

namespace rematch {
namespace {

ReconModel random_model(Rng& rng, Eigen::Index n, int k) {
  ReconModel m = ReconModel::zeros(n, 3, k, {TimeBasisKind::Polynomial, 3});
  m.base = rng.uniform_matrix(n, 3, 0.2, 0.8);
  m.theta = 0.1 * rng.normal_matrix(n, m.theta.cols());
  m.logits = rng.normal_matrix(n, m.logits.cols());
  return m;
}

std::vector<Observation> observations_of(const ReconModel& m, const std::vector<double>& times) {
  std::vector<Observation> obs;
  for (double t : times) obs.push_back({t, eval_trajectories(m, t).positions});
  return obs;
}

std::vector<Observation> noisy_observations(Rng& rng, const ReconModel& m,
                                            const std::vector<double>& times) {
  auto obs = observations_of(m, times);
  for (auto& o : obs) o.positions += 0.05 * rng.normal_matrix(o.positions.rows(), 3);
  return obs;
}

double flat_loss(ReconModel m, const Vector& p, const PriorClass& prior,
                 const std::vector<Observation>& obs, const LossConfig& cfg,
                 const std::vector<double>& times) {
  m.set_flat(p);
  return total_loss(m, prior, obs, cfg, times).total;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

TEST(RematchingLoss, SingleTimeEqualsProjectionResidual) {
  Rng rng(1);
  const ReconModel m = random_model(rng, 8, 2);
  const PriorClass prior = PriorClass::piecewise_rigid(2);
  const double t = 0.41;
  EXPECT_EQ(rematching_loss(m, prior, {t}),
            project(prior, eval_trajectories(m, t), eval_weights(m, t)).residual);
}

TEST(RematchingLoss, StaticModelUnderRigidPrior) {
  Rng rng(2);
  ReconModel m = random_model(rng, 8, 1);
  m.theta.setZero();
  EXPECT_EQ(rematching_loss(m, PriorClass::rigid(), {0.1, 0.5, 0.9}), 0.0);
}

TEST(RematchingLoss, ExactTwoRigidFitWithHardWeights) {
  // Each half translates with its own velocity, which the order-1 basis
  // represents exactly.
  const Eigen::Index n = 10;
  ReconModel m = ReconModel::zeros(n, 3, 2, {TimeBasisKind::Polynomial, 1});
  Rng rng(3);
  m.base = rng.uniform_matrix(n, 3, 0.2, 0.8);
  const Vector c0 = rng.normal_vector(3), c1 = rng.normal_vector(3);
  for (Eigen::Index i = 0; i < n; ++i) {
    // B_1(t) = 2t, so theta = c/2 gives velocity c.
    m.theta.row(i) = 0.5 * (i < n / 2 ? c0 : c1).transpose();
    m.logits(i, i < n / 2 ? 0 : m.logit_width()) = 60.0;
  }
  EXPECT_LE(rematching_loss(m, PriorClass::piecewise_rigid(2), {0.0, 0.3, 0.7, 1.0}), 1e-8);
}

TEST(RematchingLoss, MeanOfSingleTimeCalls) {
  Rng rng(4);
  const ReconModel m = random_model(rng, 7, 2);
  const PriorClass prior = PriorClass::piecewise_rigid(2);
  const std::vector<double> times = {0.1, 0.35, 0.8};
  double mean = 0.0;
  for (double t : times) mean += rematching_loss(m, prior, {t});
  mean /= 3.0;
  EXPECT_LE(test::rel_err(rematching_loss(m, prior, times), mean), 1e-14);
}

TEST(RematchingLoss, Errors) {
  Rng rng(5);
  const ReconModel m = random_model(rng, 5, 2);
  EXPECT_THROW(rematching_loss(m, PriorClass::piecewise_rigid(2), {}), InvalidArgument);
  EXPECT_THROW(rematching_loss(m, PriorClass::piecewise_rigid(2), {1.5}), InvalidArgument);
  EXPECT_THROW(rematching_loss(m, PriorClass::piecewise_rigid(3), {0.5}), InvalidArgument);
}

TEST(RematchingLoss, SolverFailureCarriesTime) {
  ReconModel m = ReconModel::zeros(4, 4, 1, {TimeBasisKind::Polynomial, 1});
  try {
    rematching_loss(m, PriorClass::rigid(), {0.25});
    FAIL() << "expected TimedSolveError";
  } catch (const TimedSolveError& e) {
    EXPECT_EQ(e.time(), 0.25);
  }
}

TEST(ReconstructionLoss, ExactModel) {
  Rng rng(6);
  const ReconModel m = random_model(rng, 6, 1);
  EXPECT_EQ(reconstruction_loss(m, observations_of(m, {0.0, 0.5, 1.0})), 0.0);
}

TEST(ReconstructionLoss, UnitOffset) {
  ReconModel m = ReconModel::zeros(1, 3, 1);
  Observation o{0.5, Matrix::Zero(1, 3)};
  o.positions(0, 0) = 1.0;
  EXPECT_EQ(reconstruction_loss(m, {o}), 1.0);
}

TEST(ReconstructionLoss, MatchesDirectSummation) {
  Rng rng(7);
  const ReconModel m = random_model(rng, 9, 1);
  const auto obs = noisy_observations(rng, m, {0.0, 0.2, 0.6});
  double sum = 0.0;
  for (const auto& o : obs) {
    const Matrix p = eval_trajectories(m, o.time).positions;
    for (Eigen::Index i = 0; i < 9; ++i)
      for (int c = 0; c < 3; ++c) sum += std::pow(p(i, c) - o.positions(i, c), 2);
  }
  EXPECT_LE(test::rel_err(reconstruction_loss(m, obs), sum / 27.0), 1e-14);
}

TEST(ReconstructionLoss, ShapeMismatch) {
  Rng rng(8);
  const ReconModel m = random_model(rng, 4, 1);
  EXPECT_THROW(reconstruction_loss(m, {{0.5, Matrix::Zero(3, 3)}}), InvalidArgument);
  EXPECT_THROW(reconstruction_loss(m, {}), InvalidArgument);
}

TEST(EntropyLoss, Examples) {
  EXPECT_NEAR(entropy_loss((Vector(2) << 0.5, 0.5).finished()), -0.34657359027997264, 1e-15);
  EXPECT_EQ(entropy_loss((Vector(2) << 1.0, 0.0).finished()), 0.0);
  EXPECT_NEAR(entropy_loss((Vector(2) << 0.25, 0.75).finished()), -0.28116757230940415, 1e-15);
  EXPECT_THROW(entropy_loss((Vector(2) << 1.5, -0.5).finished()), InvalidArgument);
}

TEST(TotalLoss, LambdaZeroIsReconstructionOnly) {
  Rng rng(9);
  const ReconModel m = random_model(rng, 6, 1);
  const auto obs = noisy_observations(rng, m, {0.0, 0.5});
  LossConfig cfg;
  cfg.lambda = 0.0;
  const LossBreakdown l = total_loss(m, PriorClass::rigid(), obs, cfg);
  EXPECT_EQ(l.total, l.rec);
}

TEST(TotalLoss, BreakdownIdentity) {
  Rng rng(10);
  const ReconModel m = random_model(rng, 6, 2);
  const auto obs = noisy_observations(rng, m, {0.0, 0.5});
  LossConfig cfg;
  cfg.lambda = 0.3;
  cfg.entropy_weight = 0.02;
  cfg.seed = 5;
  const LossBreakdown l = total_loss(m, PriorClass::piecewise_rigid(2), obs, cfg);
  EXPECT_NEAR(l.total, l.rec + cfg.lambda * l.rematch + cfg.entropy_weight * l.entropy, 1e-12);
  EXPECT_GT(l.rematch, 0.0);
  EXPECT_LT(l.entropy, 0.0);
}

TEST(TotalLoss, PerfectModelOnPriorSatisfyingMotion) {
  Rng rng(11);
  ReconModel m = ReconModel::zeros(8, 3, 1, {TimeBasisKind::Polynomial, 2});
  m.base = rng.uniform_matrix(8, 3, 0.2, 0.8);
  m.theta.leftCols(3) = (0.5 * rng.normal_vector(3)).transpose().replicate(8, 1);
  const auto obs = observations_of(m, {0.0, 0.4, 1.0});
  EXPECT_LE(total_loss(m, PriorClass::rigid(), obs, LossConfig{}).total, 1e-8);
}

TEST(TotalLoss, UsesTheSeededTimes) {
  Rng rng(12);
  const ReconModel m = random_model(rng, 6, 2);
  const auto obs = noisy_observations(rng, m, {0.0, 0.5});
  LossConfig cfg;
  cfg.seed = 99;
  const auto a = total_loss(m, PriorClass::piecewise_rigid(2), obs, cfg);
  const auto b = total_loss(m, PriorClass::piecewise_rigid(2), obs, cfg,
                            draw_times(cfg.seed, cfg.times_per_step));
  EXPECT_EQ(a.total, b.total);
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

TEST(Gradient, StaticExactModelUnderRigidPrior) {
  Rng rng(13);
  ReconModel m = random_model(rng, 6, 1);
  m.theta.setZero();
  const auto obs = observations_of(m, {0.0, 0.5, 1.0});
  const ModelGradient g = grad_total_loss(m, PriorClass::rigid(), obs, LossConfig{});
  EXPECT_EQ(g.flat().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Gradient, LambdaZeroIsReconstructionGradient) {
  Rng rng(14);
  const ReconModel m = random_model(rng, 6, 1);
  const auto obs = noisy_observations(rng, m, {0.0, 0.5, 1.0});
  LossConfig cfg;
  cfg.lambda = 0.0;
  const Vector g = grad_total_loss(m, PriorClass::rigid(), obs, cfg).flat();
  const Vector fd = finite_diff_grad(
      [&](const Vector& p) {
        ReconModel c = m;
        c.set_flat(p);
        return reconstruction_loss(c, obs);
      },
      m.flat(), 1e-6);
  EXPECT_LE((g - fd).norm(), 1e-7 * (1.0 + fd.norm()));
}

TEST(Gradient, MatchesFiniteDifferencesOfFullPipeline) {
  Rng rng(15);
  const Matrix v = test::random_directions(rng, 3, 1);
  const std::vector<PriorClass> priors = {
      PriorClass::directional(v), PriorClass::rigid(), PriorClass::divfree({{1, 1, 1}}),
      PriorClass::piecewise_rigid(2), PriorClass::directional_plus_rigid(v, 2)};
  for (const auto& prior : priors) {
    const ReconModel m = random_model(rng, 6, prior.part_count());
    const auto obs = noisy_observations(rng, m, {0.0, 0.5, 1.0});
    LossConfig cfg;
    cfg.lambda = 0.5;
    cfg.entropy_weight = 0.1;
    const std::vector<double> times = {0.15, 0.6, 0.9};
    const Vector g = grad_total_loss(m, prior, obs, cfg, times).flat();
    const Vector fd = finite_diff_grad(
        [&](const Vector& p) { return flat_loss(m, p, prior, obs, cfg, times); }, m.flat(), 1e-6);
    EXPECT_LE((g - fd).norm() / fd.norm(), 1e-5) << to_string(prior.tag);
  }
}

TEST(Gradient, ScalesLinearlyWithLambda) {
  Rng rng(16);
  const ReconModel m = random_model(rng, 6, 2);
  const auto obs = noisy_observations(rng, m, {0.0, 0.5});
  const std::vector<double> times = {0.2, 0.7};
  LossConfig base;
  base.lambda = 0.0;
  base.entropy_weight = 0.0;
  LossConfig one = base, three = base;
  one.lambda = 0.25;
  three.lambda = 0.75;
  const PriorClass prior = PriorClass::piecewise_rigid(2);
  const Vector g0 = grad_total_loss(m, prior, obs, base, times).flat();
  const Vector g1 = grad_total_loss(m, prior, obs, one, times).flat() - g0;
  const Vector g3 = grad_total_loss(m, prior, obs, three, times).flat() - g0;
  EXPECT_LE((g3 - 3.0 * g1).norm(), 1e-12 * (1.0 + g3.norm()));
}

TEST(Gradient, ValueMatchesTotalLoss) {
  Rng rng(17);
  const ReconModel m = random_model(rng, 6, 2);
  const auto obs = noisy_observations(rng, m, {0.0, 0.5});
  LossConfig cfg;
  cfg.seed = 3;
  LossBreakdown value;
  grad_total_loss(m, PriorClass::piecewise_rigid(2), obs, cfg, &value);
  const LossBreakdown ref = total_loss(m, PriorClass::piecewise_rigid(2), obs, cfg);
  EXPECT_LE(test::rel_err(value.total, ref.total), 1e-13);
  EXPECT_LE(test::rel_err(value.rematch, ref.rematch), 1e-13);
}

// ---------------------------------------------------------------------------
// Optimizer and training
// ---------------------------------------------------------------------------

TEST(AdamTest, FirstStepMovesByLearningRate) {
  Adam adam(2);
  Vector p = Vector::Zero(2);
  Vector g(2);
  g << 3.0, -0.5;
  adam.step(p, g, 0.1);
  EXPECT_NEAR(p(0), -0.1, 1e-8);
  EXPECT_NEAR(p(1), 0.1, 1e-8);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(AdamTest, MinimizesQuadratic) {
  Adam adam(3);
  Vector p = Vector::Constant(3, 2.0);
  for (int i = 0; i < 2000; ++i) adam.step(p, 2.0 * p, 0.01);
  EXPECT_LE(p.norm(), 1e-3);
}

struct SmallProblem {
  Scene scene = make_scene("two-rigid", 12, 4);
  ReconModel model;
  std::vector<Observation> obs;
  SmallProblem() {
    model = ReconModel::zeros(12, 3, 2);
    model.base = scene.initial_positions;
    for (double t : scene.observation_times) obs.push_back({t, trajectory_sample(scene, t).positions});
    Rng rng(1);
    model.logits = 0.1 * rng.normal_matrix(12, model.logits.cols());
  }
};

TEST(Train, ZeroIterationsLeavesModelUnchanged) {
  SmallProblem p;
  ReconModel m = p.model;
  TrainConfig tc;
  tc.iterations = 0;
  const auto history = train(m, PriorClass::piecewise_rigid(2), p.obs, LossConfig{}, tc);
  EXPECT_TRUE(history.empty());
  EXPECT_EQ(m.flat(), p.model.flat());
}

TEST(Train, DeterministicHistory) {
  SmallProblem p;
  TrainConfig tc;
  tc.iterations = 60;
  tc.restarts = 2;
  tc.restart_steps = 5;
  LossConfig lc;
  lc.seed = 7;
  ReconModel a = p.model, b = p.model;
  const auto ha = train(a, PriorClass::piecewise_rigid(2), p.obs, lc, tc);
  const auto hb = train(b, PriorClass::piecewise_rigid(2), p.obs, lc, tc);
  ASSERT_EQ(ha.size(), 60u);
  for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_EQ(ha[i].total, hb[i].total);
  EXPECT_EQ(a.flat(), b.flat());
}

TEST(Train, LossDecreasesOverWindows) {
  SmallProblem p;
  TrainConfig tc;
  tc.iterations = 400;
  tc.restarts = 2;
  tc.restart_steps = 10;
  LossConfig lc;
  lc.seed = 2;
  ReconModel m = p.model;
  const auto h = train(m, PriorClass::piecewise_rigid(2), p.obs, lc, tc);
  const auto window = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < from + 20; ++i) {
      EXPECT_TRUE(std::isfinite(h[i].total));
      s += h[i].total;
    }
    return s / 20.0;
  };
  EXPECT_LT(window(380), window(0));
  EXPECT_LT(window(380), window(100));
}

TEST(Train, WarmupFreezesLogitsAndDropsMatching) {
  SmallProblem p;
  TrainConfig tc;
  tc.iterations = 20;
  tc.warmup = 1.0;
  ReconModel m = p.model;
  const auto h = train(m, PriorClass::piecewise_rigid(2), p.obs, LossConfig{}, tc);
  EXPECT_EQ(m.logits, p.model.logits);
  for (const auto& l : h) EXPECT_EQ(l.total, l.rec);
}

TEST(Train, DivergenceReportsIteration) {
  SmallProblem p;
  TrainConfig tc;
  tc.iterations = 10;
  tc.lr_theta = 1e300;
  ReconModel m = p.model;
  std::vector<LossBreakdown> history;
  try {
    train(m, PriorClass::piecewise_rigid(2), p.obs, LossConfig{}, tc, history);
    FAIL() << "expected NumericalDivergence";
  } catch (const NumericalDivergence& e) {
    EXPECT_GE(e.index(), 1u);
    EXPECT_EQ(history.size(), e.index());
  }
}

TEST(Train, InvalidConfigs) {
  SmallProblem p;
  TrainConfig tc;
  tc.iterations = -1;
  ReconModel m = p.model;
  EXPECT_THROW(train(m, PriorClass::piecewise_rigid(2), p.obs, LossConfig{}, tc), InvalidArgument);
  LossConfig lc;
  lc.times_per_step = 0;
  EXPECT_THROW(train(m, PriorClass::piecewise_rigid(2), p.obs, lc, TrainConfig{}), InvalidArgument);
  lc = LossConfig{};
  lc.lambda = -1.0;
  EXPECT_THROW(lc.validate(), InvalidArgument);
}

TEST(History, CsvLayout) {
  std::ostringstream os;
  write_history_csv(os, {{1.0, 2.0, -0.5, 1.5}});
  EXPECT_EQ(os.str(), "iteration,rec,rematch,entropy,total\n0,1,2,-0.5,1.5\n");
}

}  // namespace
}  // namespace rematch
