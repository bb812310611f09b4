#pragma once

// Matching loss, training objective and its gradient, and the Adam loop.
//
//   L = rec_weight * L_rec + lambda * L_rm + entropy_weight * L_ent
//
// L_rm(t) = min_{u in P} rho(u, sample(t)) is a value function. Its gradient
// with respect to the model is the partial gradient of rho at the minimiser
// u*, held fixed (Danskin), so no derivative of the projection is needed.
// For adaptive classes rho is the weighted per-part bound, which is linear in
// the weights w_ij with coefficient |r_ij|^2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rematch/random.hpp"
#include "rematch/recon_model.hpp"
#include "rematch/velocity_priors.hpp"

namespace rematch {

struct LossConfig {
  double lambda = 0.001;
  double entropy_weight = 0.0001;  ///< adaptive classes only
  int times_per_step = 4;
  double rec_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
      throw InvalidArgument("LossConfig: lambda must be finite and >= 0");
    if (!std::isfinite(entropy_weight))
      throw InvalidArgument("LossConfig: entropy_weight must be finite");
    if (times_per_step < 1)
      throw InvalidArgument("LossConfig: times_per_step must be >= 1");
    if (!(rec_weight >= 0.0) || !std::isfinite(rec_weight))
      throw InvalidArgument("LossConfig: rec_weight must be finite and >= 0");
  }
};

/// total = rec_weight * rec + lambda * rematch + entropy_weight * entropy.
struct LossBreakdown {
  double rec = 0.0;
  double rematch = 0.0;
  double entropy = 0.0;
  double total = 0.0;
};

/// Same layout as the model parameters.
struct ModelGradient {
  Matrix base;
  Matrix theta;
  Matrix logits;

  static ModelGradient zeros_like(const ReconModel& m) {
    return {Matrix::Zero(m.base.rows(), m.base.cols()),
            Matrix::Zero(m.theta.rows(), m.theta.cols()),
            Matrix::Zero(m.logits.rows(), m.logits.cols())};
  }

  Vector flat() const {
    Vector p(base.size() + theta.size() + logits.size());
    p << vec(base), vec(theta), vec(logits);
    return p;
  }

  ModelGradient& operator+=(const ModelGradient& o) {
    base += o.base;
    theta += o.theta;
    logits += o.logits;
    return *this;
  }
};

/// `count` times drawn uniformly from [0, 1].
inline std::vector<double> draw_times(Rng& rng, int count) {
  std::vector<double> t(static_cast<std::size_t>(count));
  for (auto& x : t) x = rng.uniform();
  return t;
}

inline std::vector<double> draw_times(std::uint64_t seed, int count) {
  Rng rng(seed);
  return draw_times(rng, count);
}

namespace detail {

inline void check_model_prior(const ReconModel& model, const PriorClass& prior) {
  model.validate();
  prior.validate();
  if (prior.adaptive() && model.k != prior.parts)
    throw InvalidArgument("model has k=" + std::to_string(model.k) + " parts but prior needs " +
                          std::to_string(prior.parts));
}

inline void check_times(const std::vector<double>& times) {
  if (times.empty()) throw InvalidArgument("rematching_loss: times must be nonempty");
  for (double t : times)
    if (!(t >= 0.0 && t <= 1.0))
      throw InvalidArgument("rematching_loss: times must lie in [0, 1]");
}

inline std::optional<PartWeights> weights_for(const ReconModel& model,
                                              const PriorClass& prior, double t) {
  if (!prior.adaptive()) return std::nullopt;
  return eval_weights(model, t);
}

// rho at one time and its partial derivatives with u* held fixed.
struct SampleTerms {
  double rho = 0.0;
  Matrix d_pos;  // n x d
  Matrix d_vel;  // n x d
  Matrix d_w;    // n x k, empty for non-adaptive classes
};

inline void add_rigid_part_terms(const SkewParams& p, const TrajectorySample& s,
                                 const Vector& w, Eigen::Index col, SampleTerms& out) {
  const Matrix a = p.a();
  const Matrix r = ((s.positions * a.transpose()).rowwise() + p.b.transpose()) - s.velocities;
  const Matrix wr = r.array().colwise() * w.array();
  out.d_pos += 2.0 * wr * a;
  out.d_vel -= 2.0 * wr;
  if (out.d_w.size() > 0) out.d_w.col(col) = r.rowwise().squaredNorm();
}

inline SampleTerms rematch_terms(const ReconModel& model, const PriorClass& prior,
                                 double t) {
  const TrajectorySample s = eval_trajectories(model, t);
  const std::optional<PartWeights> w = weights_for(model, prior, t);
  ProjectionSolution sol;
  try {
    sol = project(prior, s, w);
  } catch (const std::exception& e) {
    throw TimedSolveError("matching solve failed at t=" + std::to_string(t) + ": " +
                              e.what(),
                          t);
  }
  SampleTerms out;
  out.rho = sol.residual;
  out.d_pos = Matrix::Zero(s.size(), s.dim());
  out.d_vel = Matrix::Zero(s.size(), s.dim());
  if (w) out.d_w = Matrix::Zero(s.size(), prior.parts);

  switch (prior.tag) {
    case PriorTag::Directional: {
      const Matrix vvt = prior.directions * prior.directions.transpose();
      out.d_vel = 2.0 * s.velocities * vvt;
      break;
    }
    case PriorTag::Rigid:
      add_rigid_part_terms(sol.rigid_parts[0], s, Vector::Ones(s.size()), 0, out);
      break;
    case PriorTag::PiecewiseRigid:
      for (int j = 0; j < prior.parts; ++j)
        add_rigid_part_terms(sol.rigid_parts[static_cast<std::size_t>(j)], s, w->w.col(j), j,
                             out);
      break;
    case PriorTag::DivFree: {
      const CurlBasis basis = build_curl_basis(prior.frequencies, s.dim());
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        const Vector x = s.positions.row(i).transpose();
        const Vector r = combo_value(basis, sol.beta, x) - s.velocities.row(i).transpose();
        out.d_pos.row(i) = 2.0 * (combo_jacobian(basis, sol.beta, x).transpose() * r).transpose();
        out.d_vel.row(i) = -2.0 * r.transpose();
      }
      break;
    }
    case PriorTag::DirectionalPlusRigid: {
      const Matrix vvt = prior.directions * prior.directions.transpose();
      out.d_vel = 2.0 * ((s.velocities * vvt).array().colwise() * w->w.col(0).array()).matrix();
      out.d_w.col(0) = (s.velocities * prior.directions).rowwise().squaredNorm();
      for (int j = 1; j < prior.parts; ++j)
        add_rigid_part_terms(sol.rigid_parts[static_cast<std::size_t>(j)], s, w->w.col(j), j,
                             out);
      break;
    }
  }
  return out;
}

// Accumulates scale * (d_pos, d_vel) at time t into the base/theta gradient.
inline void chain_trajectory(const ReconModel& model, double t, const Matrix& d_pos,
                             const Matrix& d_vel, double scale, ModelGradient& g) {
  Vector b, db;
  model.basis.evaluate(t, model.order(), b, db);
  const int d = model.dim();
  g.base += scale * d_pos;
  for (int r = 0; r < model.order(); ++r)
    g.theta.middleCols(r * d, d) += scale * (b(r) * d_pos + db(r) * d_vel);
}

// Accumulates scale * dL/dw (n x k) at time t through the softmax.
inline void chain_weights(const ReconModel& model, double t, const Matrix& w,
                          const Matrix& d_w, double scale, ModelGradient& g) {
  const Vector mix = (w.array() * d_w.array()).rowwise().sum();
  const Matrix d_z = w.array() * (d_w.colwise() - mix).array();
  const Vector f = model.weight_features(t);
  const int width = model.logit_width();
  for (int j = 0; j < model.k; ++j)
    g.logits.middleCols(j * width, width) += scale * d_z.col(j) * f.transpose();
}

}  // namespace detail

/// Mean over `times` of the projection residual of the model's flow.
inline double rematching_loss(const ReconModel& model, const PriorClass& prior,
                              const std::vector<double>& times) {
  detail::check_model_prior(model, prior);
  detail::check_times(times);
  double sum = 0.0;
  for (double t : times) {
    const TrajectorySample s = eval_trajectories(model, t);
    try {
      sum += project(prior, s, detail::weights_for(model, prior, t)).residual;
    } catch (const std::exception& e) {
      throw TimedSolveError("matching solve failed at t=" + std::to_string(t) + ": " +
                                e.what(),
                            t);
    }
  }
  return sum / static_cast<double>(times.size());
}

namespace detail {

inline void check_observations(const ReconModel& model, const std::vector<Observation>& obs) {
  if (obs.empty()) throw InvalidArgument("reconstruction_loss: observations must be nonempty");
  for (const auto& o : obs) {
    if (o.positions.rows() != model.size() || o.positions.cols() != model.dim())
      throw InvalidArgument("reconstruction_loss: observation shape mismatch");
    if (!(o.time >= 0.0 && o.time <= 1.0))
      throw InvalidArgument("reconstruction_loss: observation time outside [0, 1]");
  }
}

}  // namespace detail

/// sum_obs sum_i |gamma_i(t_obs) - y_i|^2 / (n |obs|).
inline double reconstruction_loss(const ReconModel& model, const std::vector<Observation>& obs) {
  model.validate();
  detail::check_observations(model, obs);
  double sum = 0.0;
  for (const auto& o : obs)
    sum += (eval_trajectories(model, o.time).positions - o.positions).squaredNorm();
  return sum / (static_cast<double>(model.size()) * static_cast<double>(obs.size()));
}

/// (1/k) sum_j m_j ln m_j with 0 ln 0 = 0.
inline double entropy_loss(const Vector& means) {
  if (means.size() < 1) throw InvalidArgument("entropy_loss: empty weight means");
  double sum = 0.0;
  for (Eigen::Index j = 0; j < means.size(); ++j) {
    const double m = means(j);
    if (!(m >= 0.0 && m <= 1.0)) throw InvalidArgument("entropy_loss: means must lie in [0, 1]");
    if (m > 0.0) sum += m * std::log(m);
  }
  return sum / static_cast<double>(means.size());
}

/// Mean part usage over particles and the given times.
inline Vector mean_weights(const ReconModel& model, const std::vector<double>& times) {
  Vector m = Vector::Zero(model.k);
  for (double t : times) m += eval_weights(model, t).w.colwise().sum().transpose();
  return m / (static_cast<double>(model.size()) * static_cast<double>(times.size()));
}

inline LossBreakdown total_loss(const ReconModel& model, const PriorClass& prior,
                                const std::vector<Observation>& obs, const LossConfig& cfg,
                                const std::vector<double>& times) {
  cfg.validate();
  detail::check_model_prior(model, prior);
  detail::check_times(times);
  LossBreakdown l;
  l.rec = reconstruction_loss(model, obs);
  l.rematch = cfg.lambda > 0.0 ? rematching_loss(model, prior, times) : 0.0;
  l.entropy = prior.adaptive() ? entropy_loss(mean_weights(model, times)) : 0.0;
  l.total = cfg.rec_weight * l.rec + cfg.lambda * l.rematch + cfg.entropy_weight * l.entropy;
  return l;
}

/// Times drawn from cfg.seed.
inline LossBreakdown total_loss(const ReconModel& model, const PriorClass& prior,
                                const std::vector<Observation>& obs, const LossConfig& cfg) {
  return total_loss(model, prior, obs, cfg, draw_times(cfg.seed, cfg.times_per_step));
}

/// Analytic gradient of total_loss at the same times. Returns the loss too.
inline ModelGradient grad_total_loss(const ReconModel& model, const PriorClass& prior,
                                     const std::vector<Observation>& obs,
                                     const LossConfig& cfg, const std::vector<double>& times,
                                     LossBreakdown* value = nullptr) {
  cfg.validate();
  detail::check_model_prior(model, prior);
  detail::check_times(times);
  detail::check_observations(model, obs);
  ModelGradient g = ModelGradient::zeros_like(model);
  LossBreakdown l;

  const double n = static_cast<double>(model.size());
  const double rec_scale = 1.0 / (n * static_cast<double>(obs.size()));
  for (const auto& o : obs) {
    const Matrix err = eval_trajectories(model, o.time).positions - o.positions;
    l.rec += err.squaredNorm();
    detail::chain_trajectory(model, o.time, 2.0 * err, Matrix::Zero(err.rows(), err.cols()),
                             cfg.rec_weight * rec_scale, g);
  }
  l.rec *= rec_scale;

  const double tcount = static_cast<double>(times.size());
  if (cfg.lambda > 0.0) {
    for (double t : times) {
      const detail::SampleTerms terms = detail::rematch_terms(model, prior, t);
      l.rematch += terms.rho;
      const double scale = cfg.lambda / tcount;
      detail::chain_trajectory(model, t, terms.d_pos, terms.d_vel, scale, g);
      if (prior.adaptive())
        detail::chain_weights(model, t, eval_weights(model, t).w, terms.d_w, scale, g);
    }
    l.rematch /= tcount;
  }

  if (prior.adaptive()) {
    const Vector m = mean_weights(model, times);
    l.entropy = entropy_loss(m);
    if (cfg.entropy_weight != 0.0) {
      // dE/dm_j = (ln m_j + 1) / k, dm_j/dw_ij(t) = 1 / (n |T|)
      const Vector dm = (m.array().log() + 1.0) / static_cast<double>(model.k);
      const double scale = cfg.entropy_weight / (n * tcount);
      for (double t : times) {
        const Matrix w = eval_weights(model, t).w;
        const Matrix d_w = Matrix::Ones(w.rows(), 1) * dm.transpose();
        detail::chain_weights(model, t, w, d_w, scale, g);
      }
    }
  }
  l.total = cfg.rec_weight * l.rec + cfg.lambda * l.rematch + cfg.entropy_weight * l.entropy;
  if (value) *value = l;
  return g;
}

inline ModelGradient grad_total_loss(const ReconModel& model, const PriorClass& prior,
                                     const std::vector<Observation>& obs,
                                     const LossConfig& cfg, LossBreakdown* value = nullptr) {
  return grad_total_loss(model, prior, obs, cfg, draw_times(cfg.seed, cfg.times_per_step),
                         value);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with bias correction; one instance per parameter group.
class Adam {
 public:
  explicit Adam(Eigen::Index size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(Vector::Zero(size)), v_(Vector::Zero(size)), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(Eigen::Ref<Vector> p, const Vector& g, double lr) {
    if (g.size() != m_.size() || p.size() != m_.size())
      throw InvalidArgument("Adam::step: size mismatch");
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * g;
    v_ = b2_ * v_ + (1.0 - b2_) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    p.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

  long steps() const { return t_; }

 private:
  Vector m_, v_;
  double b1_, b2_, eps_;
  long t_ = 0;
};

struct TrainConfig {
  int iterations = 2000;
  double lr_theta = 1e-2;   ///< base positions and trajectory coefficients
  double lr_logits = 1e-2;
  double decay_at = 0.6;    ///< fraction of iterations after which lr_theta *= decay
  double decay = 0.1;
  double warmup = 0.05;     ///< fraction of iterations trained with lambda = 0
  /// Adaptive classes: after warm-up, candidate logits (the current ones plus
  /// restarts - 1 spatial partitions around random seed particles) are each
  /// refined for `restart_steps` logit-only steps; the candidate with the
  /// lowest matching bound is kept.
  int restarts = 8;
  int restart_steps = 100;
  double restart_logit_scale = 3.0;

  void validate() const {
    if (iterations < 0) throw InvalidArgument("TrainConfig: iterations must be >= 0");
    if (!(lr_theta > 0.0) || !(lr_logits > 0.0))
      throw InvalidArgument("TrainConfig: learning rates must be positive");
    if (!(decay_at >= 0.0 && decay_at <= 1.0) || !(warmup >= 0.0 && warmup <= 1.0))
      throw InvalidArgument("TrainConfig: decay_at and warmup must lie in [0, 1]");
    if (!(decay > 0.0)) throw InvalidArgument("TrainConfig: decay must be positive");
    if (restarts < 1 || restart_steps < 0 || !(restart_logit_scale >= 0.0))
      throw InvalidArgument("TrainConfig: invalid restart settings");
  }
};

namespace detail {

// Logit-only descent of lambda * L_rm + entropy_weight * L_ent with the
// trajectories fixed; returns the bound on a fixed 11-point time grid.
inline double refine_logits(ReconModel& model, const PriorClass& prior,
                            const std::vector<Observation>& obs, const LossConfig& loss,
                            const TrainConfig& train, Rng& rng) {
  Adam adam(model.logits.size());
  for (int s = 0; s < train.restart_steps; ++s) {
    const ModelGradient g =
        grad_total_loss(model, prior, obs, loss, draw_times(rng, loss.times_per_step));
    Vector p = model.flat();
    adam.step(p.tail(model.logits.size()), g.flat().tail(model.logits.size()),
              train.lr_logits);
    model.set_flat(p);
  }
  std::vector<double> grid(11);
  for (int i = 0; i <= 10; ++i) grid[static_cast<std::size_t>(i)] = i / 10.0;
  return loss.lambda * rematching_loss(model, prior, grid) +
         loss.entropy_weight * entropy_loss(mean_weights(model, grid));
}

// Time-constant logits from k distinct random seed particles:
//   l_ij = -scale * |x_i - x_seed(j)|^2 / spread,
// spread = mean squared distance of the base positions to their centroid.
inline Matrix seeded_logits(const ReconModel& model, double scale, Rng& rng) {
  const Eigen::Index n = model.size();
  std::vector<Eigen::Index> seeds;
  while (static_cast<int>(seeds.size()) < std::min<Eigen::Index>(model.k, n)) {
    const auto i = static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(n));
    if (std::find(seeds.begin(), seeds.end(), i) == seeds.end()) seeds.push_back(i);
  }
  const Vector centroid = model.base.colwise().mean().transpose();
  const double spread =
      std::max((model.base.rowwise() - centroid.transpose()).rowwise().squaredNorm().mean(),
               1e-300);
  Matrix logits = Matrix::Zero(n, model.logits.cols());
  for (std::size_t j = 0; j < seeds.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j) * model.logit_width();
    logits.col(col) = -scale / spread *
                      (model.base.rowwise() - model.base.row(seeds[j])).rowwise().squaredNorm();
  }
  return logits;
}

inline void restart_logits(ReconModel& model, const PriorClass& prior,
                           const std::vector<Observation>& obs, const LossConfig& loss,
                           const TrainConfig& train) {
  Rng rng(loss.seed ^ 0x726573746172ULL);
  Matrix best_logits = model.logits;
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < train.restarts; ++r) {
    ReconModel candidate = model;
    if (r > 0) candidate.logits = seeded_logits(model, train.restart_logit_scale, rng);
    const double score = refine_logits(candidate, prior, obs, loss, train, rng);
    if (score < best) {
      best = score;
      best_logits = candidate.logits;
    }
  }
  model.logits = best_logits;
}

}  // namespace detail

/// Runs `train.iterations` Adam steps in place. Iteration it uses times drawn
/// from a stream seeded by loss.seed and records the loss it descended on.
/// During warm-up lambda and entropy_weight are 0 and the logits are frozen.
/// A non-finite loss or update throws NumericalDivergence whose index equals
/// history.size(); `history` keeps the iterations completed so far.
inline void train(ReconModel& model, const PriorClass& prior, const std::vector<Observation>& obs,
                  const LossConfig& loss, const TrainConfig& train,
                  std::vector<LossBreakdown>& history) {
  loss.validate();
  train.validate();
  detail::check_model_prior(model, prior);
  detail::check_observations(model, obs);
  history.clear();
  history.reserve(static_cast<std::size_t>(train.iterations));

  const Eigen::Index n_traj = model.base.size() + model.theta.size();
  Adam adam_traj(n_traj);
  Adam adam_logits(model.logits.size());
  Rng rng(loss.seed);
  const int warmup_end = static_cast<int>(std::floor(train.warmup * train.iterations));
  const int decay_start = static_cast<int>(std::floor(train.decay_at * train.iterations));

  for (int it = 0; it < train.iterations; ++it) {
    if (it == warmup_end && prior.adaptive() && loss.lambda > 0.0 &&
        (train.restarts > 1 || train.restart_steps > 0))
      detail::restart_logits(model, prior, obs, loss, train);
    const std::vector<double> times = draw_times(rng, loss.times_per_step);
    LossConfig eff = loss;
    const bool warm = it < warmup_end;
    if (warm) {
      eff.lambda = 0.0;
      eff.entropy_weight = 0.0;
    }
    LossBreakdown value;
    Vector gflat;
    try {
      gflat = grad_total_loss(model, prior, obs, eff, times, &value).flat();
    } catch (const TimedSolveError& e) {
      // A solve that fails on overflowing trajectories is divergence, not a solver fault.
      const TrajectorySample s = eval_trajectories(model, e.time());
      if (std::isfinite(s.positions.squaredNorm() + s.velocities.squaredNorm())) throw;
      throw NumericalDivergence("trajectories overflowed at iteration " + std::to_string(it),
                                static_cast<std::size_t>(it));
    }
    if (!std::isfinite(value.total) || !gflat.allFinite())
      throw NumericalDivergence("training loss became non-finite at iteration " +
                                    std::to_string(it),
                                static_cast<std::size_t>(it));
    history.push_back(value);

    Vector p = model.flat();
    const double lr = it >= decay_start ? train.lr_theta * train.decay : train.lr_theta;
    adam_traj.step(p.head(n_traj), gflat.head(n_traj), lr);
    if (!warm && prior.adaptive())
      adam_logits.step(p.tail(model.logits.size()), gflat.tail(model.logits.size()),
                       train.lr_logits);
    if (!p.allFinite())
      throw NumericalDivergence("parameters became non-finite after iteration " +
                                    std::to_string(it),
                                static_cast<std::size_t>(it + 1));
    model.set_flat(p);
  }
}

inline std::vector<LossBreakdown> train(ReconModel& model, const PriorClass& prior,
                                        const std::vector<Observation>& obs,
                                        const LossConfig& loss, const TrainConfig& train_cfg) {
  std::vector<LossBreakdown> history;
  train(model, prior, obs, loss, train_cfg, history);
  return history;
}

/// Header: iteration,rec,rematch,entropy,total.
inline void write_history_csv(std::ostream& os, const std::vector<LossBreakdown>& history) {
  os << "iteration,rec,rematch,entropy,total\n";
  os.precision(17);
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    os << i << ',' << h.rec << ',' << h.rematch << ',' << h.entropy << ',' << h.total << '\n';
  }
}

}  // namespace rematch
