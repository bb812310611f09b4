#pragma once

// Synthetic-scene experiments: config parsing, observation generation,
// training, metrics and artifact persistence.
//
// Files written to output_dir:
//   config.json        fully resolved config (defaults filled in)
//   scene.json         ground-truth scene
//   observations.csv   noisy observed positions
//   history.csv        per-iteration loss breakdown
//   trajectories.csv   model vs ground truth on a dense time grid
//   checkpoint.json    final model
//   metrics.json       MetricsReport without runtimes (bit-reproducible)
//   timings.json       wall-clock seconds per phase

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rematch/flow_lab.hpp"
#include "rematch/io.hpp"
#include "rematch/random.hpp"
#include "rematch/recon_model.hpp"
#include "rematch/rematch_train.hpp"
#include "rematch/velocity_priors.hpp"

namespace rematch {

struct ExperimentConfig {
  std::string scene_kind = "two-rigid";
  Eigen::Index n = 40;
  std::uint64_t seed = 1;

  PriorClass prior = PriorClass::piecewise_rigid(2);
  LossConfig loss;  ///< loss.seed defaults to `seed`
  TrainConfig train;
  TimeBasis basis;
  int weight_order = 2;
  double init_logit_scale = 0.1;

  std::vector<double> observation_times = default_observation_times();
  std::vector<double> holdout_times = {0.1, 0.3, 0.5, 0.7, 0.9};
  /// Observation noise sigma = noise_scale * scene diameter, unless
  /// noise_sigma is given.
  double noise_scale = 0.002;
  std::optional<double> noise_sigma;

  std::string output_dir = "rematch-run";

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (std::find(scene_kinds().begin(), scene_kinds().end(), scene_kind) == scene_kinds().end())
      fail("unknown scene kind '" + scene_kind + "'");
    if (n < 4) fail("scene.n must be >= 4");
    try {
      prior.validate();
      loss.validate();
      train.validate();
    } catch (const InvalidArgument& e) {
      fail(e.what());
    }
    if (basis.order < 1) fail("model.order must be >= 1");
    if (weight_order < 0) fail("model.weight_order must be >= 0");
    if (!(init_logit_scale >= 0.0)) fail("model.init_logit_scale must be >= 0");
    if (observation_times.empty()) fail("observation_times must be nonempty");
    for (const auto* times : {&observation_times, &holdout_times})
      for (double t : *times)
        if (!(t >= 0.0 && t <= 1.0)) fail("all times must lie in [0, 1]");
    for (std::size_t i = 1; i < observation_times.size(); ++i)
      if (!(observation_times[i] > observation_times[i - 1]))
        fail("observation_times must be strictly increasing");
    for (double h : holdout_times)
      if (std::find(observation_times.begin(), observation_times.end(), h) !=
          observation_times.end())
        fail("holdout_times and observation_times must be disjoint");
    if (!(noise_scale >= 0.0)) fail("noise.scale must be >= 0");
    if (noise_sigma && !(*noise_sigma >= 0.0)) fail("noise.sigma must be >= 0");
    if (output_dir.empty()) fail("output_dir must be nonempty");
  }
};

// ---------------------------------------------------------------------------
// Config JSON
// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown_keys(const Json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline PriorClass prior_from_json(const Json& j) {
  reject_unknown_keys(j, {"class", "parts", "directions", "frequencies"}, "prior");
  const PriorTag tag = parse_prior_tag(j.at("class").get<std::string>());
  Matrix v;
  if (j.contains("directions")) v = matrix_from_json(j.at("directions")).transpose();
  const int parts = j.value("parts", tag == PriorTag::PiecewiseRigid ||
                                             tag == PriorTag::DirectionalPlusRigid
                                         ? 2
                                         : 1);
  switch (tag) {
    case PriorTag::Directional: return PriorClass::directional(v);
    case PriorTag::Rigid: return PriorClass::rigid();
    case PriorTag::DivFree:
      return PriorClass::divfree(j.at("frequencies").get<std::vector<Frequency>>());
    case PriorTag::PiecewiseRigid: return PriorClass::piecewise_rigid(parts);
    case PriorTag::DirectionalPlusRigid: return PriorClass::directional_plus_rigid(v, parts);
  }
  throw ConfigError("unknown prior class");
}

inline Json prior_to_json(const PriorClass& p) {
  Json j = {{"class", to_string(p.tag)}, {"parts", p.parts}};
  if (p.directions.size() > 0) j["directions"] = to_json(Matrix(p.directions.transpose()));
  if (!p.frequencies.empty()) j["frequencies"] = p.frequencies;
  return j;
}

}  // namespace detail

/// Parses a config; any malformed or inconsistent entry raises ConfigError.
inline ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  try {
    detail::reject_unknown_keys(j, {"scene", "prior", "model", "loss", "train",
                                    "observation_times", "holdout_times", "noise",
                                    "output_dir"},
                                "config");
    const Json& s = j.at("scene");
    detail::reject_unknown_keys(s, {"kind", "n", "seed"}, "scene");
    c.scene_kind = s.at("kind").get<std::string>();
    detail::read_opt(s, "n", c.n);
    detail::read_opt(s, "seed", c.seed);
    c.loss.seed = c.seed;

    if (j.contains("prior")) c.prior = detail::prior_from_json(j.at("prior"));
    if (j.contains("model")) {
      const Json& m = j.at("model");
      detail::reject_unknown_keys(m, {"basis", "order", "weight_order", "init_logit_scale"},
                                  "model");
      if (m.contains("basis"))
        c.basis.kind = parse_time_basis_kind(m.at("basis").get<std::string>());
      detail::read_opt(m, "order", c.basis.order);
      detail::read_opt(m, "weight_order", c.weight_order);
      detail::read_opt(m, "init_logit_scale", c.init_logit_scale);
    }
    if (j.contains("loss")) {
      const Json& l = j.at("loss");
      detail::reject_unknown_keys(
          l, {"lambda", "entropy_weight", "times_per_step", "rec_weight", "seed"}, "loss");
      detail::read_opt(l, "lambda", c.loss.lambda);
      detail::read_opt(l, "entropy_weight", c.loss.entropy_weight);
      detail::read_opt(l, "times_per_step", c.loss.times_per_step);
      detail::read_opt(l, "rec_weight", c.loss.rec_weight);
      detail::read_opt(l, "seed", c.loss.seed);
    }
    if (j.contains("train")) {
      const Json& t = j.at("train");
      detail::reject_unknown_keys(
          t,
          {"iterations", "lr_theta", "lr_logits", "decay_at", "decay", "warmup", "restarts",
           "restart_steps", "restart_logit_scale"},
          "train");
      detail::read_opt(t, "iterations", c.train.iterations);
      detail::read_opt(t, "lr_theta", c.train.lr_theta);
      detail::read_opt(t, "lr_logits", c.train.lr_logits);
      detail::read_opt(t, "decay_at", c.train.decay_at);
      detail::read_opt(t, "decay", c.train.decay);
      detail::read_opt(t, "warmup", c.train.warmup);
      detail::read_opt(t, "restarts", c.train.restarts);
      detail::read_opt(t, "restart_steps", c.train.restart_steps);
      detail::read_opt(t, "restart_logit_scale", c.train.restart_logit_scale);
    }
    detail::read_opt(j, "observation_times", c.observation_times);
    detail::read_opt(j, "holdout_times", c.holdout_times);
    if (j.contains("noise")) {
      const Json& nz = j.at("noise");
      detail::reject_unknown_keys(nz, {"scale", "sigma"}, "noise");
      detail::read_opt(nz, "scale", c.noise_scale);
      if (nz.contains("sigma") && !nz.at("sigma").is_null())
        c.noise_sigma = nz.at("sigma").get<double>();
    }
    detail::read_opt(j, "output_dir", c.output_dir);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& p) {
  Json j;
  try {
    j = read_json_file(p);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config '" + p.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

inline Json to_json(const ExperimentConfig& c) {
  Json noise = {{"scale", c.noise_scale}};
  noise["sigma"] = c.noise_sigma ? Json(*c.noise_sigma) : Json(nullptr);
  return {{"scene", {{"kind", c.scene_kind}, {"n", c.n}, {"seed", c.seed}}},
          {"prior", detail::prior_to_json(c.prior)},
          {"model",
           {{"basis", to_string(c.basis.kind)},
            {"order", c.basis.order},
            {"weight_order", c.weight_order},
            {"init_logit_scale", c.init_logit_scale}}},
          {"loss",
           {{"lambda", c.loss.lambda},
            {"entropy_weight", c.loss.entropy_weight},
            {"times_per_step", c.loss.times_per_step},
            {"rec_weight", c.loss.rec_weight},
            {"seed", c.loss.seed}}},
          {"train",
           {{"iterations", c.train.iterations},
            {"lr_theta", c.train.lr_theta},
            {"lr_logits", c.train.lr_logits},
            {"decay_at", c.train.decay_at},
            {"decay", c.train.decay},
            {"warmup", c.train.warmup},
            {"restarts", c.train.restarts},
            {"restart_steps", c.train.restart_steps},
            {"restart_logit_scale", c.train.restart_logit_scale}}},
          {"observation_times", c.observation_times},
          {"holdout_times", c.holdout_times},
          {"noise", noise},
          {"output_dir", c.output_dir}};
}

// ---------------------------------------------------------------------------
// Experiment pieces
// ---------------------------------------------------------------------------

/// Bounding-box diagonal of the initial positions.
inline double scene_diameter(const Scene& s) {
  return (s.initial_positions.colwise().maxCoeff() - s.initial_positions.colwise().minCoeff())
      .norm();
}

inline double noise_sigma(const ExperimentConfig& c, const Scene& s) {
  return c.noise_sigma ? *c.noise_sigma : c.noise_scale * scene_diameter(s);
}

/// Ground-truth positions at each time plus N(0, sigma^2) noise per coordinate.
inline std::vector<Observation> make_observations(const Scene& scene,
                                                  const std::vector<double>& times,
                                                  double sigma, std::uint64_t seed) {
  Rng rng(seed ^ 0x6f62736e6f697365ULL);
  std::vector<Observation> obs;
  for (double t : times) {
    Observation o{t, trajectory_sample(scene, t).positions};
    for (Eigen::Index i = 0; i < o.positions.rows(); ++i)
      for (Eigen::Index c = 0; c < o.positions.cols(); ++c) o.positions(i, c) += rng.normal(0.0, sigma);
    obs.push_back(std::move(o));
  }
  return obs;
}

/// theta = 0, base at the earliest observation, small random logits.
inline ReconModel initial_model(const ExperimentConfig& c, const std::vector<Observation>& obs) {
  const auto first = std::min_element(obs.begin(), obs.end(), [](const auto& a, const auto& b) {
    return a.time < b.time;
  });
  const int k = c.prior.part_count();
  ReconModel m = ReconModel::zeros(first->positions.rows(),
                                   static_cast<int>(first->positions.cols()), k, c.basis,
                                   c.weight_order);
  m.base = first->positions;
  if (k > 1) {
    Rng rng(c.seed ^ 0x6c6f67697473ULL);
    m.logits = c.init_logit_scale * rng.normal_matrix(m.logits.rows(), m.logits.cols());
  }
  return m;
}

/// Mean over times and particles of |gamma_model - gamma_true|^2.
inline double trajectory_mse(const ReconModel& model, const Scene& scene,
                             const std::vector<double>& times) {
  if (times.empty()) return 0.0;
  double sum = 0.0;
  for (double t : times)
    sum += (eval_trajectories(model, t).positions - trajectory_sample(scene, t).positions)
               .squaredNorm();
  return sum / (static_cast<double>(times.size()) * static_cast<double>(model.size()));
}

/// Fraction of particles whose argmax part matches the ground-truth label,
/// maximised over relabelings of the parts. Weights are averaged over `times`.
inline double part_accuracy(const ReconModel& model, const Scene& scene,
                            const std::vector<double>& times) {
  Matrix w = Matrix::Zero(model.size(), model.k);
  for (double t : times) w += eval_weights(model, t).w;
  const int size = std::max(model.k, scene.parts());
  Matrix confusion = Matrix::Zero(size, size);
  for (Eigen::Index i = 0; i < model.size(); ++i) {
    Eigen::Index j = 0;
    w.row(i).maxCoeff(&j);
    confusion(j, scene.part_labels[static_cast<std::size_t>(i)]) += 1.0;
  }
  std::vector<int> perm(static_cast<std::size_t>(size));
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  do {
    double hits = 0.0;
    for (int j = 0; j < size; ++j) hits += confusion(j, perm[static_cast<std::size_t>(j)]);
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(model.size());
}

inline std::vector<double> evaluation_grid(int intervals) {
  std::vector<double> t(static_cast<std::size_t>(intervals + 1));
  for (int i = 0; i <= intervals; ++i) t[static_cast<std::size_t>(i)] = static_cast<double>(i) / intervals;
  return t;
}

struct PhaseTimings {
  double setup = 0.0;
  double train = 0.0;
  double evaluate = 0.0;
  double write = 0.0;
};

struct MetricsReport {
  double holdout_mse = 0.0;
  double train_mse = 0.0;
  double rematch_final = 0.0;
  std::optional<double> part_accuracy;  ///< adaptive classes only
  PhaseTimings runtimes;
};

inline Json to_json(const MetricsReport& m) {
  return {{"holdout_mse", m.holdout_mse},
          {"train_mse", m.train_mse},
          {"rematch_final", m.rematch_final},
          {"part_accuracy", m.part_accuracy ? Json(*m.part_accuracy) : Json(nullptr)}};
}

inline Json to_json(const PhaseTimings& t) {
  return {{"setup", t.setup}, {"train", t.train}, {"evaluate", t.evaluate}, {"write", t.write}};
}

/// Header: time,split,particle,x0..,true_x0..,part. split is observed,
/// holdout or grid; part is the argmax weight (0 for single-part models).
inline void write_trajectories_csv(std::ostream& os, const ReconModel& model,
                                   const Scene& scene, const ExperimentConfig& c) {
  os.precision(17);
  const int d = model.dim();
  os << "time,split,particle";
  for (int k = 0; k < d; ++k) os << ",x" << k;
  for (int k = 0; k < d; ++k) os << ",true_x" << k;
  os << ",part\n";
  std::vector<double> times = evaluation_grid(20);
  times.insert(times.end(), c.observation_times.begin(), c.observation_times.end());
  times.insert(times.end(), c.holdout_times.begin(), c.holdout_times.end());
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  auto contains = [](const std::vector<double>& v, double t) {
    return std::find(v.begin(), v.end(), t) != v.end();
  };
  for (double t : times) {
    const char* split = contains(c.observation_times, t) ? "observed"
                        : contains(c.holdout_times, t)   ? "holdout"
                                                         : "grid";
    const Matrix pos = eval_trajectories(model, t).positions;
    const Matrix truth = trajectory_sample(scene, t).positions;
    const Matrix w = eval_weights(model, t).w;
    for (Eigen::Index i = 0; i < pos.rows(); ++i) {
      Eigen::Index part = 0;
      w.row(i).maxCoeff(&part);
      os << t << ',' << split << ',' << i;
      for (int k = 0; k < d; ++k) os << ',' << pos(i, k);
      for (int k = 0; k < d; ++k) os << ',' << truth(i, k);
      os << ',' << part << '\n';
    }
  }
}

namespace detail {

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

inline std::string csv_of_history(const std::vector<LossBreakdown>& h) {
  std::ostringstream os;
  write_history_csv(os, h);
  return os.str();
}

}  // namespace detail

/// Generates the scene and observations, trains and evaluates. Artifacts go
/// to c.output_dir. On divergence the partial history is written before the
/// error propagates.
inline MetricsReport run_experiment(const ExperimentConfig& c) {
  c.validate();
  detail::Stopwatch clock;
  MetricsReport report;
  const std::filesystem::path dir(c.output_dir);
  std::filesystem::create_directories(dir);

  const Scene scene = make_scene(c.scene_kind, c.n, c.seed);
  const std::vector<Observation> obs =
      make_observations(scene, c.observation_times, noise_sigma(c, scene), c.seed);
  ReconModel model = initial_model(c, obs);
  write_json_file(dir / "config.json", to_json(c));
  write_json_file(dir / "scene.json", to_json(scene));
  {
    std::ostringstream os;
    write_observations_csv(os, obs);
    write_text_file(dir / "observations.csv", os.str());
  }
  report.runtimes.setup = clock.lap();

  std::vector<LossBreakdown> history;
  try {
    train(model, c.prior, obs, c.loss, c.train, history);
  } catch (...) {
    write_text_file(dir / "history.csv", detail::csv_of_history(history));
    throw;
  }
  report.runtimes.train = clock.lap();

  const std::vector<double> grid = evaluation_grid(10);
  report.holdout_mse = trajectory_mse(model, scene, c.holdout_times);
  report.train_mse = reconstruction_loss(model, obs);
  report.rematch_final = rematching_loss(model, c.prior, grid);
  if (c.prior.adaptive()) report.part_accuracy = part_accuracy(model, scene, grid);
  report.runtimes.evaluate = clock.lap();

  write_text_file(dir / "history.csv", detail::csv_of_history(history));
  {
    std::ostringstream os;
    write_trajectories_csv(os, model, scene, c);
    write_text_file(dir / "trajectories.csv", os.str());
  }
  write_json_file(dir / "checkpoint.json", to_json(model));
  write_json_file(dir / "metrics.json", to_json(report));
  report.runtimes.write = clock.lap();
  write_json_file(dir / "timings.json", to_json(report.runtimes));
  return report;
}

struct ComparisonReport {
  MetricsReport prior;     ///< lambda as configured
  MetricsReport baseline;  ///< lambda = 0
};

/// prior minus baseline for every metric present in both.
inline Json delta_json(const ComparisonReport& r) {
  Json d = {{"holdout_mse", r.prior.holdout_mse - r.baseline.holdout_mse},
            {"train_mse", r.prior.train_mse - r.baseline.train_mse},
            {"rematch_final", r.prior.rematch_final - r.baseline.rematch_final}};
  d["part_accuracy"] = r.prior.part_accuracy && r.baseline.part_accuracy
                           ? Json(*r.prior.part_accuracy - *r.baseline.part_accuracy)
                           : Json(nullptr);
  return d;
}

/// Paired runs sharing scene, observations and seeds: `prior/` with the
/// configured lambda, `baseline/` with lambda = 0, plus delta.json.
inline ComparisonReport compare(const ExperimentConfig& c) {
  c.validate();
  const std::filesystem::path dir(c.output_dir);
  ExperimentConfig a = c;
  a.output_dir = (dir / "prior").string();
  ExperimentConfig b = c;
  b.output_dir = (dir / "baseline").string();
  b.loss.lambda = 0.0;
  ComparisonReport r{run_experiment(a), run_experiment(b)};
  write_json_file(dir / "delta.json", delta_json(r));
  return r;
}

}  // namespace rematch
