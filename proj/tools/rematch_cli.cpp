// Experiment runner.
//
//   rematch run      --config <path> [--out <dir>]
//   rematch compare  --config <path> [--out <dir>]
//   rematch scene    --kind <k> --n <n> --seed <s> --out <path>
//   rematch validate --config <path>
//
// Exit codes: 0 success, 1 I/O or other failure, 2 config error,
// 3 numerical divergence or singular solve.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "rematch/experiment.hpp"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

rematch::ExperimentConfig load(const std::string& path, const std::string& out) {
  rematch::ExperimentConfig c = rematch::load_config(path);
  if (!out.empty()) c.output_dir = out;
  return c;
}

void print_metrics(const std::string& label, const rematch::MetricsReport& m) {
  std::cout << label << "holdout_mse=" << m.holdout_mse << " train_mse=" << m.train_mse
            << " rematch_final=" << m.rematch_final;
  if (m.part_accuracy) std::cout << " part_accuracy=" << *m.part_accuracy;
  std::cout << " train_seconds=" << m.runtimes.train << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Velocity-prior matching experiments on synthetic scenes"};
  app.require_subcommand(1);

  std::string config, out, kind;
  long long n = 40;
  std::uint64_t seed = 1;

  auto* run = app.add_subcommand("run", "train one model and write its artifacts");
  run->add_option("--config", config, "experiment config (JSON)")->required();
  run->add_option("--out", out, "override output_dir");

  auto* cmp = app.add_subcommand("compare", "paired runs: configured lambda vs lambda = 0");
  cmp->add_option("--config", config, "experiment config (JSON)")->required();
  cmp->add_option("--out", out, "override output_dir");

  auto* scn = app.add_subcommand("scene", "write a synthetic scene as JSON");
  scn->add_option("--kind", kind, "scene kind")->required();
  scn->add_option("--n", n, "particle count");
  scn->add_option("--seed", seed, "random seed");
  scn->add_option("--out", out, "output path")->required();

  auto* val = app.add_subcommand("validate", "check a config without running it");
  val->add_option("--config", config, "experiment config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      print_metrics("", rematch::run_experiment(load(config, out)));
    } else if (*cmp) {
      const auto r = rematch::compare(load(config, out));
      print_metrics("prior:    ", r.prior);
      print_metrics("baseline: ", r.baseline);
    } else if (*scn) {
      rematch::Scene s;
      try {
        s = rematch::make_scene(kind, n, seed);
      } catch (const rematch::InvalidArgument& e) {
        throw rematch::ConfigError(e.what());
      }
      rematch::write_json_file(out, rematch::to_json(s));
    } else if (*val) {
      load(config, "");
      std::cout << "ok\n";
    }
  } catch (const rematch::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const rematch::NumericalDivergence& e) {
    std::cerr << "numerical divergence: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const rematch::SingularSystem& e) {
    std::cerr << "singular system: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const rematch::TimedSolveError& e) {
    std::cerr << "solve failed: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return 0;
}
