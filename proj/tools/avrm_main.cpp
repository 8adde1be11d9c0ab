// avrm: experiment runner for anchor-guided Gaussian reward models.
//
//   avrm --mode simulate --out runs/sim --seeds 0,1,2
//   avrm --config experiment.json --workers 4
//
// Exit codes: 0 success, 1 gradient check failed, 2 configuration error,
// 3 runtime error (including seeds that failed).

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "avrm/errors.hpp"
#include "avrm/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitGradcheck = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

avrm::ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw avrm::ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw avrm::ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return avrm::config_from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anchor-guided variance-aware reward modeling experiments"};
  std::string mode, config_path, out, variance;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> methods;
  std::vector<double> fraction_grid, noise_grid, quantiles;
  std::vector<int> n_grid;
  int workers = 0;
  double lambda = -1.0;

  app.add_option("--mode", mode,
                 "simulate | train | ablate_fraction | ablate_noise | bon | gradcheck | recover");
  app.add_option("--config", config_path, "JSON experiment config; flags override it")
      ->check(CLI::ExistingFile);
  app.add_option("--out", out, "Output directory");
  app.add_option("--seeds", seeds, "Seeds, e.g. 0,1,2")->delimiter(',');
  app.add_option("--workers", workers, "Seeds run concurrently")->check(CLI::PositiveNumber);
  app.add_option("--methods", methods, "bt_soft,bt_hard,gaussian,two_anchor")->delimiter(',');
  app.add_option("--lambda", lambda, "Fixed anchor weight (skips the grid search)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--fraction-grid", fraction_grid, "Anchor fractions")->delimiter(',');
  app.add_option("--noise-grid", noise_grid, "Anchor corruption rates")->delimiter(',');
  app.add_option("--quantile", quantiles, "Best-of-N reward quantiles")->delimiter(',');
  app.add_option("--n-grid", n_grid, "Best-of-N sizes, ascending")->delimiter(',');
  app.add_option("--variance-param", variance, "exp | softplus");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  avrm::RunManifest manifest;
  avrm::ExperimentConfig cfg;
  try {
    if (!config_path.empty()) cfg = load_config(config_path);
    if (!mode.empty()) cfg.mode = avrm::mode_from_string(mode);
    if (!out.empty()) cfg.out = out;
    if (!seeds.empty()) cfg.seeds = seeds;
    if (workers > 0) cfg.workers = workers;
    if (!methods.empty()) {
      cfg.methods.clear();
      for (const auto& m : methods) cfg.methods.push_back(avrm::model_kind_from_string(m));
    }
    if (lambda >= 0.0) {
      cfg.train.lambda = lambda;
      cfg.train.lambda_grid.clear();
    }
    if (!fraction_grid.empty()) cfg.fraction_grid = fraction_grid;
    if (!noise_grid.empty()) cfg.noise_grid = noise_grid;
    if (!quantiles.empty()) cfg.bon.quantiles = quantiles;
    if (!n_grid.empty()) cfg.bon.n_grid = n_grid;
    if (!variance.empty()) cfg.train.variance = avrm::variance_param_from_string(variance);
    manifest = avrm::run(cfg);
  } catch (const avrm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }

  for (const auto& s : manifest.seeds) {
    if (!s.ok) std::cerr << "seed " << s.seed << " failed: " << s.error << '\n';
  }
  if (manifest.gradcheck_max_error) {
    std::printf("gradcheck: max relative error %.3e (tolerance %.1e)\n",
                *manifest.gradcheck_max_error, cfg.gradcheck.tolerance);
  }
  std::printf("wrote %zu files to %s\n", manifest.files.size(), cfg.out.string().c_str());
  const bool seeds_ok = std::all_of(manifest.seeds.begin(), manifest.seeds.end(),
                                    [](const avrm::SeedStatus& s) { return s.ok; });
  if (!seeds_ok) return kExitRuntime;
  if (!manifest.passed) return kExitGradcheck;
  return kExitOk;
}
