#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "avrm/evaluate.hpp"
#include "avrm/synthetic.hpp"
#include "avrm/training.hpp"

namespace avrm {

struct SimulationConfig {
  int d = 10;
  double s_min = 0.01;
  double s_max = 3.0;
  std::size_t n_train = 10000;
  std::size_t n_val = 2000;
  std::size_t n_test = 2000;
  int votes_k = 10;
  // Thresholds default to these quantiles of a pilot draw on the training
  // responses; `thresholds` overrides them.
  double anchor_quantile = 0.25;
  std::optional<Thresholds> thresholds;
};

// One seed's synthetic world. Anchors label both responses of every training
// comparison. The test split has its soft_label = 0.5 records removed.
struct SimulationData {
  GroundTruthParams truth;
  Thresholds thresholds;
  std::vector<ComparisonRecord> train;
  std::vector<ComparisonRecord> val;
  std::vector<ComparisonRecord> test;
  std::vector<AnchorRecord> anchors;
  std::size_t test_ties_removed = 0;
};

SimulationData simulate(const SimulationConfig& cfg, std::uint64_t seed);

struct MethodRun {
  ModelKind kind = ModelKind::kGaussian;
  double lambda = 0.0;  // selected lambda for two_anchor, else 0
  ModelParams params;
  TrainHistory history;
  std::vector<TrainHistory> grid_runs;  // two_anchor grid arms
};

// Trains one method on the given splits. two_anchor searches
// cfg.lambda_grid (a single entry trains directly).
MethodRun train_method(ModelKind kind, std::span<const ComparisonRecord> train,
                       std::span<const ComparisonRecord> val, std::span<const AnchorRecord> anchors,
                       const Thresholds& thresholds, const TrainConfig& cfg);

// Display name used in reports: BT-soft, BT-hard, Gaussian, Two-anchor.
std::string method_label(ModelKind kind);

// One tidy observation: metric value for a method at a knob setting and seed.
struct ResultRow {
  std::string method;
  std::string knob_name;  // "none", "fraction", "rho", "n_train", "n"
  double knob = 0.0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

// Appends one row per available metric of `m`.
void append_metric_rows(std::vector<ResultRow>& rows, const std::string& method,
                        const std::string& knob_name, double knob, std::uint64_t seed,
                        const MetricsReport& m);

// For every metric: <metric>.csv with columns method,knob_name,knob,seed,value
// and <metric>_summary.csv with method,knob_name,knob,n,mean,std (sample std,
// 0 for a single seed). Rows keep their input order, summaries follow first
// appearance, so re-emitting the same results rewrites identical files.
// Returns the written paths. Throws UsageError for no rows, IoError when the
// directory cannot be written.
std::vector<std::filesystem::path> emit_reports(const std::vector<ResultRow>& rows,
                                                const std::filesystem::path& outdir);

enum class Mode { kSimulate, kTrain, kAblateFraction, kAblateNoise, kBon, kGradcheck, kRecover };

std::string_view to_string(Mode mode);
Mode mode_from_string(std::string_view name);

struct DataPaths {
  std::filesystem::path pref_train;
  std::filesystem::path pref_val;
  std::filesystem::path pref_test;
  std::filesystem::path anchors;  // anchor JSONL, or
  std::filesystem::path scores;   // score JSONL turned into anchors
  double score_quantile = 0.25;
  std::optional<Thresholds> thresholds;  // required with an anchor file
};

struct BonConfig {
  std::size_t prompts = 200;
  std::size_t candidates = 64;
  std::vector<int> n_grid{1, 2, 4, 8, 16, 32, 64};
  std::vector<double> quantiles{0.1, 0.25, 0.5};
};

struct GradcheckConfig {
  int instances = 20;
  double tolerance = 1e-4;
  double step = 1e-5;
};

struct RecoverConfig {
  std::size_t samples = 1000;
  std::filesystem::path input;  // optional JSONL of {q1, q2}
  Thresholds thresholds{-1.0, 1.0};
};

struct ExperimentConfig {
  Mode mode = Mode::kSimulate;
  std::vector<std::uint64_t> seeds;  // default 0..19
  int workers = 1;
  std::filesystem::path out = "runs";
  std::vector<ModelKind> methods{ModelKind::kBtSoft, ModelKind::kBtHard, ModelKind::kGaussian,
                                 ModelKind::kTwoAnchor};
  SimulationConfig simulation;
  TrainConfig train;
  std::vector<double> fraction_grid{0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
  std::vector<double> noise_grid{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4};
  BonConfig bon;
  GradcheckConfig gradcheck;
  RecoverConfig recover;
  DataPaths data;
  bool save_checkpoints = true;

  ExperimentConfig();
};

// Reads every known key, leaving absent ones at their defaults. Unknown keys,
// wrong types and invalid values throw ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
// Throws ConfigError when mode-required fields are missing or values invalid.
void validate(const ExperimentConfig& cfg);

struct SeedStatus {
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  std::string started;
  std::string finished;
};

struct RunManifest {
  nlohmann::json config;
  std::string version;
  std::string started;
  std::string finished;
  std::vector<SeedStatus> seeds;
  std::vector<std::filesystem::path> files;  // relative to the output directory
  // gradcheck: the worst relative error and whether it met the tolerance.
  std::optional<double> gradcheck_max_error;
  bool passed = true;
};

// Executes the configured mode, writing every artifact and manifest.json
// under cfg.out. A seed that fails is recorded in the manifest and the other
// seeds still complete. Throws ConfigError before any work on invalid input.
RunManifest run(const ExperimentConfig& cfg);

struct GradcheckReport {
  double max_relative_error = 0.0;
  int instances = 0;
  int checks = 0;
};

// Central finite differences of evaluate_loss against loss_and_grad on small
// random models, for every loss and variance head.
GradcheckReport gradcheck(const GradcheckConfig& cfg, std::uint64_t seed);

inline constexpr const char* kVersion = "0.1.0";

}  // namespace avrm
