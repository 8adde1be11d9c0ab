#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "avrm/model.hpp"
#include "avrm/records.hpp"

namespace avrm {

// The four reward models compared in the experiments.
//   kBtSoft / kBtHard: Bradley-Terry, soft or majority labels, no variance head
//   kGaussian:         Gaussian preference loss only
//   kTwoAnchor:        Gaussian preference loss + lambda * anchor loss
enum class ModelKind { kBtSoft, kBtHard, kGaussian, kTwoAnchor };

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view name);

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 256;
  double weight_decay = 1e-6;
  int patience = 10;
  int max_epochs = 200;
  double lambda = 0.005;
  std::vector<double> lambda_grid{0.001, 0.005, 0.01};
  std::uint64_t seed = 0;
  // Optimizer steps between validation passes; 0 means a quarter epoch.
  int eval_every = 0;
  int hidden = 64;
  // Variance head for the Gaussian kinds; Bradley-Terry models have none.
  VarianceParam variance = VarianceParam::kExp;
};

// Throws ConfigError for non-positive sizes or rates, or a negative lambda.
void validate(const TrainConfig& cfg);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;

  AdamState() = default;
  explicit AdamState(const ModelShape& shape) : m(shape.size(), 0.0), v(shape.size(), 0.0) {}
};

// One Adam update at step t >= 1 (beta1 0.9, beta2 0.999, eps 1e-8) with the
// weight decay added to the gradient. Throws UsageError when the gradient or
// the state does not match the parameters, or t < 1.
void adam_step(ModelParams& params, const GradientBuffer& grad, AdamState& state,
               const TrainConfig& cfg, std::int64_t t);

struct TrainInputs {
  std::span<const ComparisonRecord> pref_train;
  std::span<const AnchorRecord> anchor_train;  // required for kTwoAnchor only
  std::span<const ComparisonRecord> pref_val;
  std::span<const AnchorRecord> anchor_val;  // optional, reported only
  Thresholds thresholds;
};

struct EvalRecord {
  std::int64_t step = 0;
  double train_loss = 0.0;  // mean minibatch objective since the previous record
  double val_pref_loss = 0.0;
  double val_anchor_loss = 0.0;  // NaN without validation anchors
};

struct TrainHistory {
  std::vector<EvalRecord> evals;
  std::int64_t best_step = 0;
  double best_val_pref_loss = 0.0;
  double lambda = 0.0;
};

struct TrainResult {
  ModelParams params;  // checkpoint with the lowest validation preference loss
  TrainHistory history;
};

// Mini-batch training with early stopping on the validation preference loss
// (the kind's own preference objective). Each epoch reshuffles the preference
// set; with kTwoAnchor every step also takes one batch from the unmasked
// anchor records, which are reshuffled whenever exhausted.
// Throws ConfigError when kTwoAnchor has no unmasked anchors, and UsageError
// for an empty training or validation split.
TrainResult train(ModelKind kind, const TrainInputs& data, const TrainConfig& cfg);

struct GridSearchResult {
  double best_lambda = 0.0;
  TrainResult best;
  std::vector<TrainHistory> runs;  // one per grid entry, in grid order
};

// Trains one two-anchor model per lambda in cfg.lambda_grid and keeps the one
// with the lowest best validation preference loss; ties go to the smaller
// lambda. Arms run concurrently when OpenMP threads are available.
// Throws ConfigError for an empty grid.
GridSearchResult grid_search_lambda(const TrainInputs& data, const TrainConfig& cfg);

// CSV with columns step,split,loss: one "train" row and one or two
// validation rows ("val_pref", "val_anchor") per evaluation.
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace avrm
