#include "avrm/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <optional>
#include <string>

#include "avrm/errors.hpp"
#include "avrm/rng.hpp"

namespace avrm {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

constexpr ModelKind kAllKinds[] = {ModelKind::kBtSoft, ModelKind::kBtHard,
                                   ModelKind::kGaussian, ModelKind::kTwoAnchor};

LossKind pref_loss_kind(ModelKind kind) {
  switch (kind) {
    case ModelKind::kBtSoft: return LossKind::kBtSoft;
    case ModelKind::kBtHard: return LossKind::kBtHard;
    default: return LossKind::kGaussianSoft;
  }
}

VarianceParam variance_for(ModelKind kind, const TrainConfig& cfg) {
  if (kind == ModelKind::kBtSoft || kind == ModelKind::kBtHard) return VarianceParam::kNone;
  if (cfg.variance == VarianceParam::kNone) {
    throw ConfigError("Gaussian models need a variance head");
  }
  return cfg.variance;
}

// Cycles through a private copy of the records in reshuffled order.
template <typename Record>
class BatchStream {
 public:
  BatchStream(std::vector<Record> records, std::size_t batch, Rng rng)
      : records_(std::move(records)), batch_(std::min(batch, records_.size())),
        rng_(std::move(rng)) {
    reshuffle();
  }

  std::size_t size() const { return records_.size(); }

  // The next batch, or the tail of the current pass when `allow_partial`.
  std::span<const Record> next(bool allow_partial) {
    std::size_t left = records_.size() - cursor_;
    if (left == 0 || (!allow_partial && left < batch_)) {
      reshuffle();
      left = records_.size();
    }
    const std::size_t take = std::min(batch_, left);
    const auto out = std::span<const Record>(records_).subspan(cursor_, take);
    cursor_ += take;
    return out;
  }

 private:
  void reshuffle() {
    rng_.shuffle(std::span<Record>(records_));
    cursor_ = 0;
  }

  std::vector<Record> records_;
  std::size_t batch_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kBtSoft: return "bt_soft";
    case ModelKind::kBtHard: return "bt_hard";
    case ModelKind::kGaussian: return "gaussian";
    case ModelKind::kTwoAnchor: return "two_anchor";
  }
  return "unknown";
}

ModelKind model_kind_from_string(std::string_view name) {
  for (const ModelKind k : kAllKinds) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown model kind '" + std::string(name) + "'");
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (cfg.patience < 1) throw ConfigError("patience must be positive");
  if (cfg.max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (!(cfg.lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (cfg.eval_every < 0) throw ConfigError("eval_every must be non-negative");
  if (cfg.hidden < 1) throw ConfigError("hidden must be positive");
  for (const double l : cfg.lambda_grid) {
    if (!(l >= 0.0)) throw ConfigError("lambda_grid entries must be non-negative");
  }
}

void adam_step(ModelParams& params, const GradientBuffer& grad, AdamState& state,
               const TrainConfig& cfg, std::int64_t t) {
  const std::size_t n = params.values().size();
  if (grad.shape() != params.shape() || state.m.size() != n || state.v.size() != n) {
    throw UsageError("adam_step: gradient or optimizer state does not match parameters");
  }
  if (t < 1) throw UsageError("adam_step: step must be >= 1");
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
  auto w = params.values();
  const auto g = grad.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = g[i] + cfg.weight_decay * w[i];
    state.m[i] = kBeta1 * state.m[i] + (1.0 - kBeta1) * gi;
    state.v[i] = kBeta2 * state.v[i] + (1.0 - kBeta2) * gi * gi;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    w[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + kAdamEps);
  }
}

TrainResult train(ModelKind kind, const TrainInputs& data, const TrainConfig& cfg) {
  validate(cfg);
  if (data.pref_train.empty()) throw UsageError("train: empty preference training split");
  if (data.pref_val.empty()) throw UsageError("train: empty validation split");

  const bool joint = kind == ModelKind::kTwoAnchor;
  std::vector<AnchorRecord> anchor_pool;
  if (joint) {
    for (const auto& a : data.anchor_train) {
      if (!a.masked) anchor_pool.push_back(a);
    }
    if (anchor_pool.empty()) throw ConfigError("two_anchor training needs unmasked anchors");
    validate_thresholds(data.thresholds);
  }

  const LossSpec step_spec{joint ? LossKind::kJoint : pref_loss_kind(kind),
                           joint ? cfg.lambda : 0.0, data.thresholds};
  const LossSpec val_spec{pref_loss_kind(kind), 0.0, data.thresholds};
  const LossSpec val_anchor_spec{LossKind::kAnchor, 0.0, data.thresholds};
  const bool has_val_anchors =
      kind != ModelKind::kBtSoft && kind != ModelKind::kBtHard &&
      std::any_of(data.anchor_val.begin(), data.anchor_val.end(),
                  [](const AnchorRecord& a) { return !a.masked; });

  TrainResult result{init_params(cfg.seed, static_cast<int>(data.pref_train.front().x.size()),
                                 cfg.hidden, variance_for(kind, cfg)),
                     {}};
  ModelParams params = result.params;
  AdamState adam(params.shape());
  TrainHistory& hist = result.history;
  hist.lambda = step_spec.lambda;

  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  BatchStream<ComparisonRecord> prefs(
      std::vector<ComparisonRecord>(data.pref_train.begin(), data.pref_train.end()), batch,
      Rng(cfg.seed, "train_shuffle"));
  std::optional<BatchStream<AnchorRecord>> anchors;
  if (joint) anchors.emplace(std::move(anchor_pool), batch, Rng(cfg.seed, "anchor_shuffle"));

  const std::int64_t steps_per_epoch =
      static_cast<std::int64_t>((prefs.size() + batch - 1) / batch);
  const std::int64_t eval_every =
      cfg.eval_every > 0 ? cfg.eval_every : std::max<std::int64_t>(1, steps_per_epoch / 4);
  const std::int64_t max_steps = steps_per_epoch * cfg.max_epochs;

  double train_sum = 0.0;
  std::int64_t train_count = 0;
  int since_best = 0;

  const auto record = [&](std::int64_t step, double train_loss) {
    EvalRecord rec;
    rec.step = step;
    rec.train_loss = train_loss;
    rec.val_pref_loss = evaluate_loss(params, Batch{data.pref_val, {}}, val_spec).loss;
    rec.val_anchor_loss = has_val_anchors
                              ? evaluate_loss(params, Batch{{}, data.anchor_val}, val_anchor_spec).loss
                              : std::numeric_limits<double>::quiet_NaN();
    hist.evals.push_back(rec);
    if (hist.evals.size() == 1 || rec.val_pref_loss < hist.best_val_pref_loss) {
      hist.best_val_pref_loss = rec.val_pref_loss;
      hist.best_step = step;
      result.params = params;
      since_best = 0;
    } else {
      ++since_best;
    }
  };

  const Batch full_train{data.pref_train, joint ? data.anchor_train : std::span<const AnchorRecord>{}};
  record(0, evaluate_loss(params, full_train, step_spec).loss);

  for (std::int64_t step = 1; step <= max_steps; ++step) {
    Batch b{prefs.next(true), {}};
    if (anchors) b.anchors = anchors->next(false);
    const LossAndGrad lg = loss_and_grad(params, b, step_spec);
    adam_step(params, lg.grads, adam, cfg, step);
    train_sum += lg.loss;
    ++train_count;
    if (step % eval_every == 0 || step == max_steps) {
      record(step, train_sum / static_cast<double>(train_count));
      train_sum = 0.0;
      train_count = 0;
      if (since_best >= cfg.patience) break;
    }
  }
  return result;
}

GridSearchResult grid_search_lambda(const TrainInputs& data, const TrainConfig& cfg) {
  if (cfg.lambda_grid.empty()) throw ConfigError("lambda grid is empty");
  validate(cfg);
  const auto n = static_cast<std::ptrdiff_t>(cfg.lambda_grid.size());
  std::vector<std::optional<TrainResult>> arms(cfg.lambda_grid.size());
  std::vector<std::exception_ptr> errors(cfg.lambda_grid.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      TrainConfig arm = cfg;
      arm.lambda = cfg.lambda_grid[static_cast<std::size_t>(i)];
      arms[static_cast<std::size_t>(i)] = train(ModelKind::kTwoAnchor, data, arm);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  GridSearchResult out;
  std::size_t best = 0;
  for (std::size_t i = 0; i < arms.size(); ++i) {
    out.runs.push_back(arms[i]->history);
    const double loss = arms[i]->history.best_val_pref_loss;
    const double incumbent = arms[best]->history.best_val_pref_loss;
    const bool smaller_tie =
        loss == incumbent && cfg.lambda_grid[i] < cfg.lambda_grid[best];
    if (loss < incumbent || smaller_tie) best = i;
  }
  out.best_lambda = cfg.lambda_grid[best];
  out.best = std::move(*arms[best]);
  return out;
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.precision(17);
  out << "step,split,loss\n";
  for (const auto& e : history.evals) {
    out << e.step << ",train," << e.train_loss << '\n';
    out << e.step << ",val_pref," << e.val_pref_loss << '\n';
    if (!std::isnan(e.val_anchor_loss)) {
      out << e.step << ",val_anchor," << e.val_anchor_loss << '\n';
    }
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace avrm
