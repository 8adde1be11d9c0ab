#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avrm/model.hpp"
#include "avrm/records.hpp"
#include "avrm/synthetic.hpp"

namespace avrm {

struct MetricsReport {
  double accuracy = 0.0;
  double cross_entropy = 0.0;
  double brier = 0.0;
  std::optional<double> pearson_r;   // r-hat vs r*
  std::optional<double> spearman_r;
  std::optional<double> pearson_s;   // s-hat vs s*
  std::optional<double> spearman_s;
  std::size_t n_evaluated = 0;
};

// Product-moment correlation. Throws UsageError for mismatched lengths or
// fewer than two points, DegenerateMetricError when either side is constant.
double pearson(std::span<const double> a, std::span<const double> b);

// Pearson correlation of average ranks (tied values share their mean rank).
double spearman(std::span<const double> a, std::span<const double> b);

// Average ranks, 1-based.
std::vector<double> average_ranks(std::span<const double> values);

// Preference metrics on a test split, plus recovery correlations over the
// distinct responses when the ground truth is supplied. A prediction of
// exactly 0.5 counts as incorrect. Throws UsageError for an empty split or
// one that still contains soft_label = 0.5 records.
MetricsReport compute_metrics(const ModelParams& model,
                              std::span<const ComparisonRecord> test,
                              const GroundTruthParams* ground_truth = nullptr);

// Scores a response; mean is the reward, std the optional uncertainty.
using Proxy = std::function<Prediction(std::span<const double> x, std::span<const double> y)>;

// The proxy refers to `model`, which must outlive it.
Proxy model_proxy(const ModelParams& model);
// The ground truth itself: mean r*, std s*.
Proxy oracle_proxy(const GroundTruthParams& gold);

struct BoNPool {
  std::vector<Vec> prompts;
  std::vector<std::vector<Vec>> candidates;  // per prompt
};

// Fresh i.i.d. N(0, I) prompts and candidate responses.
BoNPool make_bon_pool(int d, std::size_t n_prompts, std::size_t candidates_per_prompt,
                      std::uint64_t seed);

struct BoNPoint {
  int n = 1;
  double quantile_q = 0.5;
  double mean_gold = 0.0;
  std::size_t n_prompts = 0;
};

struct BoNResult {
  std::vector<BoNPoint> points;  // quantile-major, N ascending within a quantile
};

// For each N and q, picks per prompt the candidate with the largest
// r-hat + Phi^-1(q) s-hat among the first N (earliest wins ties) and averages
// the gold reward of the picks. Throws ConfigError when n_grid is empty, not
// strictly ascending, or exceeds the pool, or a quantile is outside (0, 1);
// UsageError when q != 0.5 is asked of a proxy without a std.
BoNResult bon_evaluate(const Proxy& proxy, const GroundTruthParams& gold, const BoNPool& pool,
                       std::span<const int> n_grid, std::span<const double> quantiles);

// Gold reward of the pick for every prompt at one (N, q).
std::vector<double> bon_selections(const Proxy& proxy, const GroundTruthParams& gold,
                                   const BoNPool& pool, int n, double quantile_q);

// Columns: method,dataset,seed,accuracy,cross_entropy,brier,pearson_r,
// spearman_r,pearson_s,spearman_s,n_evaluated (absent values left empty).
struct LabeledMetrics {
  std::string method;
  std::string dataset;
  std::uint64_t seed = 0;
  MetricsReport metrics;
};
void write_metrics_csv(std::span<const LabeledMetrics> rows, const std::filesystem::path& path);
void write_metrics_json(std::span<const LabeledMetrics> rows, const std::filesystem::path& path);

// Columns: n,q,mean_gold,n_prompts.
void write_bon_csv(const BoNResult& result, const std::filesystem::path& path);

}  // namespace avrm
