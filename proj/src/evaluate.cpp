#include "avrm/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "json.hpp"

#include "avrm/errors.hpp"
#include "avrm/numerics.hpp"
#include "avrm/objectives.hpp"
#include "avrm/rng.hpp"

namespace avrm {

namespace {

void require_pairs(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("correlation inputs differ in length");
  if (a.size() < 2) throw UsageError("correlation needs at least two points");
}

std::string format_optional(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

}  // namespace

double pearson(std::span<const double> a, std::span<const double> b) {
  require_pairs(a, b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw DegenerateMetricError("correlation of a constant vector");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  require_pairs(a, b);
  return pearson(average_ranks(a), average_ranks(b));
}

MetricsReport compute_metrics(const ModelParams& model,
                              std::span<const ComparisonRecord> test,
                              const GroundTruthParams* ground_truth) {
  if (test.empty()) throw UsageError("compute_metrics: empty test split");
  for (const auto& c : test) {
    if (is_label_tie(c.soft_label)) {
      throw UsageError("compute_metrics: remove soft_label = 0.5 records first");
    }
  }
  const bool gaussian = model.shape().has_variance();

  // Distinct responses in first-appearance order.
  std::vector<Vec> xs, ys;
  std::map<std::pair<Vec, Vec>, std::size_t> index;
  std::vector<std::pair<std::size_t, std::size_t>> pair_index;
  const auto intern = [&](const Vec& x, const Vec& y) {
    const auto [it, fresh] = index.try_emplace({x, y}, xs.size());
    if (fresh) {
      xs.push_back(x);
      ys.push_back(y);
    }
    return it->second;
  };
  for (const auto& c : test) pair_index.emplace_back(intern(c.x, c.y1), intern(c.x, c.y2));
  const auto preds = forward_many(model, xs, ys);

  MetricsReport rep;
  rep.n_evaluated = test.size();
  std::vector<PrefPrediction> pref;
  std::vector<double> labels;
  double correct = 0.0, brier = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& p1 = preds[pair_index[i].first];
    const auto& p2 = preds[pair_index[i].second];
    const PrefPrediction p = gaussian ? predict_gaussian(p1.mean, *p1.std, p2.mean, *p2.std)
                                      : predict_bt(p1.mean, p2.mean);
    const double c = test[i].soft_label;
    if (p.p != 0.5 && (p.p > 0.5) == (c > 0.5)) correct += 1.0;
    brier += (p.p - c) * (p.p - c);
    pref.push_back(p);
    labels.push_back(c);
  }
  const double n = static_cast<double>(test.size());
  rep.accuracy = correct / n;
  rep.brier = brier / n;
  rep.cross_entropy = loss_pref_soft(pref, labels);

  if (ground_truth != nullptr && xs.size() >= 2) {
    std::vector<double> r_hat, r_true, s_hat, s_true;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      r_hat.push_back(preds[k].mean);
      r_true.push_back(true_reward(*ground_truth, xs[k], ys[k]));
      if (gaussian) {
        s_hat.push_back(*preds[k].std);
        s_true.push_back(true_std(*ground_truth, xs[k], ys[k]));
      }
    }
    rep.pearson_r = pearson(r_hat, r_true);
    rep.spearman_r = spearman(r_hat, r_true);
    if (gaussian) {
      rep.pearson_s = pearson(s_hat, s_true);
      rep.spearman_s = spearman(s_hat, s_true);
    }
  }
  return rep;
}

Proxy model_proxy(const ModelParams& model) {
  return [&model](std::span<const double> x, std::span<const double> y) {
    return forward(model, x, y);
  };
}

Proxy oracle_proxy(const GroundTruthParams& gold) {
  return [&gold](std::span<const double> x, std::span<const double> y) {
    return Prediction{true_reward(gold, x, y), true_std(gold, x, y)};
  };
}

BoNPool make_bon_pool(int d, std::size_t n_prompts, std::size_t candidates_per_prompt,
                      std::uint64_t seed) {
  if (d < 1 || n_prompts < 1 || candidates_per_prompt < 1) {
    throw ConfigError("best-of-N pool needs positive dimensions");
  }
  Rng rng(seed, "bon_pool");
  const auto draw = [&] {
    Vec v(static_cast<std::size_t>(d));
    rng.fill_normal(v);
    return v;
  };
  BoNPool pool;
  for (std::size_t i = 0; i < n_prompts; ++i) {
    pool.prompts.push_back(draw());
    auto& cands = pool.candidates.emplace_back();
    for (std::size_t j = 0; j < candidates_per_prompt; ++j) cands.push_back(draw());
  }
  return pool;
}

namespace {

struct ScoredPool {
  std::vector<std::vector<Prediction>> proxy;
  std::vector<std::vector<double>> gold;
};

ScoredPool score_pool(const Proxy& proxy, const GroundTruthParams& gold, const BoNPool& pool,
                      std::size_t depth) {
  ScoredPool out;
  for (std::size_t i = 0; i < pool.prompts.size(); ++i) {
    if (pool.candidates[i].size() < depth) {
      throw ConfigError("best-of-N size exceeds the candidate pool");
    }
    auto& p = out.proxy.emplace_back();
    auto& g = out.gold.emplace_back();
    for (std::size_t j = 0; j < depth; ++j) {
      p.push_back(proxy(pool.prompts[i], pool.candidates[i][j]));
      g.push_back(true_reward(gold, pool.prompts[i], pool.candidates[i][j]));
    }
  }
  return out;
}

std::vector<double> select(const ScoredPool& scored, int n, double q) {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("quantile must lie in (0, 1)");
  const double zq = std_normal_quantile(q);
  std::vector<double> picks;
  for (std::size_t i = 0; i < scored.proxy.size(); ++i) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j) {
      const Prediction& p = scored.proxy[i][j];
      double score = p.mean;
      if (zq != 0.0) {
        if (!p.std) throw UsageError("quantile reward needs a proxy with a std");
        score += zq * *p.std;
      }
      if (j == 0 || score > best_score) {
        best = j;
        best_score = score;
      }
    }
    picks.push_back(scored.gold[i][best]);
  }
  return picks;
}

}  // namespace

std::vector<double> bon_selections(const Proxy& proxy, const GroundTruthParams& gold,
                                   const BoNPool& pool, int n, double quantile_q) {
  if (n < 1) throw ConfigError("best-of-N size must be positive");
  return select(score_pool(proxy, gold, pool, static_cast<std::size_t>(n)), n, quantile_q);
}

BoNResult bon_evaluate(const Proxy& proxy, const GroundTruthParams& gold, const BoNPool& pool,
                       std::span<const int> n_grid, std::span<const double> quantiles) {
  if (n_grid.empty()) throw ConfigError("best-of-N grid is empty");
  if (pool.prompts.empty()) throw ConfigError("best-of-N pool has no prompts");
  for (std::size_t k = 0; k < n_grid.size(); ++k) {
    if (n_grid[k] < 1 || (k > 0 && n_grid[k] <= n_grid[k - 1])) {
      throw ConfigError("best-of-N grid must be positive and strictly ascending");
    }
  }
  const ScoredPool scored =
      score_pool(proxy, gold, pool, static_cast<std::size_t>(n_grid.back()));
  BoNResult out;
  for (const double q : quantiles) {
    for (const int n : n_grid) {
      const auto picks = select(scored, n, q);
      out.points.push_back({n, q,
                            std::accumulate(picks.begin(), picks.end(), 0.0) /
                                static_cast<double>(picks.size()),
                            picks.size()});
    }
  }
  return out;
}

void write_metrics_csv(std::span<const LabeledMetrics> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "method,dataset,seed,accuracy,cross_entropy,brier,pearson_r,spearman_r,pearson_s,"
         "spearman_s,n_evaluated\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out << r.method << ',' << r.dataset << ',' << r.seed << ','
        << format_optional(m.accuracy) << ',' << format_optional(m.cross_entropy) << ','
        << format_optional(m.brier) << ',' << format_optional(m.pearson_r) << ','
        << format_optional(m.spearman_r) << ',' << format_optional(m.pearson_s) << ','
        << format_optional(m.spearman_s) << ',' << m.n_evaluated << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_metrics_json(std::span<const LabeledMetrics> rows, const std::filesystem::path& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    nlohmann::json j{{"method", r.method},         {"dataset", r.dataset},
                     {"seed", r.seed},             {"accuracy", m.accuracy},
                     {"cross_entropy", m.cross_entropy}, {"brier", m.brier},
                     {"n_evaluated", m.n_evaluated}};
    if (m.pearson_r) j["pearson_r"] = *m.pearson_r;
    if (m.spearman_r) j["spearman_r"] = *m.spearman_r;
    if (m.pearson_s) j["pearson_s"] = *m.pearson_s;
    if (m.spearman_s) j["spearman_s"] = *m.spearman_s;
    arr.push_back(std::move(j));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << arr.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_bon_csv(const BoNResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "n,q,mean_gold,n_prompts\n";
  for (const auto& p : result.points) {
    out << p.n << ',' << format_optional(p.quantile_q) << ',' << format_optional(p.mean_gold)
        << ',' << p.n_prompts << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace avrm
