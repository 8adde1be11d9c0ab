#include "avrm/synthetic.hpp"

#include <cmath>
#include <string>

#include "avrm/errors.hpp"
#include "avrm/identify.hpp"
#include "avrm/numerics.hpp"
#include "avrm/rng.hpp"

namespace avrm {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void check_dims(const GroundTruthParams& p, std::span<const double> x,
                std::span<const double> y) {
  const auto d = static_cast<std::size_t>(p.d);
  if (x.size() != d || y.size() != d) {
    throw ShapeError("feature dimension " + std::to_string(x.size()) + "/" +
                     std::to_string(y.size()) + " does not match d=" +
                     std::to_string(p.d));
  }
}

Vec normal_vec(Rng& rng, int d) {
  Vec v(static_cast<std::size_t>(d));
  rng.fill_normal(v);
  return v;
}

}  // namespace

GroundTruthParams sample_ground_truth(std::uint64_t seed, int d, double s_min,
                                      double s_max) {
  if (d < 1) throw ConfigError("ground truth dimension must be >= 1");
  if (!(s_min > 0.0) || !(s_max > s_min) || !std::isfinite(s_max)) {
    throw ConfigError("ground truth requires 0 < s_min < s_max");
  }
  Rng rng(seed, "ground_truth");
  GroundTruthParams p;
  p.d = d;
  p.s_min = s_min;
  p.s_max = s_max;
  p.W.resize(static_cast<std::size_t>(d) * d);
  rng.fill_normal(p.W, 1.0 / d);
  for (int k = 0; k < 3; ++k) p.a.push_back(normal_vec(rng, d));
  for (int k = 0; k < 3; ++k) p.b.push_back(normal_vec(rng, d));
  for (int k = 0; k < 3; ++k) p.v.push_back(normal_vec(rng, d));
  return p;
}

double true_reward(const GroundTruthParams& p, std::span<const double> x,
                   std::span<const double> y) {
  check_dims(p, x, y);
  const auto d = static_cast<std::size_t>(p.d);
  double bilinear = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    if (x[i] == 0.0) continue;
    bilinear += x[i] * dot(std::span(p.W).subspan(i * d, d), y);
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.d));
  double nonlinear = 0.0;
  for (int k = 0; k < 3; ++k) {
    nonlinear += std::tanh(dot(x, p.a[k]) * inv_sqrt_d) *
                 std::tanh(dot(y, p.b[k]) * inv_sqrt_d);
  }
  return 2.0 * (bilinear + nonlinear / 3.0);
}

double true_std(const GroundTruthParams& p, std::span<const double> x,
                std::span<const double> y) {
  check_dims(p, x, y);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.d));
  double xy_v3 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) xy_v3 += x[i] * y[i] * p.v[2][i];
  const double gates = sigmoid(dot(x, p.v[0]) * inv_sqrt_d) +
                       sigmoid(dot(y, p.v[1]) * inv_sqrt_d) +
                       sigmoid(xy_v3 * inv_sqrt_d);
  return p.s_min + (p.s_max - p.s_min) / 3.0 * gates;
}

double true_pref_prob(const GroundTruthParams& p, std::span<const double> x,
                      std::span<const double> y1, std::span<const double> y2) {
  const double r1 = true_reward(p, x, y1);
  const double r2 = true_reward(p, x, y2);
  const double s1 = true_std(p, x, y1);
  const double s2 = true_std(p, x, y2);
  return std_normal_cdf((r1 - r2) / std::sqrt(s1 * s1 + s2 * s2));
}

std::vector<ComparisonRecord> gen_preference_dataset(const GroundTruthParams& p,
                                                     std::size_t n, int votes_k,
                                                     std::uint64_t seed) {
  if (n < 1) throw ConfigError("preference dataset size must be >= 1");
  if (votes_k < 1) throw ConfigError("votes_k must be >= 1");
  Rng features(seed, "pref_features");
  Rng votes(seed, "pref_votes");
  std::vector<ComparisonRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ComparisonRecord rec;
    rec.x = normal_vec(features, p.d);
    rec.y1 = normal_vec(features, p.d);
    rec.y2 = normal_vec(features, p.d);
    const double prob = true_pref_prob(p, rec.x, rec.y1, rec.y2);
    int wins = 0;
    for (int k = 0; k < votes_k; ++k) wins += votes.bernoulli(prob) ? 1 : 0;
    rec.soft_label = static_cast<double>(wins) / votes_k;
    rec.vote_count = votes_k;
    rec.true_prob = prob;
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<AnchorRecord> gen_anchor_dataset(const GroundTruthParams& p,
                                             std::size_t n, const Thresholds& t,
                                             std::uint64_t seed) {
  if (!(t.tau1 < t.tau2)) throw ConfigError("anchor thresholds need tau1 < tau2");
  Rng features(seed, "anchor_features");
  Rng latent(seed, "anchor_latent");
  std::vector<AnchorRecord> out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    AnchorRecord rec;
    rec.x = normal_vec(features, p.d);
    rec.y = normal_vec(features, p.d);
    const double u =
        true_reward(p, rec.x, rec.y) + true_std(p, rec.x, rec.y) * latent.normal();
    rec.a1 = u >= t.tau1 ? 1 : 0;
    rec.a2 = u >= t.tau2 ? 1 : 0;
    out.push_back(std::move(rec));
  }
  return out;
}

Thresholds pilot_thresholds(const GroundTruthParams& p, std::size_t n,
                            double quantile_q, std::uint64_t seed) {
  Rng features(seed, "pilot_features");
  Rng latent(seed, "pilot_latent");
  std::vector<double> u(n);
  for (double& value : u) {
    const Vec x = normal_vec(features, p.d);
    const Vec y = normal_vec(features, p.d);
    value = true_reward(p, x, y) + true_std(p, x, y) * latent.normal();
  }
  return Thresholds{empirical_quantile(u, quantile_q),
                    empirical_quantile(u, 1.0 - quantile_q)};
}

std::vector<AnchorRecord> gen_response_anchors(const GroundTruthParams& p,
                                               std::span<const ComparisonRecord> comparisons,
                                               const Thresholds& t, std::uint64_t seed) {
  if (!(t.tau1 < t.tau2)) throw ConfigError("anchor thresholds need tau1 < tau2");
  Rng latent(seed, "response_anchor_latent");
  std::vector<AnchorRecord> out;
  out.reserve(2 * comparisons.size());
  for (const auto& c : comparisons) {
    for (const Vec* y : {&c.y1, &c.y2}) {
      AnchorRecord rec{c.x, *y, 0, 0, false};
      const double u = true_reward(p, rec.x, rec.y) + true_std(p, rec.x, rec.y) * latent.normal();
      rec.a1 = u >= t.tau1 ? 1 : 0;
      rec.a2 = u >= t.tau2 ? 1 : 0;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

Thresholds pilot_thresholds(const GroundTruthParams& p,
                            std::span<const ComparisonRecord> comparisons, double quantile_q,
                            std::uint64_t seed) {
  if (comparisons.empty()) throw ConfigError("pilot sample is empty");
  Rng latent(seed, "pilot_latent");
  std::vector<double> u;
  u.reserve(2 * comparisons.size());
  for (const auto& c : comparisons) {
    for (const Vec* y : {&c.y1, &c.y2}) {
      u.push_back(true_reward(p, c.x, *y) + true_std(p, c.x, *y) * latent.normal());
    }
  }
  return Thresholds{empirical_quantile(u, quantile_q), empirical_quantile(u, 1.0 - quantile_q)};
}

std::vector<AnchorRecord> corrupt_anchors(std::vector<AnchorRecord> records,
                                          double rho, std::uint64_t seed) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
  Rng rng(seed, "anchor_corruption");
  for (AnchorRecord& rec : records) {
    const int cls = anchor_class(rec);
    // Both draws are taken unconditionally so that the flip decisions for a
    // given seed are nested across rho values.
    const bool flip = rng.uniform() < rho;
    const int shift = 1 + static_cast<int>(rng.below(2));
    if (flip) set_anchor_class(rec, (cls + shift) % 3);
  }
  return records;
}

std::vector<AnchorRecord> subsample_anchors(std::vector<AnchorRecord> records,
                                            double fraction,
                                            std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("anchor fraction must lie in (0, 1]");
  }
  const std::size_t n = records.size();
  const auto keep = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed, "anchor_mask");
  rng.shuffle(std::span(order));
  for (std::size_t i = 0; i < n; ++i) records[order[i]].masked = i >= keep;
  return records;
}

}  // namespace avrm
