#include "avrm/identify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "avrm/errors.hpp"
#include "avrm/numerics.hpp"
#include "avrm/objectives.hpp"

namespace avrm {

Recovery recover_mean_std(const AnchorProbabilityPair& q, const Thresholds& t) {
  validate_thresholds(t);
  if (!(q.q1 > 0.0 && q.q1 < 1.0 && q.q2 > 0.0 && q.q2 < 1.0)) {
    throw DomainError("anchor probabilities must lie in (0, 1)");
  }
  if (!(q.q1 > q.q2)) {
    throw DegenerateAnchorsError("anchor probabilities require q1 > q2");
  }
  const double z1 = std_normal_quantile(q.q1);
  const double z2 = std_normal_quantile(q.q2);
  if (std::abs(z1 - z2) < 1e-6) {
    throw DegenerateAnchorsError("anchor quantiles too close to separate");
  }
  Recovery out;
  out.std = (t.tau2 - t.tau1) / (z1 - z2);
  out.mean = t.tau1 + out.std * z1;
  out.mean_via_tau2 = t.tau2 + out.std * z2;
  const auto at_boundary = [](double p) {
    return p <= kProbEpsilon || p >= 1.0 - kProbEpsilon;
  };
  out.ill_conditioned = at_boundary(q.q1) || at_boundary(q.q2);
  return out;
}

AnchorProbabilityPair anchor_exceedance(double r, double s, const Thresholds& t) {
  validate_thresholds(t);
  if (!(s > 0.0)) throw DomainError("anchor_exceedance: s must be positive");
  return {std_normal_cdf((r - t.tau1) / s), std_normal_cdf((r - t.tau2) / s)};
}

InvarianceWitness invariance_witness(double r1, double s1, double r2, double s2,
                                     double b, double c) {
  if (!(c > 0.0)) throw DomainError("invariance_witness: c must be positive");
  InvarianceWitness w;
  w.p_base = pref_prob_gaussian(r1, s1, r2, s2);
  w.p_translated = pref_prob_gaussian(r1 + b, s1, r2 + b, s2);
  w.p_scaled = pref_prob_gaussian(c * r1, c * s1, c * r2, c * s2);
  return w;
}

ScoreBatch center_scores(std::span<const double> scores, double mean) {
  ScoreBatch out;
  out.scores.reserve(scores.size());
  for (const double s : scores) out.scores.push_back(s - mean);
  out.centered = true;
  return out;
}

ScoreBatch center_scores(std::span<const double> scores) {
  if (scores.empty()) throw UsageError("cannot center an empty score batch");
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) /
                      static_cast<double>(scores.size());
  return center_scores(scores, mean);
}

double empirical_quantile(std::span<const double> values, double q) {
  if (values.empty()) throw UsageError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level outside [0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  // 0-based position n q - 1/2, clamped to the sample range.
  const double h = std::clamp(n * q - 0.5, 0.0, n - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Thresholds thresholds_from_scores(const ScoreBatch& batch, double quantile_q) {
  if (!batch.centered) throw UsageError("score batch must be centered first");
  if (batch.scores.size() < 2) {
    throw ThresholdError("need at least two distinct scores for thresholds");
  }
  if (!(quantile_q > 0.0 && quantile_q < 0.5)) {
    throw ConfigError("threshold quantile must lie in (0, 0.5)");
  }
  const auto [lo, hi] =
      std::minmax_element(batch.scores.begin(), batch.scores.end());
  if (batch.scores.size() < 2 || !(*lo < *hi)) {
    throw ThresholdError("need at least two distinct scores for thresholds");
  }
  Thresholds t{empirical_quantile(batch.scores, quantile_q),
               empirical_quantile(batch.scores, 1.0 - quantile_q)};
  if (!(t.tau1 < t.tau2)) {
    throw ThresholdError("score quantiles coincide; thresholds not separable");
  }
  return t;
}

std::vector<std::pair<int, int>> anchors_from_scores(const ScoreBatch& batch,
                                                     const Thresholds& t) {
  validate_thresholds(t);
  std::vector<std::pair<int, int>> out;
  out.reserve(batch.scores.size());
  for (const double s : batch.scores) {
    out.emplace_back(s >= t.tau1 ? 1 : 0, s >= t.tau2 ? 1 : 0);
  }
  return out;
}

}  // namespace avrm
