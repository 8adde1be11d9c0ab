#pragma once

#include <span>
#include <utility>
#include <vector>

#include "avrm/records.hpp"

namespace avrm {

// Anchor exceedance probabilities q_k = P(U >= tau_k), q1 > q2.
struct AnchorProbabilityPair {
  double q1 = 0.5;
  double q2 = 0.5;
};

struct Recovery {
  double mean = 0.0;
  double std = 1.0;
  // Same mean recovered through tau2; agrees with `mean` up to rounding.
  double mean_via_tau2 = 0.0;
  // Set when either q sits at the probability clamp boundary.
  bool ill_conditioned = false;
};

// Closed-form inversion of the two anchor probabilities:
//   s = (tau2 - tau1) / (z1 - z2),  r = tau1 + s z1,  z_k = Phi^-1(q_k).
// Throws DegenerateAnchorsError when q1 <= q2 or |z1 - z2| < 1e-6.
Recovery recover_mean_std(const AnchorProbabilityPair& q, const Thresholds& t);

// Forward map (r, s) -> (q1, q2).
AnchorProbabilityPair anchor_exceedance(double r, double s, const Thresholds& t);

struct InvarianceWitness {
  double p_base = 0.0;
  double p_translated = 0.0;  // from (r + b, s)
  double p_scaled = 0.0;      // from (c r, c s)
};

// Gaussian preference probability before and after a reward translation and
// a joint positive scaling. Throws DomainError for c <= 0.
InvarianceWitness invariance_witness(double r1, double s1, double r2, double s2,
                                     double b, double c);

// Scores with a flag recording whether the batch mean has been removed.
struct ScoreBatch {
  std::vector<double> scores;
  bool centered = false;
};

// Subtracts `mean` (the training-split mean) from every score.
ScoreBatch center_scores(std::span<const double> scores, double mean);
// Subtracts the batch's own mean.
ScoreBatch center_scores(std::span<const double> scores);

// Empirical quantile by linear interpolation between order statistics placed
// at the midpoints (k - 1/2)/n (Hazen's rule, R type 5): 0-based position
// h = n q - 1/2 clamped to [0, n - 1], value x[floor h] + frac(h) *
// (x[floor h + 1] - x[floor h]). Throws UsageError when empty.
double empirical_quantile(std::span<const double> values, double q);

// tau1 = q-quantile, tau2 = (1 - q)-quantile of a centered batch.
// Throws ThresholdError when fewer than two distinct scores exist or the
// resulting thresholds are not strictly ordered.
Thresholds thresholds_from_scores(const ScoreBatch& batch, double quantile_q);

// a1 = 1{score >= tau1}, a2 = 1{score >= tau2}.
std::vector<std::pair<int, int>> anchors_from_scores(const ScoreBatch& batch,
                                                     const Thresholds& t);

}  // namespace avrm
