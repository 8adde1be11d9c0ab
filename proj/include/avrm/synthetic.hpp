#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "avrm/records.hpp"

namespace avrm {

// Fixed ground-truth networks r*(x, y) and s*(x, y) of the simulated world.
// Matrices are row-major.
struct GroundTruthParams {
  int d = 0;
  Vec W;                      // d x d
  std::vector<Vec> a, b, v;   // three d-vectors each
  double s_min = 0.01;
  double s_max = 3.0;

  bool operator==(const GroundTruthParams&) const = default;
};

// W ~ N(0, 1/d^2) entrywise, a_k, b_k, v_k ~ N(0, I). Deterministic per seed.
GroundTruthParams sample_ground_truth(std::uint64_t seed, int d = 10,
                                      double s_min = 0.01, double s_max = 3.0);

// r* = 2 (x'Wy + 1/3 sum_k tanh(x'a_k/sqrt d) tanh(y'b_k/sqrt d)).
double true_reward(const GroundTruthParams& p, std::span<const double> x,
                   std::span<const double> y);

// s* = s_min + (s_max - s_min)/3 (sig(x'v1/sqrt d) + sig(y'v2/sqrt d)
//                                 + sig((x*y)'v3/sqrt d)).
double true_std(const GroundTruthParams& p, std::span<const double> x,
                std::span<const double> y);

// Gaussian preference probability of y1 over y2 under the ground truth.
double true_pref_prob(const GroundTruthParams& p, std::span<const double> x,
                      std::span<const double> y1, std::span<const double> y2);

// Features drawn i.i.d. N(0, I); soft labels are the mean of votes_k
// Bernoulli(p*) votes.
std::vector<ComparisonRecord> gen_preference_dataset(const GroundTruthParams& p,
                                                     std::size_t n, int votes_k,
                                                     std::uint64_t seed);

// One latent draw U ~ N(r*, s*^2) per response; a1 = 1{U >= tau1},
// a2 = 1{U >= tau2}.
std::vector<AnchorRecord> gen_anchor_dataset(const GroundTruthParams& p,
                                             std::size_t n, const Thresholds& t,
                                             std::uint64_t seed);

// Anchor labels for both responses of every comparison (y1 then y2), each
// from its own latent draw U ~ N(r*, s*^2).
std::vector<AnchorRecord> gen_response_anchors(const GroundTruthParams& p,
                                               std::span<const ComparisonRecord> comparisons,
                                               const Thresholds& t, std::uint64_t seed);

// Empirical q- and (1-q)-quantiles of a pilot sample of U on n fresh
// responses.
Thresholds pilot_thresholds(const GroundTruthParams& p, std::size_t n,
                            double quantile_q, std::uint64_t seed);
// The same on one latent draw per response of the given comparisons; the
// simulation pipeline uses its training split.
Thresholds pilot_thresholds(const GroundTruthParams& p,
                            std::span<const ComparisonRecord> comparisons, double quantile_q,
                            std::uint64_t seed);

// With probability rho, moves each record's ordinal class to one of the other
// two valid classes chosen uniformly.
std::vector<AnchorRecord> corrupt_anchors(std::vector<AnchorRecord> records,
                                          double rho, std::uint64_t seed);

// Leaves exactly floor(fraction * n) records unmasked, chosen uniformly
// without replacement; the rest are masked.
std::vector<AnchorRecord> subsample_anchors(std::vector<AnchorRecord> records,
                                            double fraction,
                                            std::uint64_t seed);

}  // namespace avrm
