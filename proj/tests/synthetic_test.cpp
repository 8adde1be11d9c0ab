#include "avrm/synthetic.hpp"

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "avrm/errors.hpp"
#include "avrm/numerics.hpp"

namespace avrm {
namespace {

TEST(GroundTruth, DeterministicPerSeed) {
  const auto a = sample_ground_truth(7, 10, 0.01, 3.0);
  const auto b = sample_ground_truth(7, 10, 0.01, 3.0);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, sample_ground_truth(8, 10, 0.01, 3.0));
  EXPECT_EQ(a.d, 10);
  EXPECT_EQ(a.s_min, 0.01);
  EXPECT_EQ(a.s_max, 3.0);
  EXPECT_EQ(a.W.size(), 100u);
}

TEST(GroundTruth, RejectsInvalidConfig) {
  EXPECT_THROW(sample_ground_truth(1, 0), ConfigError);
  EXPECT_THROW(sample_ground_truth(1, 10, 0.0, 3.0), ConfigError);
  EXPECT_THROW(sample_ground_truth(1, 10, 3.0, 1.0), ConfigError);
}

TEST(GroundTruth, BilinearWeightVarianceIsOneOverDSquared) {
  const int d = 10;
  std::vector<double> entries;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = sample_ground_truth(seed, d);
    entries.insert(entries.end(), p.W.begin(), p.W.end());
  }
  const double n = static_cast<double>(entries.size());
  const double mean = std::accumulate(entries.begin(), entries.end(), 0.0) / n;
  double var = 0.0;
  for (const double w : entries) var += (w - mean) * (w - mean);
  var /= n - 1;
  const double expected = 1.0 / (d * d);
  const double se = expected * std::sqrt(2.0 / (n - 1));
  EXPECT_NEAR(var, expected, 3 * se);
}

GroundTruthParams tiny_world() {
  GroundTruthParams p;
  p.d = 1;
  p.W = {1.0};
  p.a = p.b = p.v = {{0.0}, {0.0}, {0.0}};
  p.s_min = 0.01;
  p.s_max = 3.0;
  return p;
}

TEST(TrueReward, HandEvaluation) {
  const auto p = tiny_world();
  EXPECT_DOUBLE_EQ(true_reward(p, Vec{1.0}, Vec{2.0}), 4.0);
  auto doubled = p;
  doubled.W = {2.0};
  EXPECT_DOUBLE_EQ(true_reward(doubled, Vec{1.0}, Vec{2.0}), 8.0);
}

TEST(TrueReward, VanishesAtZeroFeatures) {
  const auto p = sample_ground_truth(3);
  const Vec zero(10, 0.0);
  Vec other(10, 0.7);
  EXPECT_EQ(true_reward(p, zero, other), 0.0);
  EXPECT_EQ(true_reward(p, other, zero), 0.0);
}

TEST(TrueReward, ShapeMismatchThrows) {
  const auto p = sample_ground_truth(3);
  EXPECT_THROW(true_reward(p, Vec(9), Vec(10)), ShapeError);
  EXPECT_THROW(true_std(p, Vec(10), Vec(11)), ShapeError);
}

TEST(TrueStd, HandEvaluationAndRange) {
  const auto p = sample_ground_truth(3);
  const Vec zero(10, 0.0);
  EXPECT_NEAR(true_std(p, zero, zero), 1.505, 1e-12);
  const auto flat = tiny_world();
  EXPECT_NEAR(true_std(flat, Vec{5.0}, Vec{-2.0}), 0.01 + 2.99 / 2, 1e-12);

  const auto data = gen_preference_dataset(p, 2000, 10, 11);
  for (const auto& c : data) {
    for (const Vec* y : {&c.y1, &c.y2}) {
      const double s = true_std(p, c.x, *y);
      EXPECT_GT(s, 0.01);
      EXPECT_LT(s, 3.0);
    }
  }
}

TEST(PreferenceData, SingleVoteGivesHardLabels) {
  const auto p = sample_ground_truth(1);
  for (const auto& c : gen_preference_dataset(p, 500, 1, 2)) {
    EXPECT_TRUE(c.soft_label == 0.0 || c.soft_label == 1.0);
  }
}

TEST(PreferenceData, LabelsAreVoteFractionsAndDeterministic) {
  const auto p = sample_ground_truth(1);
  const auto a = gen_preference_dataset(p, 300, 10, 5);
  EXPECT_EQ(a, gen_preference_dataset(p, 300, 10, 5));
  for (const auto& c : a) {
    const double votes = c.soft_label * c.vote_count;
    EXPECT_NEAR(votes, std::round(votes), 1e-9);
    ASSERT_TRUE(c.true_prob.has_value());
    EXPECT_NEAR(*c.true_prob, true_pref_prob(p, c.x, c.y1, c.y2), 0.0);
  }
  EXPECT_THROW(gen_preference_dataset(p, 0, 10, 5), ConfigError);
  EXPECT_THROW(gen_preference_dataset(p, 10, 0, 5), ConfigError);
}

TEST(PreferenceData, SoftLabelsCalibratedAgainstTrueProbability) {
  const auto p = sample_ground_truth(4);
  const int k = 10;
  const auto data = gen_preference_dataset(p, 40000, k, 9);
  // Bins of width 0.1: binned mean label vs binned mean p*, binomial SE.
  for (int bin = 0; bin < 10; ++bin) {
    double label_sum = 0.0, prob_sum = 0.0, var_sum = 0.0;
    int m = 0;
    for (const auto& c : data) {
      const double q = *c.true_prob;
      if (q < bin * 0.1 || q >= (bin + 1) * 0.1) continue;
      label_sum += c.soft_label;
      prob_sum += q;
      var_sum += q * (1 - q) / k;
      ++m;
    }
    if (m < 50) continue;
    const double se = std::sqrt(var_sum) / m;
    EXPECT_NEAR(label_sum / m, prob_sum / m, 3 * se + 1e-12) << "bin " << bin;
  }
}

TEST(AnchorData, OrdinalAndSharedLatent) {
  const auto p = sample_ground_truth(2);
  const Thresholds t{-1.0, 1.0};
  const auto data = gen_anchor_dataset(p, 20000, t, 3);
  for (const auto& a : data) {
    EXPECT_LE(a.a2, a.a1);
    EXPECT_FALSE(a.a1 == 0 && a.a2 == 1);
  }
  EXPECT_EQ(data, gen_anchor_dataset(p, 20000, t, 3));
  EXPECT_THROW(gen_anchor_dataset(p, 10, Thresholds{1.0, 1.0}, 3), ConfigError);
}

TEST(AnchorData, LowThresholdMarksEverything) {
  const auto p = sample_ground_truth(2);
  for (const auto& a : gen_anchor_dataset(p, 2000, Thresholds{-1e6, 1e6}, 3)) {
    EXPECT_EQ(a.a1, 1);
    EXPECT_EQ(a.a2, 0);
  }
}

TEST(AnchorData, ExceedanceRateMatchesAnchorProbability) {
  const auto p = sample_ground_truth(6);
  const Thresholds t{-0.5, 1.2};
  const auto data = gen_anchor_dataset(p, 100000, t, 21);
  double hits = 0.0, expected = 0.0, var = 0.0;
  for (const auto& a : data) {
    hits += a.a1;
    const double q =
        std_normal_cdf((true_reward(p, a.x, a.y) - t.tau1) / true_std(p, a.x, a.y));
    expected += q;
    var += q * (1 - q);
  }
  const double n = static_cast<double>(data.size());
  EXPECT_NEAR(hits / n, expected / n, 3 * std::sqrt(var) / n);
}

TEST(PilotThresholds, OrderedAndNearQuartiles) {
  const auto p = sample_ground_truth(6);
  const Thresholds t = pilot_thresholds(p, 20000, 0.25, 1);
  EXPECT_LT(t.tau1, t.tau2);
  const auto data = gen_anchor_dataset(p, 20000, t, 2);
  double c0 = 0, c2 = 0;
  for (const auto& a : data) {
    c0 += anchor_class(a) == 0;
    c2 += anchor_class(a) == 2;
  }
  EXPECT_NEAR(c0 / data.size(), 0.25, 0.02);
  EXPECT_NEAR(c2 / data.size(), 0.25, 0.02);
}

TEST(CorruptAnchors, ZeroAndFullRate) {
  const auto p = sample_ground_truth(2);
  const auto data = gen_anchor_dataset(p, 5000, Thresholds{-1.0, 1.0}, 3);
  EXPECT_EQ(corrupt_anchors(data, 0.0, 4), data);
  const auto flipped = corrupt_anchors(data, 1.0, 4);
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_NE(anchor_class(flipped[i]), anchor_class(data[i]));
    EXPECT_LE(flipped[i].a2, flipped[i].a1);
  }
  EXPECT_THROW(corrupt_anchors(data, 1.5, 4), ConfigError);
  EXPECT_THROW(corrupt_anchors(data, -0.1, 4), ConfigError);
}

TEST(CorruptAnchors, FlipRateAndTargetUniformity) {
  const auto p = sample_ground_truth(2);
  const auto data = gen_anchor_dataset(p, 100000, Thresholds{-1.0, 1.0}, 3);
  for (const double rho : {0.05, 0.2, 0.4}) {
    const auto out = corrupt_anchors(data, rho, 17);
    double flips = 0;
    double up = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const int before = anchor_class(data[i]);
      const int after = anchor_class(out[i]);
      if (before != after) {
        ++flips;
        up += after == (before + 1) % 3;
      }
    }
    const double n = static_cast<double>(data.size());
    EXPECT_NEAR(flips / n, rho, 3 * std::sqrt(rho * (1 - rho) / n));
    EXPECT_NEAR(up / flips, 0.5, 3 * std::sqrt(0.25 / flips));
  }
}

TEST(SubsampleAnchors, ExactCounts) {
  const auto p = sample_ground_truth(2);
  const auto data = gen_anchor_dataset(p, 10000, Thresholds{-1.0, 1.0}, 3);
  const auto count_unmasked = [](const std::vector<AnchorRecord>& v) {
    return std::count_if(v.begin(), v.end(), [](const auto& a) { return !a.masked; });
  };
  EXPECT_EQ(count_unmasked(subsample_anchors(data, 1.0, 1)), 10000);
  for (const double f : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const auto out = subsample_anchors(data, f, 1);
    EXPECT_EQ(count_unmasked(out), static_cast<long>(std::floor(f * 10000 + 1e-9)));
    EXPECT_EQ(out, subsample_anchors(data, f, 1));
  }
  EXPECT_THROW(subsample_anchors(data, 0.0, 1), ConfigError);
  EXPECT_THROW(subsample_anchors(data, 1.1, 1), ConfigError);
}

}  // namespace
}  // namespace avrm
