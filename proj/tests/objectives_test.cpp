#include "avrm/objectives.hpp"

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "avrm/errors.hpp"
#include "avrm/numerics.hpp"

namespace avrm {
namespace {

constexpr double kPhiOf1 = 0.8413447460685429485852325456320379;
constexpr double kPhiOfMinus1 = 0.1586552539314570514147674543679621;
constexpr double kSigmoidOf1 = 0.7310585786300048792511592418218363;

TEST(PrefProbBt, Values) {
  EXPECT_EQ(pref_prob_bt(0.3, 0.3), 0.5);
  EXPECT_NEAR(pref_prob_bt(1.0, 0.0), kSigmoidOf1, 1e-15);
  EXPECT_NEAR(pref_prob_bt(1.5, -0.25), pref_prob_bt(1.5 + 7.0, -0.25 + 7.0), 1e-15);
}

TEST(PrefProbGaussian, Values) {
  EXPECT_EQ(pref_prob_gaussian(2.0, 0.4, 2.0, 3.0), 0.5);
  EXPECT_NEAR(pref_prob_gaussian(1.0, std::sqrt(0.5), 0.0, std::sqrt(0.5)),
              kPhiOf1, 1e-10);
  EXPECT_NEAR(pref_prob_gaussian(3 * 0.7, 3 * 0.4, 3 * -0.2, 3 * 1.1),
              pref_prob_gaussian(0.7, 0.4, -0.2, 1.1), 1e-12);
  EXPECT_THROW(pref_prob_gaussian(1, 0.0, 0, 1), DomainError);
  EXPECT_THROW(pref_prob_gaussian(1, 1, 0, -1), DomainError);
}

TEST(PrefProbGaussian, TranslationAndScalingInvariance) {
  std::mt19937_64 gen(42);
  std::uniform_real_distribution<double> r(-5, 5), s(0.05, 4), b(-10, 10),
      c(0.1, 10);
  for (int i = 0; i < 2000; ++i) {
    const double r1 = r(gen), r2 = r(gen), s1 = s(gen), s2 = s(gen);
    const double base = pref_prob_gaussian(r1, s1, r2, s2);
    const double bb = b(gen), cc = c(gen);
    EXPECT_NEAR(pref_prob_gaussian(r1 + bb, s1, r2 + bb, s2), base, 1e-12);
    EXPECT_NEAR(pref_prob_gaussian(cc * r1, cc * s1, cc * r2, cc * s2), base, 1e-12);
  }
}

TEST(AnchorClassProbs, Values) {
  const auto p = anchor_class_probs(0.0, 1.0, Thresholds{0.0, 1.0});
  EXPECT_NEAR(p.pi0, 0.5, 1e-15);
  EXPECT_NEAR(p.pi1, 0.5 - kPhiOfMinus1, 1e-12);
  EXPECT_NEAR(p.pi2, kPhiOfMinus1, 1e-12);
}

TEST(AnchorClassProbs, TailLimit) {
  const auto p = anchor_class_probs(0.3, 0.5, Thresholds{0.0, 60.0});
  EXPECT_LT(p.pi2, 1e-300);
  EXPECT_NEAR(p.pi1, std_normal_cdf(0.6), 1e-15);
}

TEST(AnchorClassProbs, SimplexOnRandomInputs) {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> r(-8, 8), s(0.01, 6), tau(-4, 4),
      gap(1e-3, 5);
  for (int i = 0; i < 20000; ++i) {
    const double t1 = tau(gen);
    const Thresholds t{t1, t1 + gap(gen)};
    const auto p = anchor_class_probs(r(gen), s(gen), t);
    EXPECT_LE(std::abs(p.pi0 + p.pi1 + p.pi2 - 1.0), 1e-12);
    EXPECT_GE(p.pi1, 0.0);
    for (const double v : {p.pi0, p.pi1, p.pi2}) EXPECT_GT(clamp_prob(v), 0.0);
  }
}

TEST(AnchorClassProbs, Errors) {
  EXPECT_THROW(anchor_class_probs(0, 0.0, Thresholds{0, 1}), DomainError);
  EXPECT_THROW(anchor_class_probs(0, 1.0, Thresholds{1, 0}), DomainError);
  EXPECT_THROW(anchor_class_probs(0, 1.0, Thresholds{1, 1}), DomainError);
}

TEST(LossPrefSoft, Values) {
  const std::vector<PrefPrediction> half(4, PrefPrediction{0.5, 0.0});
  const std::vector<double> halves(4, 0.5);
  EXPECT_NEAR(loss_pref_soft(half, halves), std::log(2.0), 1e-15);
  const std::vector<PrefPrediction> one{{0.9, 0.0}};
  const std::vector<double> label{1.0};
  EXPECT_NEAR(loss_pref_soft(one, label), 0.1053605156578263012275009808393128,
              1e-15);
  EXPECT_THROW(loss_pref_soft(one, halves), UsageError);
  EXPECT_THROW(loss_pref_soft({}, {}), UsageError);
}

TEST(LossPrefSoft, GibbsInequalityOnGrid) {
  for (int i = 0; i < 100; ++i) {
    const double c = (i + 0.5) / 100.0;
    const std::vector<double> lbl{c};
    const double at_label = loss_pref_soft(std::vector<PrefPrediction>{{c, 0}}, lbl);
    for (int j = 0; j < 100; ++j) {
      const double p = (j + 0.5) / 100.0;
      const double l = loss_pref_soft(std::vector<PrefPrediction>{{p, 0}}, lbl);
      if (i == j) {
        EXPECT_EQ(l, at_label);
      } else {
        EXPECT_GT(l, at_label);
      }
    }
  }
}

TEST(LossBt, HardModeUsesMajorityAndSkipsTies) {
  const std::vector<PrefPrediction> preds{{0.7, 0}, {0.4, 0}, {0.2, 0}};
  const std::vector<double> soft{0.8, 0.5, 0.1};
  const double hard = loss_bt(preds, soft, LabelMode::kHard);
  EXPECT_NEAR(hard, -(std::log(0.7) + std::log(0.8)) / 2, 1e-15);
  const std::vector<double> ties{0.5, 0.5, 0.5};
  EXPECT_THROW(loss_bt(preds, ties, LabelMode::kHard), UsageError);
  EXPECT_EQ(loss_bt(preds, soft, LabelMode::kSoft), loss_pref_soft(preds, soft));
}

TEST(LossBt, ClampFloorForPerfectClassifier) {
  const std::vector<PrefPrediction> preds(3, PrefPrediction{1.0, 50.0});
  const std::vector<double> labels(3, 1.0);
  EXPECT_NEAR(loss_bt(preds, labels, LabelMode::kHard), -std::log(1.0 - 1e-7),
              1e-15);
}

AnchorRecord anchor_with_class(int cls, bool masked = false) {
  AnchorRecord a;
  set_anchor_class(a, cls);
  a.masked = masked;
  return a;
}

TEST(LossAnchor, Values) {
  const std::vector<AnchorClassProbs> p{{0.05, 0.05, 0.9}};
  const std::vector<AnchorRecord> r{anchor_with_class(2)};
  EXPECT_NEAR(loss_anchor(p, r), 0.1053605156578263012275009808393128, 1e-15);

  const std::vector<AnchorClassProbs> uniform(3, AnchorClassProbs{});
  const std::vector<AnchorRecord> mixed{anchor_with_class(0), anchor_with_class(1),
                                        anchor_with_class(2)};
  EXPECT_NEAR(loss_anchor(uniform, mixed), std::log(3.0), 1e-15);
}

TEST(LossAnchor, MaskingAndErrors) {
  const std::vector<AnchorClassProbs> p{{0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}};
  std::vector<AnchorRecord> r{anchor_with_class(0), anchor_with_class(2, true)};
  EXPECT_NEAR(loss_anchor(p, r), -std::log(0.2), 1e-15);
  r[0].masked = true;
  EXPECT_THROW(loss_anchor(p, r), UsageError);
  r[0].masked = false;
  r[0].a1 = 0;
  r[0].a2 = 1;
  EXPECT_THROW(loss_anchor(p, r), DataError);
}

TEST(LossAnchor, EmpiricalFrequenciesMinimizeConstantPredictor) {
  const std::vector<AnchorRecord> r{anchor_with_class(0), anchor_with_class(1),
                                    anchor_with_class(1), anchor_with_class(2)};
  const auto loss_for = [&](double a, double b) {
    const std::vector<AnchorClassProbs> p(r.size(), AnchorClassProbs{a, b, 1 - a - b});
    return loss_anchor(p, r);
  };
  const double best = loss_for(0.25, 0.5);
  for (int i = 1; i < 20; ++i) {
    for (int j = 1; i + j < 20; ++j) {
      EXPECT_GE(loss_for(i / 20.0, j / 20.0), best - 1e-15);
    }
  }
}

TEST(LossJoint, WeightedSum) {
  EXPECT_EQ(loss_joint(0.5, 0.2, 0.0), 0.5);
  EXPECT_NEAR(loss_joint(0.5, 0.2, 0.1), 0.52, 1e-15);
  EXPECT_THROW(loss_joint(0.5, 0.2, -0.1), ConfigError);
}

// Finite-difference checks of the per-example partial derivatives.
TEST(PerExampleTerms, PartialsMatchFiniteDifferences) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> r(-2, 2), s(0.3, 2), lbl(0, 1);
  const double h = 1e-6;
  const Thresholds t{-0.5, 0.8};
  for (int i = 0; i < 200; ++i) {
    const double r1 = r(gen), r2 = r(gen), s1 = s(gen), s2 = s(gen), c = lbl(gen);
    const PairTerm g = gaussian_pref_term(r1, s1, r2, s2, c);
    const auto f = [&](double a, double b, double cc, double dd) {
      return gaussian_pref_term(a, b, cc, dd, c).loss;
    };
    EXPECT_NEAR(g.d_r1, (f(r1 + h, s1, r2, s2) - f(r1 - h, s1, r2, s2)) / (2 * h), 1e-7);
    EXPECT_NEAR(g.d_s1, (f(r1, s1 + h, r2, s2) - f(r1, s1 - h, r2, s2)) / (2 * h), 1e-7);
    EXPECT_NEAR(g.d_r2, (f(r1, s1, r2 + h, s2) - f(r1, s1, r2 - h, s2)) / (2 * h), 1e-7);
    EXPECT_NEAR(g.d_s2, (f(r1, s1, r2, s2 + h) - f(r1, s1, r2, s2 - h)) / (2 * h), 1e-7);

    const PairTerm bt = bt_pref_term(r1, r2, c);
    EXPECT_NEAR(bt.d_r1,
                (bt_pref_term(r1 + h, r2, c).loss - bt_pref_term(r1 - h, r2, c).loss) /
                    (2 * h),
                1e-7);
    EXPECT_EQ(bt.d_r2, -bt.d_r1);

    for (int cls = 0; cls < 3; ++cls) {
      const PointTerm a = anchor_term(r1, s1, t, cls);
      EXPECT_NEAR(a.d_r,
                  (anchor_term(r1 + h, s1, t, cls).loss -
                   anchor_term(r1 - h, s1, t, cls).loss) / (2 * h),
                  1e-6);
      EXPECT_NEAR(a.d_s,
                  (anchor_term(r1, s1 + h, t, cls).loss -
                   anchor_term(r1, s1 - h, t, cls).loss) / (2 * h),
                  1e-6);
    }
  }
}

TEST(PerExampleTerms, ConsistentWithBatchLosses) {
  const PairTerm g = gaussian_pref_term(0.4, 0.7, -0.1, 1.3, 0.3);
  const std::vector<PrefPrediction> p{predict_gaussian(0.4, 0.7, -0.1, 1.3)};
  const std::vector<double> lbl{0.3};
  EXPECT_NEAR(g.loss, loss_pref_soft(p, lbl), 1e-14);
  const Thresholds t{-0.2, 0.9};
  const std::vector<AnchorClassProbs> probs{anchor_class_probs(0.5, 0.8, t)};
  const std::vector<AnchorRecord> rec{anchor_with_class(1)};
  EXPECT_NEAR(anchor_term(0.5, 0.8, t, 1).loss, loss_anchor(probs, rec), 1e-14);
}

TEST(LossKindNames, RoundTrip) {
  for (const auto k : {LossKind::kBtSoft, LossKind::kBtHard, LossKind::kGaussianSoft,
                       LossKind::kAnchor, LossKind::kJoint}) {
    EXPECT_EQ(loss_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(loss_kind_from_string("mse"), ConfigError);
}

}  // namespace
}  // namespace avrm
