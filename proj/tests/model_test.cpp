#include "avrm/model.hpp"

#include <cmath>
#include <filesystem>

#include <omp.h>

#include <gtest/gtest.h>

#include "avrm/errors.hpp"
#include "support/oracle.hpp"

namespace avrm {
namespace {

using testing::finite_difference_gradient;
using testing::max_relative_error;
using testing::random_instance;

TEST(InitParams, ShapesAndDeterminism) {
  const auto a = init_params(3, 10, 64, VarianceParam::kExp);
  EXPECT_EQ(a, init_params(3, 10, 64, VarianceParam::kExp));
  EXPECT_NE(a, init_params(4, 10, 64, VarianceParam::kExp));
  EXPECT_EQ(a.w1().size(), 64u * 20u);
  EXPECT_EQ(a.w2().size(), 64u * 64u);
  EXPECT_EQ(a.w_v().size(), 64u);
  for (const double b : a.b1()) EXPECT_EQ(b, 0.0);
  for (const double b : a.b2()) EXPECT_EQ(b, 0.0);
  const auto bt = init_params(3, 10, 64, VarianceParam::kNone);
  EXPECT_TRUE(bt.w_v().empty());
  EXPECT_EQ(bt.values().size(), a.values().size() - 64);
  EXPECT_THROW(init_params(1, 0, 4), ConfigError);
}

TEST(Forward, ZeroWeightsGiveZeroMeanAndUnitStd) {
  const ModelParams m(ModelShape{3, 5, VarianceParam::kExp});
  const auto p = forward(m, Vec{1, 2, 3}, Vec{-1, 0, 4});
  EXPECT_EQ(p.mean, 0.0);
  ASSERT_TRUE(p.std.has_value());
  EXPECT_EQ(*p.std, 1.0);
}

TEST(Forward, SoftplusOnVariance) {
  const ModelParams m(ModelShape{2, 3, VarianceParam::kSoftplus});
  const auto p = forward(m, Vec{1, 2}, Vec{3, 4});
  EXPECT_NEAR(*p.std * *p.std, std::log(2.0), 1e-15);
  EXPECT_NEAR(*p.std, 0.8325546111576977563531646448952010, 1e-15);
}

TEST(Forward, BradleyTerryHasNoStd) {
  const auto m = init_params(1, 3, 4, VarianceParam::kNone);
  EXPECT_FALSE(forward(m, Vec{1, 2, 3}, Vec{1, 2, 3}).std.has_value());
  EXPECT_THROW(forward(m, Vec{1, 2}, Vec{1, 2, 3}), ShapeError);
}

TEST(Forward, MatchesIndependentEvaluation) {
  for (const auto vp : {VarianceParam::kExp, VarianceParam::kSoftplus}) {
    const auto inst = random_instance(5, vp, 4, 6);
    for (const auto& c : inst.comparisons) {
      const auto p = forward(inst.params, c.x, c.y1);
      const auto o = testing::naive_forward(inst.params, c.x, c.y1);
      EXPECT_NEAR(p.mean, o.r, 1e-12);
      EXPECT_NEAR(*p.std, o.s, 1e-12);
    }
  }
}

TEST(Forward, StdStaysPositiveAtExtremes) {
  for (const auto vp : {VarianceParam::kExp, VarianceParam::kSoftplus}) {
    for (const double scale : {-1e4, 1e4}) {
      ModelParams m(ModelShape{2, 3, vp});
      for (double& w : m.b1()) w = 1.0;
      for (double& w : m.b2()) w = 1.0;
      for (double& w : m.w_v()) w = scale;
      const auto p = forward(m, Vec{0, 0}, Vec{0, 0});
      EXPECT_GT(*p.std, 0.0);
      EXPECT_TRUE(std::isfinite(*p.std));
    }
  }
}

const LossKind kAllKinds[] = {LossKind::kBtSoft, LossKind::kBtHard,
                              LossKind::kGaussianSoft, LossKind::kAnchor,
                              LossKind::kJoint};

class GradientCheck : public ::testing::TestWithParam<VarianceParam> {};

TEST_P(GradientCheck, KernelMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = random_instance(seed, GetParam());
    for (const LossKind kind : kAllKinds) {
      const LossSpec spec{kind, 0.37, inst.thresholds};
      const auto analytic = loss_and_grad(inst.params, inst.batch(), spec);
      const auto numeric = finite_difference_gradient(inst.params, inst.batch(), spec);
      EXPECT_LE(max_relative_error(analytic.grads.values(), numeric), 1e-4)
          << "seed " << seed << " kind " << to_string(kind);
      // At the probability clamp the list-based loss takes log(1 - p) of the
      // clamped p, the kernel logs the clamped complement directly; the two
      // differ by rounding of 1 - (1 - 1e-7).
      EXPECT_NEAR(analytic.loss, testing::naive_loss(inst.params, inst.batch(), spec),
                  1e-9)
          << "seed " << seed << " kind " << to_string(kind);
    }
  }
}

TEST_P(GradientCheck, ReferenceMatchesKernel) {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const auto inst = random_instance(seed, GetParam(), 5, 7, 150);
    for (const LossKind kind : kAllKinds) {
      const LossSpec spec{kind, 0.2, inst.thresholds};
      const auto fast = loss_and_grad(inst.params, inst.batch(), spec);
      const auto ref = loss_and_grad_reference(inst.params, inst.batch(), spec);
      EXPECT_NEAR(fast.loss, ref.loss, 1e-12);
      EXPECT_LE(max_relative_error(fast.grads.values(), ref.grads.values(), 1e-12), 1e-10);
      const auto eval = evaluate_loss(inst.params, inst.batch(), spec);
      EXPECT_EQ(eval.loss, fast.loss);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(VarianceHeads, GradientCheck,
                         ::testing::Values(VarianceParam::kExp, VarianceParam::kSoftplus));

TEST(LossAndGrad, BradleyTerryModelFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = random_instance(seed, VarianceParam::kNone);
    for (const LossKind kind : {LossKind::kBtSoft, LossKind::kBtHard}) {
      const LossSpec spec{kind, 0.0, inst.thresholds};
      const auto analytic = loss_and_grad(inst.params, inst.batch(), spec);
      const auto numeric = finite_difference_gradient(inst.params, inst.batch(), spec);
      EXPECT_LE(max_relative_error(analytic.grads.values(), numeric), 1e-4);
    }
    EXPECT_THROW(loss_and_grad(inst.params, inst.batch(),
                               LossSpec{LossKind::kGaussianSoft, 0, inst.thresholds}),
                 UsageError);
  }
}

TEST(LossAndGrad, ZeroLambdaJointEqualsPreferenceBitwise) {
  const auto inst = random_instance(9, VarianceParam::kExp);
  const auto joint = loss_and_grad(inst.params, inst.batch(),
                                   LossSpec{LossKind::kJoint, 0.0, inst.thresholds});
  const auto pref = loss_and_grad(inst.params, inst.batch(),
                                  LossSpec{LossKind::kGaussianSoft, 0.0, inst.thresholds});
  EXPECT_EQ(joint.loss, pref.loss);
  EXPECT_EQ(joint.grads, pref.grads);
}

TEST(LossAndGrad, JointIsPreferencePlusWeightedAnchor) {
  const auto inst = random_instance(10, VarianceParam::kExp);
  const double lambda = 0.25;
  const auto joint = loss_and_grad(inst.params, inst.batch(),
                                   LossSpec{LossKind::kJoint, lambda, inst.thresholds});
  const auto pref = loss_and_grad(inst.params, inst.batch(),
                                  LossSpec{LossKind::kGaussianSoft, 0, inst.thresholds});
  const auto anc = loss_and_grad(inst.params, inst.batch(),
                                 LossSpec{LossKind::kAnchor, 0, inst.thresholds});
  EXPECT_NEAR(joint.loss, pref.loss + lambda * anc.loss, 1e-14);
  const auto j = joint.grads.values();
  for (std::size_t i = 0; i < j.size(); ++i) {
    EXPECT_NEAR(j[i], pref.grads.values()[i] + lambda * anc.grads.values()[i], 1e-13);
  }
}

// A model whose predictions equal every soft label sits at the interior
// optimum of the cross-entropy: the mean head is zero, so every comparison is
// predicted at 0.5 and labelled 0.5.
TEST(LossAndGrad, StationaryAtMatchingPredictions) {
  auto inst = random_instance(12, VarianceParam::kExp);
  for (double& w : inst.params.w_r()) w = 0.0;
  for (auto& c : inst.comparisons) c.soft_label = 0.5;
  const auto res = loss_and_grad(inst.params, inst.batch(),
                                 LossSpec{LossKind::kGaussianSoft, 0, inst.thresholds});
  double norm = 0.0;
  for (const double g : res.grads.values()) norm += g * g;
  EXPECT_LE(std::sqrt(norm), 1e-6);
  EXPECT_NEAR(res.loss, std::log(2.0), 1e-15);
}

TEST(LossAndGrad, SmallStepDecreasesEverySmoothLoss) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = random_instance(seed, VarianceParam::kExp);
    for (const LossKind kind : kAllKinds) {
      const LossSpec spec{kind, 0.5, inst.thresholds};
      const auto base = loss_and_grad(inst.params, inst.batch(), spec);
      double norm2 = 0.0;
      for (const double g : base.grads.values()) norm2 += g * g;
      if (norm2 == 0.0) continue;
      bool decreased = false;
      for (double step = 1e-2; step > 1e-10 && !decreased; step *= 0.5) {
        ModelParams moved = inst.params;
        auto v = moved.values();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= step * base.grads.values()[i];
        decreased = evaluate_loss(moved, inst.batch(), spec).loss < base.loss;
      }
      EXPECT_TRUE(decreased) << "seed " << seed << " kind " << to_string(kind);
    }
  }
}

TEST(LossAndGrad, ThreadCountDoesNotChangeBits) {
  const auto inst = random_instance(21, VarianceParam::kExp, 5, 8, 500);
  const LossSpec spec{LossKind::kJoint, 0.3, inst.thresholds};
  omp_set_num_threads(1);
  const auto one = loss_and_grad(inst.params, inst.batch(), spec);
  omp_set_num_threads(4);
  const auto four = loss_and_grad(inst.params, inst.batch(), spec);
  EXPECT_EQ(one.loss, four.loss);
  EXPECT_EQ(one.grads, four.grads);
}

TEST(LossAndGrad, UsageErrors) {
  const auto inst = random_instance(1, VarianceParam::kExp);
  const LossSpec pref{LossKind::kGaussianSoft, 0, inst.thresholds};
  EXPECT_THROW(loss_and_grad(inst.params, Batch{}, pref), UsageError);
  auto masked = inst.anchors;
  for (auto& a : masked) a.masked = true;
  EXPECT_THROW(loss_and_grad(inst.params, Batch{inst.comparisons, masked},
                             LossSpec{LossKind::kJoint, 0.1, inst.thresholds}),
               UsageError);
  auto bad = inst.anchors;
  bad[0].a1 = 0;
  bad[0].a2 = 1;
  EXPECT_THROW(loss_and_grad(inst.params, Batch{inst.comparisons, bad},
                             LossSpec{LossKind::kAnchor, 0, inst.thresholds}),
               DataError);
}

TEST(Checkpoint, JsonAndBinaryRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "avrm_model_test";
  std::filesystem::create_directories(dir);
  for (const auto vp : {VarianceParam::kExp, VarianceParam::kSoftplus, VarianceParam::kNone}) {
    const auto m = init_params(17, 4, 6, vp);
    save_checkpoint_json(m, dir / "m.json");
    EXPECT_EQ(load_checkpoint_json(dir / "m.json"), m);
    save_checkpoint_binary(m, dir / "m.bin");
    EXPECT_EQ(load_checkpoint_binary(dir / "m.bin"), m);
  }
  EXPECT_THROW(load_checkpoint_binary(dir / "m.json"), SchemaError);
  EXPECT_THROW(load_checkpoint_json(dir / "missing.json"), IoError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace avrm
