#pragma once

// Test-only oracles. Nothing here calls the library's forward pass or
// gradient kernels: the network is re-evaluated from the flat parameter
// layout, the loss is assembled from the list-based objective functions, and
// gradients come from central finite differences.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "avrm/model.hpp"
#include "avrm/numerics.hpp"
#include "avrm/objectives.hpp"

namespace avrm::testing {

struct NaiveOutput {
  double r = 0.0;
  double s = 1.0;
  double min_abs_preactivation = std::numeric_limits<double>::infinity();
};

inline NaiveOutput naive_forward(const ModelParams& m, const Vec& x, const Vec& y) {
  const int d = m.shape().d;
  const int hidden = m.shape().hidden;
  const auto v = m.values();
  std::size_t off = 0;
  const auto take = [&](std::size_t n) {
    const double* p = v.data() + off;
    off += n;
    return p;
  };
  const double* w1 = take(static_cast<std::size_t>(hidden) * 2 * d);
  const double* b1 = take(hidden);
  const double* w2 = take(static_cast<std::size_t>(hidden) * hidden);
  const double* b2 = take(hidden);
  const double* wr = take(hidden);
  NaiveOutput out;
  std::vector<double> h1(hidden), h2(hidden);
  for (int j = 0; j < hidden; ++j) {
    double a = b1[j];
    for (int k = 0; k < d; ++k) a += w1[j * 2 * d + k] * x[k] + w1[j * 2 * d + d + k] * y[k];
    out.min_abs_preactivation = std::min(out.min_abs_preactivation, std::abs(a));
    h1[j] = std::max(a, 0.0);
  }
  for (int j = 0; j < hidden; ++j) {
    double a = b2[j];
    for (int k = 0; k < hidden; ++k) a += w2[j * hidden + k] * h1[k];
    out.min_abs_preactivation = std::min(out.min_abs_preactivation, std::abs(a));
    h2[j] = std::max(a, 0.0);
  }
  for (int j = 0; j < hidden; ++j) out.r += wr[j] * h2[j];
  if (m.shape().has_variance()) {
    const double* wv = take(hidden);
    double t = 0.0;
    for (int j = 0; j < hidden; ++j) t += wv[j] * h2[j];
    out.s = m.shape().variance == VarianceParam::kExp ? std::exp(t)
                                                      : std::sqrt(std::log1p(std::exp(t)));
  }
  return out;
}

// The objective assembled from loss_pref_soft / loss_bt / loss_anchor.
inline double naive_loss(const ModelParams& m, const Batch& batch, const LossSpec& spec) {
  double pref = 0.0, anchor = 0.0;
  if (spec.kind != LossKind::kAnchor) {
    std::vector<PrefPrediction> preds;
    std::vector<double> labels;
    for (const auto& c : batch.comparisons) {
      const auto o1 = naive_forward(m, c.x, c.y1);
      const auto o2 = naive_forward(m, c.x, c.y2);
      const bool bt = spec.kind == LossKind::kBtSoft || spec.kind == LossKind::kBtHard;
      preds.push_back(bt ? predict_bt(o1.r, o2.r) : predict_gaussian(o1.r, o1.s, o2.r, o2.s));
      labels.push_back(c.soft_label);
    }
    pref = spec.kind == LossKind::kBtHard ? loss_bt(preds, labels, LabelMode::kHard)
                                          : loss_pref_soft(preds, labels);
  }
  const bool use_anchor = spec.kind == LossKind::kAnchor ||
                          (spec.kind == LossKind::kJoint && spec.lambda != 0.0);
  if (use_anchor) {
    std::vector<AnchorClassProbs> probs;
    for (const auto& a : batch.anchors) {
      const auto o = naive_forward(m, a.x, a.y);
      probs.push_back(anchor_class_probs(o.r, o.s, spec.thresholds));
    }
    anchor = loss_anchor(probs, batch.anchors);
  }
  switch (spec.kind) {
    case LossKind::kAnchor: return anchor;
    case LossKind::kJoint: return loss_joint(pref, anchor, spec.lambda);
    default: return pref;
  }
}

inline std::vector<double> finite_difference_gradient(ModelParams m, const Batch& batch,
                                                      const LossSpec& spec,
                                                      double h = 1e-5) {
  auto v = m.values();
  std::vector<double> g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + h;
    const double up = naive_loss(m, batch, spec);
    v[i] = orig - h;
    const double down = naive_loss(m, batch, spec);
    v[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// Relative error with an absolute floor for components near zero.
inline double max_relative_error(std::span<const double> analytic,
                                 std::span<const double> numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

// A small random model with a batch of comparisons and anchors, resampled
// until no pre-activation lies within `kink_margin` of a ReLU kink.
struct Instance {
  ModelParams params;
  std::vector<ComparisonRecord> comparisons;
  std::vector<AnchorRecord> anchors;
  Thresholds thresholds;
  Batch batch() const { return {comparisons, anchors}; }
};

inline Instance random_instance(std::uint64_t seed, VarianceParam vp, int d = 3,
                                int hidden = 4, int batch = 8,
                                double kink_margin = 1e-3) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> votes(0, 10), cls(0, 2);
  while (true) {
    Instance inst{ModelParams(ModelShape{d, hidden, vp}), {}, {}, {-0.4, 0.6}};
    for (double& w : inst.params.values()) w = 0.6 * normal(gen);
    const auto vec = [&] {
      Vec v(d);
      for (double& e : v) e = normal(gen);
      return v;
    };
    for (int i = 0; i < batch; ++i) {
      ComparisonRecord c{vec(), vec(), vec(), votes(gen) / 10.0, 10, {}, {}};
      if (i == 0) c.soft_label = 0.7;  // at least one non-tie for hard labels
      inst.comparisons.push_back(c);
      AnchorRecord a{vec(), vec(), 0, 0, i % 4 == 3};
      set_anchor_class(a, cls(gen));
      inst.anchors.push_back(a);
    }
    double margin = std::numeric_limits<double>::infinity();
    for (const auto& c : inst.comparisons) {
      margin = std::min({margin, naive_forward(inst.params, c.x, c.y1).min_abs_preactivation,
                         naive_forward(inst.params, c.x, c.y2).min_abs_preactivation});
    }
    for (const auto& a : inst.anchors) {
      margin = std::min(margin, naive_forward(inst.params, a.x, a.y).min_abs_preactivation);
    }
    if (margin > kink_margin) return inst;
  }
}

}  // namespace avrm::testing
