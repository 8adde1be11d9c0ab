#include <vector>

#include "avrm/errors.hpp"
#include "avrm/model.hpp"

namespace avrm {
namespace {

struct Trace {
  Vec u, a1, h1, a2, h2;
  double r = 0.0;
  double s = 1.0;
  double slope = 0.0;
};

Trace trace_forward(const ModelParams& m, const Vec& x, const Vec& y) {
  const int in = m.shape().input();
  const int hidden = m.shape().hidden;
  Trace t;
  t.u = x;
  t.u.insert(t.u.end(), y.begin(), y.end());
  t.a1.assign(hidden, 0.0);
  t.h1.assign(hidden, 0.0);
  t.a2.assign(hidden, 0.0);
  t.h2.assign(hidden, 0.0);
  for (int j = 0; j < hidden; ++j) {
    t.a1[j] = m.b1()[j];
    for (int k = 0; k < in; ++k) t.a1[j] += m.w1()[j * in + k] * t.u[k];
    t.h1[j] = t.a1[j] > 0.0 ? t.a1[j] : 0.0;
  }
  for (int j = 0; j < hidden; ++j) {
    t.a2[j] = m.b2()[j];
    for (int k = 0; k < hidden; ++k) t.a2[j] += m.w2()[j * hidden + k] * t.h1[k];
    t.h2[j] = t.a2[j] > 0.0 ? t.a2[j] : 0.0;
  }
  for (int j = 0; j < hidden; ++j) t.r += m.w_r()[j] * t.h2[j];
  if (m.shape().has_variance()) {
    double head = 0.0;
    for (int j = 0; j < hidden; ++j) head += m.w_v()[j] * t.h2[j];
    const auto st = detail::std_from_head(head, m.shape().variance);
    t.s = st.std;
    t.slope = st.slope;
  }
  return t;
}

void trace_backward(const ModelParams& m, const Trace& t, double d_r, double d_s,
                    GradientBuffer& g) {
  const int in = m.shape().input();
  const int hidden = m.shape().hidden;
  const double d_head = d_s * t.slope;
  Vec da2(hidden), da1(hidden, 0.0);
  for (int j = 0; j < hidden; ++j) {
    g.w_r()[j] += d_r * t.h2[j];
    double dh2 = d_r * m.w_r()[j];
    if (m.shape().has_variance()) {
      g.w_v()[j] += d_head * t.h2[j];
      dh2 += d_head * m.w_v()[j];
    }
    da2[j] = t.a2[j] > 0.0 ? dh2 : 0.0;
  }
  for (int j = 0; j < hidden; ++j) {
    g.b2()[j] += da2[j];
    for (int k = 0; k < hidden; ++k) {
      g.w2()[j * hidden + k] += da2[j] * t.h1[k];
      da1[k] += da2[j] * m.w2()[j * hidden + k];
    }
  }
  for (int j = 0; j < hidden; ++j) {
    const double d = t.a1[j] > 0.0 ? da1[j] : 0.0;
    g.b1()[j] += d;
    for (int k = 0; k < in; ++k) g.w1()[j * in + k] += d * t.u[k];
  }
}

}  // namespace

LossAndGrad loss_and_grad_reference(const ModelParams& m, const Batch& batch,
                                    const LossSpec& spec) {
  detail::check_batch(m, batch, spec);
  LossAndGrad out;
  out.grads = GradientBuffer(m.shape());

  const bool use_pref = spec.kind != LossKind::kAnchor;
  const bool use_anchor = spec.kind == LossKind::kAnchor ||
                          (spec.kind == LossKind::kJoint && spec.lambda != 0.0);
  const double anchor_scale = spec.kind == LossKind::kJoint ? spec.lambda : 1.0;

  if (use_pref) {
    std::vector<const ComparisonRecord*> used;
    for (const auto& c : batch.comparisons) {
      if (spec.kind == LossKind::kBtHard && is_label_tie(c.soft_label)) continue;
      used.push_back(&c);
    }
    if (used.empty()) throw UsageError("hard-label loss: every comparison is a tie");
    const double w = 1.0 / static_cast<double>(used.size());
    double total = 0.0;
    for (const ComparisonRecord* c : used) {
      const Trace t1 = trace_forward(m, c->x, c->y1);
      const Trace t2 = trace_forward(m, c->x, c->y2);
      PairTerm term;
      if (spec.kind == LossKind::kBtSoft) {
        term = bt_pref_term(t1.r, t2.r, c->soft_label);
      } else if (spec.kind == LossKind::kBtHard) {
        term = bt_pref_term(t1.r, t2.r, hard_label(c->soft_label));
      } else {
        term = gaussian_pref_term(t1.r, t1.s, t2.r, t2.s, c->soft_label);
      }
      total += term.loss;
      trace_backward(m, t1, w * term.d_r1, w * term.d_s1, out.grads);
      trace_backward(m, t2, w * term.d_r2, w * term.d_s2, out.grads);
    }
    out.pref_loss = total * w;
  }

  if (use_anchor) {
    std::vector<const AnchorRecord*> used;
    for (const auto& a : batch.anchors) {
      anchor_class(a);
      if (!a.masked) used.push_back(&a);
    }
    if (used.empty()) throw UsageError("anchor loss: every record is masked");
    const double w = anchor_scale / static_cast<double>(used.size());
    double total = 0.0;
    for (const AnchorRecord* a : used) {
      const Trace t = trace_forward(m, a->x, a->y);
      const PointTerm term = anchor_term(t.r, t.s, spec.thresholds, anchor_class(*a));
      total += term.loss;
      trace_backward(m, t, w * term.d_r, w * term.d_s, out.grads);
    }
    out.anchor_loss = total / static_cast<double>(used.size());
  }

  switch (spec.kind) {
    case LossKind::kAnchor: out.loss = out.anchor_loss; break;
    case LossKind::kJoint:
      out.loss = loss_joint(out.pref_loss, out.anchor_loss, spec.lambda);
      break;
    default: out.loss = out.pref_loss; break;
  }
  return out;
}

}  // namespace avrm
