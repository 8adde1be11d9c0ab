#include <algorithm>
#include <cmath>
#include <vector>

#include "avrm/errors.hpp"
#include "avrm/model.hpp"
#include "avrm/numerics.hpp"

namespace avrm {
namespace {

// Comparisons or anchors handled by one task. Fixed, so partial sums are
// combined in the same order for any thread count.
constexpr std::size_t kBlockItems = 64;

struct Activations {
  std::vector<double> u, a1, a2;
  double r = 0.0;
  double s = 1.0;
  double slope = 0.0;  // ds/dt

  explicit Activations(std::size_t in, std::size_t hidden)
      : u(in), a1(hidden), a2(hidden) {}
};

struct Scratch {
  std::vector<double> da2, da1;
  explicit Scratch(std::size_t hidden) : da2(hidden), da1(hidden) {}
};

// Forward and backward passes through the fixed architecture. Holds
// transposed copies of the layer matrices so that every inner loop is a
// contiguous axpy.
class Network {
 public:
  explicit Network(const ModelParams& m)
      : m_(m),
        in_(static_cast<std::size_t>(m.shape().input())),
        hidden_(static_cast<std::size_t>(m.shape().hidden)),
        w1t_(in_ * hidden_),
        w2t_(hidden_ * hidden_) {
    const auto w1 = m.w1();
    for (std::size_t j = 0; j < hidden_; ++j) {
      for (std::size_t k = 0; k < in_; ++k) w1t_[k * hidden_ + j] = w1[j * in_ + k];
    }
    const auto w2 = m.w2();
    for (std::size_t j = 0; j < hidden_; ++j) {
      for (std::size_t k = 0; k < hidden_; ++k) {
        w2t_[k * hidden_ + j] = w2[j * hidden_ + k];
      }
    }
  }

  std::size_t in() const { return in_; }
  std::size_t hidden() const { return hidden_; }

  void forward(const Vec& x, const Vec& y, Activations& act) const {
    const std::size_t d = x.size();
    std::copy(x.begin(), x.end(), act.u.begin());
    std::copy(y.begin(), y.end(), act.u.begin() + static_cast<std::ptrdiff_t>(d));

    double* a1 = act.a1.data();
    const auto b1 = m_.b1();
    std::copy(b1.begin(), b1.end(), a1);
    for (std::size_t k = 0; k < in_; ++k) {
      const double uk = act.u[k];
      if (uk == 0.0) continue;
      const double* row = &w1t_[k * hidden_];
      for (std::size_t j = 0; j < hidden_; ++j) a1[j] += uk * row[j];
    }

    double* a2 = act.a2.data();
    const auto b2 = m_.b2();
    std::copy(b2.begin(), b2.end(), a2);
    for (std::size_t k = 0; k < hidden_; ++k) {
      const double hk = a1[k] > 0.0 ? a1[k] : 0.0;
      if (hk == 0.0) continue;
      const double* row = &w2t_[k * hidden_];
      for (std::size_t j = 0; j < hidden_; ++j) a2[j] += hk * row[j];
    }

    const auto wr = m_.w_r();
    double r = 0.0;
    for (std::size_t j = 0; j < hidden_; ++j) r += wr[j] * (a2[j] > 0.0 ? a2[j] : 0.0);
    act.r = r;
    if (m_.shape().has_variance()) {
      const auto wv = m_.w_v();
      double t = 0.0;
      for (std::size_t j = 0; j < hidden_; ++j) {
        t += wv[j] * (a2[j] > 0.0 ? a2[j] : 0.0);
      }
      const auto st = detail::std_from_head(t, m_.shape().variance);
      act.s = st.std;
      act.slope = st.slope;
    }
  }

  // Accumulates d_r * dr/dtheta + d_s * ds/dtheta into g.
  void backward(const Activations& act, double d_r, double d_s,
                GradientBuffer& g, Scratch& scratch) const {
    const double d_t = d_s * act.slope;
    if (d_r == 0.0 && d_t == 0.0) return;
    const bool var = m_.shape().has_variance();
    const auto wr = m_.w_r();
    const std::span<const double> wv = var ? m_.w_v() : std::span<const double>{};
    auto g_wr = g.w_r();
    auto g_wv = g.w_v();
    double* da2 = scratch.da2.data();
    for (std::size_t j = 0; j < hidden_; ++j) {
      const double h = act.a2[j] > 0.0 ? act.a2[j] : 0.0;
      g_wr[j] += d_r * h;
      double dh = d_r * wr[j];
      if (var) {
        g_wv[j] += d_t * h;
        dh += d_t * wv[j];
      }
      da2[j] = act.a2[j] > 0.0 ? dh : 0.0;
    }

    auto g_b2 = g.b2();
    double* g_w2 = g.w2().data();
    double* da1 = scratch.da1.data();
    std::fill(da1, da1 + hidden_, 0.0);
    const double* w2 = m_.w2().data();
    for (std::size_t j = 0; j < hidden_; ++j) {
      const double dj = da2[j];
      if (dj == 0.0) continue;
      g_b2[j] += dj;
      double* grow = g_w2 + j * hidden_;
      const double* wrow = w2 + j * hidden_;
      for (std::size_t k = 0; k < hidden_; ++k) {
        const double hk = act.a1[k] > 0.0 ? act.a1[k] : 0.0;
        grow[k] += dj * hk;
        da1[k] += dj * wrow[k];
      }
    }

    auto g_b1 = g.b1();
    double* g_w1 = g.w1().data();
    for (std::size_t j = 0; j < hidden_; ++j) {
      if (!(act.a1[j] > 0.0)) continue;
      const double dj = da1[j];
      if (dj == 0.0) continue;
      g_b1[j] += dj;
      double* grow = g_w1 + j * in_;
      for (std::size_t k = 0; k < in_; ++k) grow[k] += dj * act.u[k];
    }
  }

 private:
  const ModelParams& m_;
  std::size_t in_;
  std::size_t hidden_;
  std::vector<double> w1t_;
  std::vector<double> w2t_;
};

struct BlockResult {
  double pref_sum = 0.0;
  double anchor_sum = 0.0;
  GradientBuffer grads;
};

struct Plan {
  bool pref = false;
  bool anchors = false;
  std::size_t n_pref = 0;
  std::size_t n_anchor = 0;
  double pref_weight = 0.0;
  double anchor_weight = 0.0;
  double lambda = 1.0;
};

Plan make_plan(const Batch& batch, const LossSpec& spec) {
  Plan plan;
  plan.pref = spec.kind != LossKind::kAnchor;
  plan.anchors = spec.kind == LossKind::kAnchor ||
                 (spec.kind == LossKind::kJoint && spec.lambda != 0.0);
  plan.lambda = spec.kind == LossKind::kJoint ? spec.lambda : 1.0;
  if (plan.pref) {
    for (const auto& c : batch.comparisons) {
      if (!(c.soft_label >= 0.0 && c.soft_label <= 1.0)) {
        throw DataError("soft label outside [0, 1]");
      }
      if (spec.kind == LossKind::kBtHard && is_label_tie(c.soft_label)) continue;
      ++plan.n_pref;
    }
    if (plan.n_pref == 0) {
      throw UsageError("hard-label loss: every comparison is a tie");
    }
    plan.pref_weight = 1.0 / static_cast<double>(plan.n_pref);
  }
  if (plan.anchors) {
    for (const auto& a : batch.anchors) {
      anchor_class(a);  // validates
      if (!a.masked) ++plan.n_anchor;
    }
    if (plan.n_anchor == 0) throw UsageError("anchor loss: every record is masked");
    plan.anchor_weight = plan.lambda / static_cast<double>(plan.n_anchor);
  }
  return plan;
}

PairTerm pref_term(LossKind kind, const Activations& a1, const Activations& a2,
                   double label) {
  switch (kind) {
    case LossKind::kBtSoft: return bt_pref_term(a1.r, a2.r, label);
    case LossKind::kBtHard: return bt_pref_term(a1.r, a2.r, hard_label(label));
    default: return gaussian_pref_term(a1.r, a1.s, a2.r, a2.s, label);
  }
}

LossAndGrad run(const ModelParams& m, const Batch& batch, const LossSpec& spec,
                bool with_grad) {
  detail::check_batch(m, batch, spec);
  const Plan plan = make_plan(batch, spec);
  const Network net(m);

  const std::size_t n_comp = plan.pref ? batch.comparisons.size() : 0;
  const std::size_t n_anc = plan.anchors ? batch.anchors.size() : 0;
  const std::size_t comp_blocks = (n_comp + kBlockItems - 1) / kBlockItems;
  const std::size_t anc_blocks = (n_anc + kBlockItems - 1) / kBlockItems;
  const std::size_t blocks = comp_blocks + anc_blocks;
  std::vector<BlockResult> results(blocks);

#pragma omp parallel
  {
    Activations act1(net.in(), net.hidden());
    Activations act2(net.in(), net.hidden());
    Scratch scratch(net.hidden());
#pragma omp for schedule(static)
    for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(blocks); ++bi) {
      const auto b = static_cast<std::size_t>(bi);
      BlockResult& res = results[b];
      if (with_grad) res.grads = GradientBuffer(m.shape());
      if (b < comp_blocks) {
        const std::size_t end = std::min(n_comp, (b + 1) * kBlockItems);
        for (std::size_t i = b * kBlockItems; i < end; ++i) {
          const ComparisonRecord& c = batch.comparisons[i];
          if (spec.kind == LossKind::kBtHard && is_label_tie(c.soft_label)) continue;
          net.forward(c.x, c.y1, act1);
          net.forward(c.x, c.y2, act2);
          const PairTerm term = pref_term(spec.kind, act1, act2, c.soft_label);
          res.pref_sum += term.loss;
          if (!with_grad) continue;
          const double w = plan.pref_weight;
          net.backward(act1, w * term.d_r1, w * term.d_s1, res.grads, scratch);
          net.backward(act2, w * term.d_r2, w * term.d_s2, res.grads, scratch);
        }
      } else {
        const std::size_t ab = b - comp_blocks;
        const std::size_t end = std::min(n_anc, (ab + 1) * kBlockItems);
        for (std::size_t i = ab * kBlockItems; i < end; ++i) {
          const AnchorRecord& a = batch.anchors[i];
          if (a.masked) continue;
          net.forward(a.x, a.y, act1);
          const PointTerm term =
              anchor_term(act1.r, act1.s, spec.thresholds, a.a1 + a.a2);
          res.anchor_sum += term.loss;
          if (!with_grad) continue;
          const double w = plan.anchor_weight;
          net.backward(act1, w * term.d_r, w * term.d_s, res.grads, scratch);
        }
      }
    }
  }

  LossAndGrad out;
  out.grads = GradientBuffer(m.shape());
  double pref_sum = 0.0;
  double anchor_sum = 0.0;
  for (const BlockResult& res : results) {
    pref_sum += res.pref_sum;
    anchor_sum += res.anchor_sum;
    if (with_grad) out.grads += res.grads;
  }
  if (plan.pref) out.pref_loss = pref_sum / static_cast<double>(plan.n_pref);
  if (plan.anchors) out.anchor_loss = anchor_sum / static_cast<double>(plan.n_anchor);
  switch (spec.kind) {
    case LossKind::kAnchor: out.loss = out.anchor_loss; break;
    case LossKind::kJoint:
      out.loss = loss_joint(out.pref_loss, out.anchor_loss, spec.lambda);
      break;
    default: out.loss = out.pref_loss; break;
  }
  return out;
}

}  // namespace

LossAndGrad loss_and_grad(const ModelParams& m, const Batch& batch,
                          const LossSpec& spec) {
  return run(m, batch, spec, true);
}

LossAndGrad evaluate_loss(const ModelParams& m, const Batch& batch,
                          const LossSpec& spec) {
  return run(m, batch, spec, false);
}

}  // namespace avrm
