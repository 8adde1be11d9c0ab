#include "avrm/objectives.hpp"

#include <cmath>
#include <string>

#include "avrm/errors.hpp"
#include "avrm/numerics.hpp"

namespace avrm {
namespace {

void require_positive_std(double s1, double s2) {
  if (!(s1 > 0.0) || !(s2 > 0.0)) {
    throw DomainError("Gaussian preference requires positive standard deviations");
  }
}

void require_same_length(std::size_t a, std::size_t b) {
  if (a != b) throw UsageError("predictions and labels differ in length");
  if (a == 0) throw UsageError("loss over an empty batch");
}

double cross_entropy(double p, double label) {
  const double pc = clamp_prob(p);
  return -(label * std::log(pc) + (1.0 - label) * std::log(1.0 - pc));
}

// -[C log P + (1 - C) log Q] where P = F(m), Q = F(-m), and dP/dm = density.
// Returns the loss and dL/dm, dropping the derivative of any clamped term.
struct MarginLoss {
  double loss;
  double d_margin;
};

MarginLoss margin_cross_entropy(double upper, double lower, double density,
                                double label) {
  MarginLoss out{0.0, 0.0};
  if (label != 0.0) {
    out.loss -= label * std::log(clamp_prob(upper));
    if (!is_clamped(upper)) out.d_margin -= label * density / upper;
  }
  if (label != 1.0) {
    out.loss -= (1.0 - label) * std::log(clamp_prob(lower));
    if (!is_clamped(lower)) out.d_margin += (1.0 - label) * density / lower;
  }
  return out;
}

}  // namespace

double pref_prob_bt(double r1, double r2) { return clamp_prob(sigmoid(r1 - r2)); }

double pref_prob_gaussian(double r1, double s1, double r2, double s2) {
  return predict_gaussian(r1, s1, r2, s2).p;
}

PrefPrediction predict_bt(double r1, double r2) {
  const double m = r1 - r2;
  return {clamp_prob(sigmoid(m)), m};
}

PrefPrediction predict_gaussian(double r1, double s1, double r2, double s2) {
  require_positive_std(s1, s2);
  const double m = (r1 - r2) / std::sqrt(s1 * s1 + s2 * s2);
  return {clamp_prob(std_normal_cdf(m)), m};
}

AnchorClassProbs anchor_class_probs(double r, double s, const Thresholds& t) {
  if (!(s > 0.0)) throw DomainError("anchor_class_probs: s must be positive");
  validate_thresholds(t);
  const double z1 = (r - t.tau1) / s;
  const double z2 = (r - t.tau2) / s;
  AnchorClassProbs out;
  out.pi0 = std_normal_cdf(-z1);
  out.pi2 = std_normal_cdf(z2);
  // z1 >= z2. Difference of upper tails when both sit above the median.
  out.pi1 = z2 > 0.0 ? std_normal_cdf(-z2) - std_normal_cdf(-z1)
                     : std_normal_cdf(z1) - std_normal_cdf(z2);
  return out;
}

double loss_pref_soft(std::span<const PrefPrediction> preds,
                      std::span<const double> soft_labels) {
  require_same_length(preds.size(), soft_labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double c = soft_labels[i];
    if (!(c >= 0.0 && c <= 1.0)) throw DataError("soft label outside [0, 1]");
    total += cross_entropy(preds[i].p, c);
  }
  return total / static_cast<double>(preds.size());
}

double loss_bt(std::span<const PrefPrediction> preds,
               std::span<const double> labels, LabelMode mode) {
  if (mode == LabelMode::kSoft) return loss_pref_soft(preds, labels);
  require_same_length(preds.size(), labels.size());
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (is_label_tie(labels[i])) continue;
    total += cross_entropy(preds[i].p, hard_label(labels[i]));
    ++used;
  }
  if (used == 0) throw UsageError("hard-label loss: every label is a tie");
  return total / static_cast<double>(used);
}

double loss_anchor(std::span<const AnchorClassProbs> probs,
                   std::span<const AnchorRecord> records) {
  if (probs.size() != records.size()) {
    throw UsageError("anchor probabilities and records differ in length");
  }
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int cls = anchor_class(records[i]);
    if (records[i].masked) continue;
    total -= std::log(clamp_prob(probs[i][cls]));
    ++used;
  }
  if (used == 0) throw UsageError("anchor loss: every record is masked");
  return total / static_cast<double>(used);
}

double loss_joint(double pref_loss, double anchor_loss, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("anchor weight lambda must be >= 0");
  if (lambda == 0.0) return pref_loss;
  return pref_loss + lambda * anchor_loss;
}

PairTerm bt_pref_term(double r1, double r2, double label) {
  const double m = r1 - r2;
  const double upper = sigmoid(m);
  const double lower = sigmoid(-m);
  const MarginLoss ml = margin_cross_entropy(upper, lower, upper * lower, label);
  return {ml.loss, ml.d_margin, 0.0, -ml.d_margin, 0.0};
}

PairTerm gaussian_pref_term(double r1, double s1, double r2, double s2,
                            double label) {
  require_positive_std(s1, s2);
  const double var = s1 * s1 + s2 * s2;
  const double scale = std::sqrt(var);
  const double z = (r1 - r2) / scale;
  const MarginLoss ml = margin_cross_entropy(
      std_normal_cdf(z), std_normal_cdf(-z), std_normal_pdf(z), label);
  PairTerm out;
  out.loss = ml.loss;
  out.d_r1 = ml.d_margin / scale;
  out.d_r2 = -out.d_r1;
  // dz/ds_k = -z s_k / (s1^2 + s2^2)
  out.d_s1 = -ml.d_margin * z * s1 / var;
  out.d_s2 = -ml.d_margin * z * s2 / var;
  return out;
}

PointTerm anchor_term(double r, double s, const Thresholds& t, int cls) {
  const AnchorClassProbs probs = anchor_class_probs(r, s, t);
  const double pi = probs[cls];
  PointTerm out;
  out.loss = -std::log(clamp_prob(pi));
  if (is_clamped(pi)) return out;
  const double z1 = (r - t.tau1) / s;
  const double z2 = (r - t.tau2) / s;
  // d pi_cls / d z_k
  double dz1 = 0.0, dz2 = 0.0;
  if (cls == 0) {
    dz1 = -std_normal_pdf(z1);
  } else if (cls == 1) {
    dz1 = std_normal_pdf(z1);
    dz2 = -std_normal_pdf(z2);
  } else {
    dz2 = std_normal_pdf(z2);
  }
  const double scale = -1.0 / (pi * s);
  out.d_r = scale * (dz1 + dz2);
  out.d_s = -scale * (dz1 * z1 + dz2 * z2);
  return out;
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kBtSoft: return "bt_soft";
    case LossKind::kBtHard: return "bt_hard";
    case LossKind::kGaussianSoft: return "gaussian_soft";
    case LossKind::kAnchor: return "anchor";
    case LossKind::kJoint: return "joint";
  }
  return "unknown";
}

LossKind loss_kind_from_string(std::string_view name) {
  for (const LossKind k : {LossKind::kBtSoft, LossKind::kBtHard,
                           LossKind::kGaussianSoft, LossKind::kAnchor,
                           LossKind::kJoint}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown loss kind '" + std::string(name) + "'");
}

}  // namespace avrm
