#pragma once

#include <span>
#include <string_view>

#include "avrm/records.hpp"

namespace avrm {

// A predicted preference probability together with the margin it came from:
// p = sigmoid(margin) for Bradley-Terry, p = Phi(margin) for the Gaussian
// model with margin (r1 - r2) / sqrt(s1^2 + s2^2).
struct PrefPrediction {
  double p = 0.5;
  double margin = 0.0;
};

// Probabilities of the three ordinal anchor classes, before clamping.
struct AnchorClassProbs {
  double pi0 = 1.0 / 3;
  double pi1 = 1.0 / 3;
  double pi2 = 1.0 / 3;

  double operator[](int cls) const { return cls == 0 ? pi0 : cls == 1 ? pi1 : pi2; }
};

double pref_prob_bt(double r1, double r2);
double pref_prob_gaussian(double r1, double s1, double r2, double s2);
PrefPrediction predict_bt(double r1, double r2);
PrefPrediction predict_gaussian(double r1, double s1, double r2, double s2);

// q_k = Phi((r - tau_k) / s); pi0 = 1 - q1, pi1 = q1 - q2, pi2 = q2. Each
// component is evaluated from the tail that avoids cancellation.
AnchorClassProbs anchor_class_probs(double r, double s, const Thresholds& t);

enum class LabelMode { kSoft, kHard };

// Majority label used by hard-label training. Ties (exactly 0.5) have none
// and are dropped.
inline bool is_label_tie(double soft_label) { return soft_label == 0.5; }
inline double hard_label(double soft_label) { return soft_label > 0.5 ? 1.0 : 0.0; }

// Mean soft cross-entropy -(1/n) sum [C log p + (1 - C) log(1 - p)] with p
// clamped. Throws UsageError on length mismatch or empty input.
double loss_pref_soft(std::span<const PrefPrediction> preds,
                      std::span<const double> soft_labels);

// Bradley-Terry cross-entropy. Hard mode replaces labels by 1{C > 0.5} and
// skips exact ties.
double loss_bt(std::span<const PrefPrediction> preds,
               std::span<const double> labels, LabelMode mode);

// Mean three-class cross-entropy over unmasked records. Throws DataError on an
// invalid (0,1) record and UsageError when every record is masked.
double loss_anchor(std::span<const AnchorClassProbs> probs,
                   std::span<const AnchorRecord> records);

// pref_loss + lambda * anchor_loss. Throws ConfigError for lambda < 0.
double loss_joint(double pref_loss, double anchor_loss, double lambda);

// Per-example loss terms with exact partial derivatives. These are what the
// model backpropagates; a clamped probability contributes zero gradient.
struct PairTerm {
  double loss = 0.0;
  double d_r1 = 0.0, d_s1 = 0.0, d_r2 = 0.0, d_s2 = 0.0;
};
struct PointTerm {
  double loss = 0.0;
  double d_r = 0.0, d_s = 0.0;
};

PairTerm bt_pref_term(double r1, double r2, double label);
PairTerm gaussian_pref_term(double r1, double s1, double r2, double s2,
                            double label);
PointTerm anchor_term(double r, double s, const Thresholds& t, int cls);

// Which objective a batch is scored with.
enum class LossKind { kBtSoft, kBtHard, kGaussianSoft, kAnchor, kJoint };

std::string_view to_string(LossKind kind);
LossKind loss_kind_from_string(std::string_view name);

struct LossSpec {
  LossKind kind = LossKind::kGaussianSoft;
  double lambda = 0.0;
  Thresholds thresholds;
};

}  // namespace avrm
