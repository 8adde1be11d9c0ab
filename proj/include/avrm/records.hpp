#pragma once

#include <optional>
#include <string>
#include <vector>

namespace avrm {

using Vec = std::vector<double>;

// One pairwise comparison between responses y1 and y2 to prompt x.
// soft_label is the fraction of votes preferring y1.
struct ComparisonRecord {
  Vec x;
  Vec y1;
  Vec y2;
  double soft_label = 0.5;
  int vote_count = 1;
  std::optional<double> true_prob;  // only for synthetic data
  std::optional<std::string> prompt_id;

  bool operator==(const ComparisonRecord&) const = default;
};

// One response with two ordinal anchor bits, a2 <= a1.
struct AnchorRecord {
  Vec x;
  Vec y;
  int a1 = 0;
  int a2 = 0;
  bool masked = false;

  bool operator==(const AnchorRecord&) const = default;
};

// Ordinal anchor class: 0 = (0,0), 1 = (1,0), 2 = (1,1).
// Throws DataError for the invalid pair (0,1) or non-binary bits.
int anchor_class(const AnchorRecord& rec);
int anchor_class(int a1, int a2);
void set_anchor_class(AnchorRecord& rec, int cls);

struct Thresholds {
  double tau1 = -1.0;
  double tau2 = 1.0;

  bool operator==(const Thresholds&) const = default;
};

// Throws DomainError unless tau1 < tau2 and both are finite.
void validate_thresholds(const Thresholds& t);

// A pre-computed scalar quality score for one response.
struct ScoreRecord {
  Vec x;
  Vec y;
  double score = 0.0;

  bool operator==(const ScoreRecord&) const = default;
};

// Raw annotator votes for a response pair. Payloads are inline feature vectors
// or opaque ids; only inline vectors can be trained on.
struct VoteRecord {
  std::string id;
  int votes_a = 0;
  int votes_b = 0;
  int votes_tie = 0;
  std::optional<std::string> prompt_id;
  Vec x;
  Vec payload_a;
  Vec payload_b;
  std::optional<std::string> ref_a;
  std::optional<std::string> ref_b;

  bool operator==(const VoteRecord&) const = default;
};

}  // namespace avrm
