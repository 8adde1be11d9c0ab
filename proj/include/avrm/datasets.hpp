#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "avrm/records.hpp"

namespace avrm {

enum class Choice { kA, kB };

struct AggregatedVote {
  Choice chosen = Choice::kA;
  double soft_label = 1.0;  // share of the chosen side, in (0.5, 1]
  double p_a = 1.0;
};

// Ties count as half a vote for each side: p_A = (v_A + v_tie/2) / total.
// Returns nothing when p_A is exactly 0.5. Throws DataError for negative
// counts or no votes at all.
std::optional<AggregatedVote> aggregate_votes(const VoteRecord& v);

// Aggregates every vote record into a comparison oriented so that y1 is the
// chosen response. Discarded ties are dropped. vote_count is the total number
// of votes, so soft_label * vote_count is a multiple of 1/2 rather than an
// integer when ties were cast. Throws DataError when a kept record lacks
// inline feature payloads.
std::vector<ComparisonRecord> comparisons_from_votes(std::span<const VoteRecord> votes);

struct SplitFractions {
  double train = 10.0 / 14.0;
  double val = 2.0 / 14.0;
  double test = 2.0 / 14.0;
};

template <typename Record>
struct DatasetSplit {
  std::vector<Record> train;
  std::vector<Record> val;
  std::vector<Record> test;
  std::uint64_t split_seed = 0;
  SplitFractions fractions;
};

// Shuffles by seed and partitions. Records that carry a prompt_id are grouped
// so that all records of one prompt land in the same part; the largest
// remainder rule then keeps each part within one unit (record or prompt) of
// its exact share. Throws UsageError for empty input and ConfigError unless
// the fractions are non-negative and sum to 1 within 1e-9.
template <typename Record>
DatasetSplit<Record> split_dataset(std::vector<Record> records, const SplitFractions& fractions,
                                   std::uint64_t seed);

// JSONL, one record per line; blank lines are skipped.
//   comparison: {x, y1, y2, soft_label, vote_count, true_prob?, prompt_id?}
//   anchor:     {x, y, a1, a2, masked?}
//   score:      {x, y, score}
//   vote:       {id, votes_a, votes_b, votes_tie, prompt_id?, x?,
//                payload_a?, payload_b?}  (payloads: number arrays or id strings)
// A line that is not valid JSON, or lacks a required field, throws ParseError
// with the line number; a field of the wrong type or value throws SchemaError.
// Files that cannot be opened throw IoError.
template <typename Record>
std::vector<Record> read_jsonl(const std::filesystem::path& path);

template <typename Record>
void write_jsonl(const std::filesystem::path& path, std::span<const Record> records);

struct ScoreAnchors {
  std::vector<AnchorRecord> anchors;
  Thresholds thresholds;
  double mean = 0.0;  // removed before thresholding
};

// Centers the scores on their own mean, sets thresholds at the q and 1 - q
// quantiles, and labels every response with the two anchor bits.
ScoreAnchors anchors_from_score_records(std::span<const ScoreRecord> scores, double quantile_q);

}  // namespace avrm
