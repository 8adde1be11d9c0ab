#include "avrm/datasets.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <string>

#include "json.hpp"

#include "avrm/errors.hpp"
#include "avrm/identify.hpp"
#include "avrm/rng.hpp"

namespace avrm {

namespace {

using json = nlohmann::json;

// Field accessors for one parsed JSONL line.
class LineReader {
 public:
  LineReader(const json& obj, std::size_t line) : obj_(obj), line_(line) {}

  bool has(const char* field) const { return obj_.contains(field) && !obj_.at(field).is_null(); }

  const json& require(const char* field) const {
    if (!has(field)) {
      throw ParseError(line_, std::string("missing required field '") + field + "'");
    }
    return obj_.at(field);
  }

  double real(const char* field) const {
    const json& v = require(field);
    if (!v.is_number()) schema(field, "a number");
    return v.get<double>();
  }

  int integer(const char* field) const {
    const json& v = require(field);
    if (!v.is_number_integer()) schema(field, "an integer");
    return v.get<int>();
  }

  std::string text(const char* field) const {
    const json& v = require(field);
    if (!v.is_string()) schema(field, "a string");
    return v.get<std::string>();
  }

  bool flag(const char* field) const {
    const json& v = require(field);
    if (!v.is_boolean()) schema(field, "a boolean");
    return v.get<bool>();
  }

  Vec vec(const char* field) const { return to_vec(require(field), field); }

  Vec to_vec(const json& v, const char* field) const {
    if (!v.is_array()) schema(field, "an array of numbers");
    Vec out;
    out.reserve(v.size());
    for (const auto& e : v) {
      if (!e.is_number()) schema(field, "an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  [[noreturn]] void schema(const char* field, const std::string& expected) const {
    throw SchemaError("line " + std::to_string(line_) + ": field '" + field + "' must be " +
                      expected);
  }

 private:
  const json& obj_;
  std::size_t line_;
};

ComparisonRecord parse_record(const LineReader& in, const ComparisonRecord*) {
  ComparisonRecord r;
  r.x = in.vec("x");
  r.y1 = in.vec("y1");
  r.y2 = in.vec("y2");
  r.soft_label = in.real("soft_label");
  if (!(r.soft_label >= 0.0 && r.soft_label <= 1.0)) in.schema("soft_label", "in [0, 1]");
  r.vote_count = in.integer("vote_count");
  if (r.vote_count < 1) in.schema("vote_count", "positive");
  if (in.has("true_prob")) r.true_prob = in.real("true_prob");
  if (in.has("prompt_id")) r.prompt_id = in.text("prompt_id");
  return r;
}

AnchorRecord parse_record(const LineReader& in, const AnchorRecord*) {
  AnchorRecord r;
  r.x = in.vec("x");
  r.y = in.vec("y");
  r.a1 = in.integer("a1");
  r.a2 = in.integer("a2");
  if (r.a1 < 0 || r.a1 > 1) in.schema("a1", "0 or 1");
  if (r.a2 < 0 || r.a2 > 1) in.schema("a2", "0 or 1");
  if (r.a2 > r.a1) in.schema("a2", "at most a1");
  if (in.has("masked")) r.masked = in.flag("masked");
  return r;
}

ScoreRecord parse_record(const LineReader& in, const ScoreRecord*) {
  return {in.vec("x"), in.vec("y"), in.real("score")};
}

VoteRecord parse_record(const LineReader& in, const VoteRecord*) {
  VoteRecord r;
  r.id = in.text("id");
  r.votes_a = in.integer("votes_a");
  r.votes_b = in.integer("votes_b");
  r.votes_tie = in.integer("votes_tie");
  if (r.votes_a < 0) in.schema("votes_a", "non-negative");
  if (r.votes_b < 0) in.schema("votes_b", "non-negative");
  if (r.votes_tie < 0) in.schema("votes_tie", "non-negative");
  if (in.has("prompt_id")) r.prompt_id = in.text("prompt_id");
  if (in.has("x")) r.x = in.vec("x");
  const auto payload = [&](const char* field, Vec& inline_vec, std::optional<std::string>& ref) {
    if (!in.has(field)) return;
    const json& v = in.require(field);
    if (v.is_string()) {
      ref = v.get<std::string>();
    } else {
      inline_vec = in.to_vec(v, field);
    }
  };
  payload("payload_a", r.payload_a, r.ref_a);
  payload("payload_b", r.payload_b, r.ref_b);
  return r;
}

json to_json(const ComparisonRecord& r) {
  json j{{"x", r.x}, {"y1", r.y1}, {"y2", r.y2}, {"soft_label", r.soft_label},
         {"vote_count", r.vote_count}};
  if (r.true_prob) j["true_prob"] = *r.true_prob;
  if (r.prompt_id) j["prompt_id"] = *r.prompt_id;
  return j;
}

json to_json(const AnchorRecord& r) {
  json j{{"x", r.x}, {"y", r.y}, {"a1", r.a1}, {"a2", r.a2}};
  if (r.masked) j["masked"] = true;
  return j;
}

json to_json(const ScoreRecord& r) { return {{"x", r.x}, {"y", r.y}, {"score", r.score}}; }

json to_json(const VoteRecord& r) {
  json j{{"id", r.id}, {"votes_a", r.votes_a}, {"votes_b", r.votes_b},
         {"votes_tie", r.votes_tie}};
  if (r.prompt_id) j["prompt_id"] = *r.prompt_id;
  if (!r.x.empty()) j["x"] = r.x;
  if (r.ref_a) {
    j["payload_a"] = *r.ref_a;
  } else if (!r.payload_a.empty()) {
    j["payload_a"] = r.payload_a;
  }
  if (r.ref_b) {
    j["payload_b"] = *r.ref_b;
  } else if (!r.payload_b.empty()) {
    j["payload_b"] = r.payload_b;
  }
  return j;
}

template <typename Record>
std::optional<std::string> group_key(const Record& r) {
  if constexpr (requires { r.prompt_id; }) {
    return r.prompt_id;
  } else {
    return std::nullopt;
  }
}

// Largest-remainder allocation of `n` units to three parts.
std::array<std::size_t, 3> allocate(std::size_t n, const SplitFractions& f) {
  const double shares[3] = {f.train * static_cast<double>(n), f.val * static_cast<double>(n),
                            f.test * static_cast<double>(n)};
  std::array<std::size_t, 3> sizes{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    sizes[i] = static_cast<std::size_t>(std::floor(shares[i]));
    used += sizes[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return shares[a] - std::floor(shares[a]) > shares[b] - std::floor(shares[b]);
  });
  for (std::size_t k = 0; used < n; ++k, ++used) ++sizes[order[k % 3]];
  return sizes;
}

}  // namespace

std::optional<AggregatedVote> aggregate_votes(const VoteRecord& v) {
  if (v.votes_a < 0 || v.votes_b < 0 || v.votes_tie < 0) {
    throw DataError("vote record '" + v.id + "' has negative counts");
  }
  const int total = v.votes_a + v.votes_b + v.votes_tie;
  if (total == 0) throw DataError("vote record '" + v.id + "' has no votes");
  // Doubling keeps the tie test exact: p_A = 0.5 iff 2 v_A + v_tie = total.
  const int twice_a = 2 * v.votes_a + v.votes_tie;
  if (twice_a == total) return std::nullopt;
  const double p_a = static_cast<double>(twice_a) / (2.0 * total);
  if (twice_a > total) return AggregatedVote{Choice::kA, p_a, p_a};
  const int twice_b = 2 * v.votes_b + v.votes_tie;
  return AggregatedVote{Choice::kB, static_cast<double>(twice_b) / (2.0 * total), p_a};
}

std::vector<ComparisonRecord> comparisons_from_votes(std::span<const VoteRecord> votes) {
  std::vector<ComparisonRecord> out;
  for (const auto& v : votes) {
    const auto agg = aggregate_votes(v);
    if (!agg) continue;
    if (v.x.empty() || v.payload_a.empty() || v.payload_b.empty()) {
      throw DataError("vote record '" + v.id + "' has no inline feature payloads");
    }
    ComparisonRecord c;
    c.x = v.x;
    c.y1 = agg->chosen == Choice::kA ? v.payload_a : v.payload_b;
    c.y2 = agg->chosen == Choice::kA ? v.payload_b : v.payload_a;
    c.soft_label = agg->soft_label;
    c.vote_count = v.votes_a + v.votes_b + v.votes_tie;
    c.prompt_id = v.prompt_id;
    out.push_back(std::move(c));
  }
  return out;
}

template <typename Record>
DatasetSplit<Record> split_dataset(std::vector<Record> records, const SplitFractions& fractions,
                                   std::uint64_t seed) {
  if (records.empty()) throw UsageError("split_dataset: no records");
  for (const double f : {fractions.train, fractions.val, fractions.test}) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
  }
  if (std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }

  // Units are prompts when present, single records otherwise; units keep
  // first-appearance order before shuffling so the result depends only on
  // the seed and the input order.
  std::vector<std::vector<std::size_t>> units;
  std::map<std::string, std::size_t> unit_of_prompt;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto key = group_key(records[i]);
    if (!key) {
      units.push_back({i});
      continue;
    }
    const auto [it, fresh] = unit_of_prompt.try_emplace(*key, units.size());
    if (fresh) units.emplace_back();
    units[it->second].push_back(i);
  }
  Rng rng(seed, "dataset_split");
  rng.shuffle(std::span(units));
  const auto sizes = allocate(units.size(), fractions);

  DatasetSplit<Record> out;
  out.split_seed = seed;
  out.fractions = fractions;
  std::vector<Record>* parts[3] = {&out.train, &out.val, &out.test};
  std::size_t u = 0;
  for (int p = 0; p < 3; ++p) {
    for (std::size_t k = 0; k < sizes[p]; ++k, ++u) {
      for (const std::size_t i : units[u]) parts[p]->push_back(std::move(records[i]));
    }
  }
  return out;
}

template <typename Record>
std::vector<Record> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<Record> out;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) throw SchemaError("line " + std::to_string(line) + ": expected an object");
    out.push_back(parse_record(LineReader(obj, line), static_cast<const Record*>(nullptr)));
  }
  return out;
}

template <typename Record>
void write_jsonl(const std::filesystem::path& path, std::span<const Record> records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ScoreAnchors anchors_from_score_records(std::span<const ScoreRecord> scores, double quantile_q) {
  std::vector<double> raw;
  raw.reserve(scores.size());
  for (const auto& s : scores) raw.push_back(s.score);
  if (raw.empty()) throw UsageError("anchors_from_score_records: no scores");
  ScoreAnchors out;
  out.mean = std::accumulate(raw.begin(), raw.end(), 0.0) / static_cast<double>(raw.size());
  const ScoreBatch batch = center_scores(raw, out.mean);
  out.thresholds = thresholds_from_scores(batch, quantile_q);
  const auto bits = anchors_from_scores(batch, out.thresholds);
  out.anchors.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.anchors.push_back({scores[i].x, scores[i].y, bits[i].first, bits[i].second, false});
  }
  return out;
}

#define AVRM_INSTANTIATE(Record)                                                        \
  template DatasetSplit<Record> split_dataset(std::vector<Record>, const SplitFractions&, \
                                              std::uint64_t);                           \
  template std::vector<Record> read_jsonl<Record>(const std::filesystem::path&);         \
  template void write_jsonl<Record>(const std::filesystem::path&, std::span<const Record>);

AVRM_INSTANTIATE(ComparisonRecord)
AVRM_INSTANTIATE(AnchorRecord)
AVRM_INSTANTIATE(ScoreRecord)
AVRM_INSTANTIATE(VoteRecord)

#undef AVRM_INSTANTIATE

}  // namespace avrm
