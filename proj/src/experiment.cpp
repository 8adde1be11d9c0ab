#include "avrm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "avrm/datasets.hpp"
#include "avrm/errors.hpp"
#include "avrm/identify.hpp"
#include "avrm/numerics.hpp"
#include "avrm/rng.hpp"

namespace avrm {

using json = nlohmann::json;

namespace {

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// A file-name-safe rendering of a knob value, e.g. 0.05 -> "0.05".
std::string knob_tag(const std::string& name, double knob) {
  return name == "none" ? std::string("base") : name + format_real(knob);
}

std::string run_tag(ModelKind kind, const std::string& knob_name, double knob,
                    std::uint64_t seed) {
  return std::string(to_string(kind)) + "_" + knob_tag(knob_name, knob) + "_seed" +
         std::to_string(seed);
}

}  // namespace

SimulationData simulate(const SimulationConfig& cfg, std::uint64_t seed) {
  if (cfg.n_train < 1 || cfg.n_val < 1 || cfg.n_test < 1) {
    throw ConfigError("simulation splits must be non-empty");
  }
  if (cfg.votes_k < 1) throw ConfigError("votes_k must be positive");
  if (!(cfg.anchor_quantile > 0.0 && cfg.anchor_quantile < 0.5)) {
    throw ConfigError("anchor_quantile must lie in (0, 0.5)");
  }
  SimulationData out;
  out.truth = sample_ground_truth(seed, cfg.d, cfg.s_min, cfg.s_max);
  out.train = gen_preference_dataset(out.truth, cfg.n_train, cfg.votes_k, derive_seed(seed, "split", 0));
  out.val = gen_preference_dataset(out.truth, cfg.n_val, cfg.votes_k, derive_seed(seed, "split", 1));
  out.test = gen_preference_dataset(out.truth, cfg.n_test, cfg.votes_k, derive_seed(seed, "split", 2));
  if (cfg.thresholds) {
    if (!(cfg.thresholds->tau1 < cfg.thresholds->tau2)) {
      throw ConfigError("thresholds need tau1 < tau2");
    }
    out.thresholds = *cfg.thresholds;
  } else {
    out.thresholds = pilot_thresholds(out.truth, out.train, cfg.anchor_quantile, seed);
  }
  out.anchors = gen_response_anchors(out.truth, out.train, out.thresholds, seed);
  const auto before = out.test.size();
  std::erase_if(out.test, [](const ComparisonRecord& c) { return is_label_tie(c.soft_label); });
  out.test_ties_removed = before - out.test.size();
  return out;
}

MethodRun train_method(ModelKind kind, std::span<const ComparisonRecord> train,
                       std::span<const ComparisonRecord> val, std::span<const AnchorRecord> anchors,
                       const Thresholds& thresholds, const TrainConfig& cfg) {
  const TrainInputs in{train, kind == ModelKind::kTwoAnchor ? anchors : std::span<const AnchorRecord>{},
                       val, {}, thresholds};
  MethodRun run;
  run.kind = kind;
  if (kind == ModelKind::kTwoAnchor && !cfg.lambda_grid.empty()) {
    GridSearchResult g = grid_search_lambda(in, cfg);
    run.lambda = g.best_lambda;
    run.params = std::move(g.best.params);
    run.history = std::move(g.best.history);
    run.grid_runs = std::move(g.runs);
    return run;
  }
  TrainResult r = avrm::train(kind, in, cfg);
  run.lambda = kind == ModelKind::kTwoAnchor ? cfg.lambda : 0.0;
  run.params = std::move(r.params);
  run.history = std::move(r.history);
  return run;
}

std::string method_label(ModelKind kind) {
  switch (kind) {
    case ModelKind::kBtSoft: return "BT-soft";
    case ModelKind::kBtHard: return "BT-hard";
    case ModelKind::kGaussian: return "Gaussian";
    case ModelKind::kTwoAnchor: return "Two-anchor";
  }
  return "unknown";
}

void append_metric_rows(std::vector<ResultRow>& rows, const std::string& method,
                        const std::string& knob_name, double knob, std::uint64_t seed,
                        const MetricsReport& m) {
  const auto add = [&](const char* metric, std::optional<double> v) {
    if (v) rows.push_back({method, knob_name, knob, seed, metric, *v});
  };
  add("accuracy", m.accuracy);
  add("cross_entropy", m.cross_entropy);
  add("brier", m.brier);
  add("pearson_r", m.pearson_r);
  add("spearman_r", m.spearman_r);
  add("pearson_s", m.pearson_s);
  add("spearman_s", m.spearman_s);
}

std::vector<std::filesystem::path> emit_reports(const std::vector<ResultRow>& rows,
                                                const std::filesystem::path& outdir) {
  if (rows.empty()) throw UsageError("emit_reports: no results");
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw IoError("cannot create '" + outdir.string() + "': " + ec.message());

  std::vector<std::string> metrics;
  std::map<std::string, std::vector<const ResultRow*>> by_metric;
  for (const auto& r : rows) {
    auto& bucket = by_metric[r.metric];
    if (bucket.empty()) metrics.push_back(r.metric);
    bucket.push_back(&r);
  }

  std::vector<std::filesystem::path> written;
  const auto open = [&](const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
    written.push_back(p);
    return out;
  };
  for (const auto& metric : metrics) {
    const auto& bucket = by_metric[metric];
    {
      auto out = open(outdir / (metric + ".csv"));
      out << "method,knob_name,knob,seed,value\n";
      for (const ResultRow* r : bucket) {
        out << r->method << ',' << r->knob_name << ',' << format_real(r->knob) << ','
            << r->seed << ',' << format_real(r->value) << '\n';
      }
    }
    // Group by (method, knob) in first-appearance order.
    std::vector<std::tuple<std::string, std::string, double>> keys;
    std::map<std::tuple<std::string, std::string, double>, std::vector<double>> values;
    for (const ResultRow* r : bucket) {
      auto key = std::make_tuple(r->method, r->knob_name, r->knob);
      auto& v = values[key];
      if (v.empty()) keys.push_back(key);
      v.push_back(r->value);
    }
    auto out = open(outdir / (metric + "_summary.csv"));
    out << "method,knob_name,knob,n,mean,std\n";
    for (const auto& key : keys) {
      const auto& v = values[key];
      const double n = static_cast<double>(v.size());
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
      double ss = 0.0;
      for (const double x : v) ss += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << format_real(std::get<2>(key))
          << ',' << v.size() << ',' << format_real(mean) << ',' << format_real(sd) << '\n';
    }
  }
  return written;
}

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::kSimulate: return "simulate";
    case Mode::kTrain: return "train";
    case Mode::kAblateFraction: return "ablate_fraction";
    case Mode::kAblateNoise: return "ablate_noise";
    case Mode::kBon: return "bon";
    case Mode::kGradcheck: return "gradcheck";
    case Mode::kRecover: return "recover";
  }
  return "unknown";
}

Mode mode_from_string(std::string_view name) {
  for (const Mode m : {Mode::kSimulate, Mode::kTrain, Mode::kAblateFraction, Mode::kAblateNoise,
                       Mode::kBon, Mode::kGradcheck, Mode::kRecover}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown mode '" + std::string(name) + "'");
}

ExperimentConfig::ExperimentConfig() {
  for (std::uint64_t s = 0; s < 20; ++s) seeds.push_back(s);
}

// ---------------------------------------------------------------------------
// Config file

namespace {

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  // Throws for keys outside `allowed`.
  void only(std::initializer_list<const char*> allowed) const {
    for (const auto& [key, _] : j_.items()) {
      if (std::none_of(allowed.begin(), allowed.end(),
                       [&](const char* a) { return key == a; })) {
        throw ConfigError("unknown key '" + key + "' in " + where_);
      }
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }

  template <typename T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("key '" + std::string(key) + "' in " + where_ + " has the wrong type");
    }
  }

  void get_path(const char* key, std::filesystem::path& out) const {
    std::string s;
    if (!j_.contains(key)) return;
    get(key, s);
    out = s;
  }

  const std::string& where() const { return where_; }

 private:
  const json& j_;
  std::string where_;
};

Thresholds read_thresholds(const json& j, const std::string& where) {
  ObjectReader r(j, where);
  r.only({"tau1", "tau2"});
  if (!r.has("tau1") || !r.has("tau2")) throw ConfigError(where + " needs tau1 and tau2");
  Thresholds t;
  r.get("tau1", t.tau1);
  r.get("tau2", t.tau2);
  return t;
}

json thresholds_json(const Thresholds& t) { return {{"tau1", t.tau1}, {"tau2", t.tau2}}; }

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  ObjectReader top(j, "config");
  top.only({"mode", "seeds", "workers", "out", "methods", "simulation", "train", "fraction_grid",
            "noise_grid", "bon", "gradcheck", "recover", "data", "save_checkpoints"});
  if (top.has("mode")) {
    std::string m;
    top.get("mode", m);
    cfg.mode = mode_from_string(m);
  }
  top.get("seeds", cfg.seeds);
  top.get("workers", cfg.workers);
  top.get_path("out", cfg.out);
  top.get("fraction_grid", cfg.fraction_grid);
  top.get("noise_grid", cfg.noise_grid);
  top.get("save_checkpoints", cfg.save_checkpoints);
  if (top.has("methods")) {
    std::vector<std::string> names;
    top.get("methods", names);
    cfg.methods.clear();
    for (const auto& n : names) cfg.methods.push_back(model_kind_from_string(n));
  }
  if (top.has("simulation")) {
    ObjectReader r(top.at("simulation"), "simulation");
    r.only({"d", "s_min", "s_max", "n_train", "n_val", "n_test", "votes_k", "anchor_quantile",
            "thresholds"});
    auto& s = cfg.simulation;
    r.get("d", s.d);
    r.get("s_min", s.s_min);
    r.get("s_max", s.s_max);
    r.get("n_train", s.n_train);
    r.get("n_val", s.n_val);
    r.get("n_test", s.n_test);
    r.get("votes_k", s.votes_k);
    r.get("anchor_quantile", s.anchor_quantile);
    if (r.has("thresholds")) s.thresholds = read_thresholds(r.at("thresholds"), "simulation.thresholds");
  }
  if (top.has("train")) {
    ObjectReader r(top.at("train"), "train");
    r.only({"learning_rate", "batch_size", "weight_decay", "patience", "max_epochs", "lambda",
            "lambda_grid", "eval_every", "hidden", "variance_param"});
    auto& t = cfg.train;
    r.get("learning_rate", t.learning_rate);
    r.get("batch_size", t.batch_size);
    r.get("weight_decay", t.weight_decay);
    r.get("patience", t.patience);
    r.get("max_epochs", t.max_epochs);
    r.get("lambda", t.lambda);
    r.get("lambda_grid", t.lambda_grid);
    r.get("eval_every", t.eval_every);
    r.get("hidden", t.hidden);
    if (r.has("variance_param")) {
      std::string v;
      r.get("variance_param", v);
      t.variance = variance_param_from_string(v);
    }
  }
  if (top.has("bon")) {
    ObjectReader r(top.at("bon"), "bon");
    r.only({"prompts", "candidates", "n_grid", "quantiles"});
    r.get("prompts", cfg.bon.prompts);
    r.get("candidates", cfg.bon.candidates);
    r.get("n_grid", cfg.bon.n_grid);
    r.get("quantiles", cfg.bon.quantiles);
  }
  if (top.has("gradcheck")) {
    ObjectReader r(top.at("gradcheck"), "gradcheck");
    r.only({"instances", "tolerance", "step"});
    r.get("instances", cfg.gradcheck.instances);
    r.get("tolerance", cfg.gradcheck.tolerance);
    r.get("step", cfg.gradcheck.step);
  }
  if (top.has("recover")) {
    ObjectReader r(top.at("recover"), "recover");
    r.only({"samples", "input", "thresholds"});
    r.get("samples", cfg.recover.samples);
    r.get_path("input", cfg.recover.input);
    if (r.has("thresholds")) {
      cfg.recover.thresholds = read_thresholds(r.at("thresholds"), "recover.thresholds");
    }
  }
  if (top.has("data")) {
    ObjectReader r(top.at("data"), "data");
    r.only({"pref_train", "pref_val", "pref_test", "anchors", "scores", "score_quantile",
            "thresholds"});
    auto& d = cfg.data;
    r.get_path("pref_train", d.pref_train);
    r.get_path("pref_val", d.pref_val);
    r.get_path("pref_test", d.pref_test);
    r.get_path("anchors", d.anchors);
    r.get_path("scores", d.scores);
    r.get("score_quantile", d.score_quantile);
    if (r.has("thresholds")) d.thresholds = read_thresholds(r.at("thresholds"), "data.thresholds");
  }
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json methods = json::array();
  for (const auto k : cfg.methods) methods.push_back(std::string(to_string(k)));
  json sim{{"d", cfg.simulation.d},
           {"s_min", cfg.simulation.s_min},
           {"s_max", cfg.simulation.s_max},
           {"n_train", cfg.simulation.n_train},
           {"n_val", cfg.simulation.n_val},
           {"n_test", cfg.simulation.n_test},
           {"votes_k", cfg.simulation.votes_k},
           {"anchor_quantile", cfg.simulation.anchor_quantile}};
  if (cfg.simulation.thresholds) sim["thresholds"] = thresholds_json(*cfg.simulation.thresholds);
  const auto& t = cfg.train;
  json data{{"pref_train", cfg.data.pref_train.string()},
            {"pref_val", cfg.data.pref_val.string()},
            {"pref_test", cfg.data.pref_test.string()},
            {"anchors", cfg.data.anchors.string()},
            {"scores", cfg.data.scores.string()},
            {"score_quantile", cfg.data.score_quantile}};
  if (cfg.data.thresholds) data["thresholds"] = thresholds_json(*cfg.data.thresholds);
  return json{
      {"mode", std::string(to_string(cfg.mode))},
      {"seeds", cfg.seeds},
      {"workers", cfg.workers},
      {"out", cfg.out.string()},
      {"methods", methods},
      {"simulation", sim},
      {"train",
       {{"learning_rate", t.learning_rate},
        {"batch_size", t.batch_size},
        {"weight_decay", t.weight_decay},
        {"patience", t.patience},
        {"max_epochs", t.max_epochs},
        {"lambda", t.lambda},
        {"lambda_grid", t.lambda_grid},
        {"eval_every", t.eval_every},
        {"hidden", t.hidden},
        {"variance_param", std::string(to_string(t.variance))}}},
      {"fraction_grid", cfg.fraction_grid},
      {"noise_grid", cfg.noise_grid},
      {"bon",
       {{"prompts", cfg.bon.prompts},
        {"candidates", cfg.bon.candidates},
        {"n_grid", cfg.bon.n_grid},
        {"quantiles", cfg.bon.quantiles}}},
      {"gradcheck",
       {{"instances", cfg.gradcheck.instances},
        {"tolerance", cfg.gradcheck.tolerance},
        {"step", cfg.gradcheck.step}}},
      {"recover",
       {{"samples", cfg.recover.samples},
        {"input", cfg.recover.input.string()},
        {"thresholds", thresholds_json(cfg.recover.thresholds)}}},
      {"data", data},
      {"save_checkpoints", cfg.save_checkpoints}};
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.seeds.empty()) throw ConfigError("seeds must not be empty");
  if (std::set<std::uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  if (cfg.workers < 1) throw ConfigError("workers must be positive");
  if (cfg.out.empty()) throw ConfigError("output directory is required");
  if (cfg.methods.empty()) throw ConfigError("methods must not be empty");
  validate(cfg.train);
  const auto& s = cfg.simulation;
  if (s.d < 1) throw ConfigError("simulation.d must be positive");
  if (!(s.s_min > 0.0 && s.s_min < s.s_max)) throw ConfigError("simulation needs 0 < s_min < s_max");
  if (s.n_train < 1 || s.n_val < 1 || s.n_test < 1) throw ConfigError("simulation splits must be non-empty");
  if (s.votes_k < 1) throw ConfigError("simulation.votes_k must be positive");
  if (!(s.anchor_quantile > 0.0 && s.anchor_quantile < 0.5)) {
    throw ConfigError("simulation.anchor_quantile must lie in (0, 0.5)");
  }
  if (s.thresholds && !(s.thresholds->tau1 < s.thresholds->tau2)) {
    throw ConfigError("simulation thresholds need tau1 < tau2");
  }

  switch (cfg.mode) {
    case Mode::kTrain: {
      if (cfg.data.pref_train.empty() || cfg.data.pref_val.empty()) {
        throw ConfigError("train mode needs data.pref_train and data.pref_val");
      }
      const bool two_anchor = std::find(cfg.methods.begin(), cfg.methods.end(),
                                        ModelKind::kTwoAnchor) != cfg.methods.end();
      if (two_anchor && cfg.data.anchors.empty() && cfg.data.scores.empty()) {
        throw ConfigError("two_anchor training needs data.anchors or data.scores");
      }
      if (!cfg.data.anchors.empty() && !cfg.data.thresholds) {
        throw ConfigError("an anchor file needs data.thresholds");
      }
      if (!(cfg.data.score_quantile > 0.0 && cfg.data.score_quantile < 0.5)) {
        throw ConfigError("data.score_quantile must lie in (0, 0.5)");
      }
      break;
    }
    case Mode::kAblateFraction:
      if (cfg.fraction_grid.empty()) throw ConfigError("fraction_grid must not be empty");
      for (const double f : cfg.fraction_grid) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("fractions must lie in (0, 1]");
      }
      break;
    case Mode::kAblateNoise:
      if (cfg.noise_grid.empty()) throw ConfigError("noise_grid must not be empty");
      for (const double r : cfg.noise_grid) {
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("noise levels must lie in [0, 1]");
      }
      break;
    case Mode::kBon: {
      const auto& b = cfg.bon;
      if (b.prompts < 1 || b.candidates < 1) throw ConfigError("bon pool must be non-empty");
      if (b.n_grid.empty()) throw ConfigError("bon.n_grid must not be empty");
      for (std::size_t k = 0; k < b.n_grid.size(); ++k) {
        if (b.n_grid[k] < 1 || (k > 0 && b.n_grid[k] <= b.n_grid[k - 1])) {
          throw ConfigError("bon.n_grid must be positive and strictly ascending");
        }
      }
      if (static_cast<std::size_t>(b.n_grid.back()) > b.candidates) {
        throw ConfigError("bon.n_grid exceeds the candidate pool");
      }
      if (b.quantiles.empty()) throw ConfigError("bon.quantiles must not be empty");
      for (const double q : b.quantiles) {
        if (!(q > 0.0 && q < 1.0)) throw ConfigError("bon quantiles must lie in (0, 1)");
      }
      break;
    }
    case Mode::kGradcheck:
      if (cfg.gradcheck.instances < 1) throw ConfigError("gradcheck.instances must be positive");
      if (!(cfg.gradcheck.tolerance > 0.0)) throw ConfigError("gradcheck.tolerance must be positive");
      if (!(cfg.gradcheck.step > 0.0)) throw ConfigError("gradcheck.step must be positive");
      break;
    case Mode::kRecover:
      if (cfg.recover.samples < 1) throw ConfigError("recover.samples must be positive");
      if (!(cfg.recover.thresholds.tau1 < cfg.recover.thresholds.tau2)) {
        throw ConfigError("recover thresholds need tau1 < tau2");
      }
      break;
    case Mode::kSimulate:
      break;
  }
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

double min_abs_preactivation(const ModelParams& m, std::span<const double> x,
                             std::span<const double> y) {
  const int d = m.shape().d, h = m.shape().hidden;
  std::vector<double> h1(static_cast<std::size_t>(h));
  double margin = std::numeric_limits<double>::infinity();
  for (int j = 0; j < h; ++j) {
    double a = m.b1()[j];
    for (int k = 0; k < d; ++k) {
      a += m.w1()[j * 2 * d + k] * x[k] + m.w1()[j * 2 * d + d + k] * y[k];
    }
    margin = std::min(margin, std::abs(a));
    h1[j] = std::max(a, 0.0);
  }
  for (int j = 0; j < h; ++j) {
    double a = m.b2()[j];
    for (int k = 0; k < h; ++k) a += m.w2()[j * h + k] * h1[k];
    margin = std::min(margin, std::abs(a));
  }
  return margin;
}

}  // namespace

GradcheckReport gradcheck(const GradcheckConfig& cfg, std::uint64_t seed) {
  constexpr int kD = 3, kHidden = 4, kBatch = 8;
  const Thresholds t{-0.4, 0.6};
  Rng rng(seed, "gradcheck");
  GradcheckReport rep;
  const auto vec = [&] {
    Vec v(kD);
    rng.fill_normal(v);
    return v;
  };
  for (const VarianceParam vp : {VarianceParam::kExp, VarianceParam::kSoftplus, VarianceParam::kNone}) {
    for (int inst = 0; inst < cfg.instances; ++inst) {
      ModelParams m(ModelShape{kD, kHidden, vp});
      std::vector<ComparisonRecord> comps;
      std::vector<AnchorRecord> anchors;
      // Resample until every pre-activation is clear of the ReLU kink by
      // more than a few finite-difference steps.
      for (bool ok = false; !ok;) {
        rng.fill_normal(m.values(), 0.6);
        comps.clear();
        anchors.clear();
        for (int i = 0; i < kBatch; ++i) {
          ComparisonRecord c{vec(), vec(), vec(), static_cast<double>(rng.below(11)) / 10.0, 10, {}, {}};
          if (i == 0) c.soft_label = 0.7;
          comps.push_back(std::move(c));
          AnchorRecord a{vec(), vec(), 0, 0, i % 4 == 3};
          set_anchor_class(a, static_cast<int>(rng.below(3)));
          anchors.push_back(std::move(a));
        }
        double margin = std::numeric_limits<double>::infinity();
        for (const auto& c : comps) {
          margin = std::min({margin, min_abs_preactivation(m, c.x, c.y1),
                             min_abs_preactivation(m, c.x, c.y2)});
        }
        for (const auto& a : anchors) margin = std::min(margin, min_abs_preactivation(m, a.x, a.y));
        ok = margin > 100 * cfg.step;
      }
      ++rep.instances;
      std::vector<LossKind> kinds{LossKind::kBtSoft, LossKind::kBtHard};
      if (vp != VarianceParam::kNone) {
        kinds.insert(kinds.end(), {LossKind::kGaussianSoft, LossKind::kAnchor, LossKind::kJoint});
      }
      const Batch batch{comps, anchors};
      for (const LossKind kind : kinds) {
        const LossSpec spec{kind, 0.37, t};
        const auto analytic = loss_and_grad(m, batch, spec);
        ModelParams probe = m;
        auto v = probe.values();
        for (std::size_t i = 0; i < v.size(); ++i) {
          const double orig = v[i];
          v[i] = orig + cfg.step;
          const double up = evaluate_loss(probe, batch, spec).loss;
          v[i] = orig - cfg.step;
          const double down = evaluate_loss(probe, batch, spec).loss;
          v[i] = orig;
          const double fd = (up - down) / (2 * cfg.step);
          const double a = analytic.grads.values()[i];
          const double scale = std::max({std::abs(a), std::abs(fd), 1e-6});
          rep.max_relative_error = std::max(rep.max_relative_error, std::abs(a - fd) / scale);
        }
        ++rep.checks;
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Modes

namespace {

struct SeedOutput {
  std::vector<ResultRow> rows;
  std::vector<LabeledMetrics> metrics;
  std::vector<std::string> bon_lines;  // method,seed,n,q,mean_gold,n_prompts
  std::vector<std::string> recover_lines;
  std::vector<std::filesystem::path> files;
  std::optional<double> gradcheck_error;
};

// Loaded once for train mode and shared read-only by the seeds.
struct FileData {
  std::vector<ComparisonRecord> train, val, test;
  std::vector<AnchorRecord> anchors;
  Thresholds thresholds;
};

class SeedRunner {
 public:
  SeedRunner(const ExperimentConfig& cfg, std::uint64_t seed, SeedOutput& out)
      : cfg_(cfg), seed_(seed), out_(out) {
    train_cfg_ = cfg.train;
    train_cfg_.seed = seed;
  }

  MethodRun fit(ModelKind kind, std::span<const ComparisonRecord> train,
                std::span<const ComparisonRecord> val, std::span<const AnchorRecord> anchors,
                const Thresholds& t, const std::string& knob_name, double knob) {
    MethodRun run = train_method(kind, train, val, anchors, t, train_cfg_);
    const std::string tag = run_tag(kind, knob_name, knob, seed_);
    save_history(run.history, "histories/" + tag + ".csv");
    for (std::size_t i = 0; i < run.grid_runs.size(); ++i) {
      save_history(run.grid_runs[i],
                   "histories/" + tag + "_lambda" + format_real(run.grid_runs[i].lambda) + ".csv");
    }
    if (cfg_.save_checkpoints) {
      const std::filesystem::path rel = "checkpoints/" + tag + ".json";
      save_checkpoint_json(run.params, cfg_.out / rel);
      out_.files.push_back(rel);
    }
    if (kind == ModelKind::kTwoAnchor) {
      out_.rows.push_back({method_label(kind), knob_name, knob, seed_, "lambda", run.lambda});
    }
    return run;
  }

  void report(ModelKind kind, const std::string& knob_name, double knob, const std::string& dataset,
              const MetricsReport& m) {
    append_metric_rows(out_.rows, method_label(kind), knob_name, knob, seed_, m);
    out_.metrics.push_back({method_label(kind), dataset, seed_, m});
  }

  void simulate_mode() {
    const SimulationData data = simulate(cfg_.simulation, seed_);
    for (const ModelKind kind : cfg_.methods) {
      const MethodRun run = fit(kind, data.train, data.val, data.anchors, data.thresholds, "none", 0);
      report(kind, "none", 0, "simulation", compute_metrics(run.params, data.test, &data.truth));
    }
  }

  void train_mode(const FileData& data) {
    for (const ModelKind kind : cfg_.methods) {
      const MethodRun run = fit(kind, data.train, data.val, data.anchors, data.thresholds, "none", 0);
      if (!data.test.empty()) report(kind, "none", 0, "test", compute_metrics(run.params, data.test));
    }
  }

  // Baselines are trained once and repeated at every knob value so the tidy
  // reports carry all methods on a common axis.
  template <typename MakeAnchors>
  void ablation_mode(const std::string& knob_name, const std::vector<double>& grid,
                     MakeAnchors make_anchors) {
    const SimulationData data = simulate(cfg_.simulation, seed_);
    for (const ModelKind kind : cfg_.methods) {
      if (kind == ModelKind::kTwoAnchor) continue;
      const MethodRun run = fit(kind, data.train, data.val, {}, data.thresholds, "none", 0);
      const MetricsReport m = compute_metrics(run.params, data.test, &data.truth);
      for (const double knob : grid) report(kind, knob_name, knob, "simulation", m);
    }
    for (const double knob : grid) {
      const auto anchors = make_anchors(data.anchors, knob);
      const MethodRun run = fit(ModelKind::kTwoAnchor, data.train, data.val, anchors,
                                data.thresholds, knob_name, knob);
      report(ModelKind::kTwoAnchor, knob_name, knob, "simulation",
             compute_metrics(run.params, data.test, &data.truth));
    }
  }

  void bon_mode() {
    const SimulationData data = simulate(cfg_.simulation, seed_);
    const BoNPool pool = make_bon_pool(cfg_.simulation.d, cfg_.bon.prompts, cfg_.bon.candidates,
                                       derive_seed(seed_, "bon"));
    const auto emit = [&](const std::string& method, const BoNResult& res) {
      for (const auto& p : res.points) {
        out_.rows.push_back({method, "n", static_cast<double>(p.n), seed_,
                             "mean_gold_q" + format_real(p.quantile_q), p.mean_gold});
        out_.bon_lines.push_back(method + "," + std::to_string(seed_) + "," + std::to_string(p.n) +
                                 "," + format_real(p.quantile_q) + "," + format_real(p.mean_gold) +
                                 "," + std::to_string(p.n_prompts));
      }
    };
    emit("Oracle", bon_evaluate(oracle_proxy(data.truth), data.truth, pool, cfg_.bon.n_grid,
                                cfg_.bon.quantiles));
    const std::vector<double> median{0.5};
    for (const ModelKind kind : cfg_.methods) {
      const MethodRun run = fit(kind, data.train, data.val, data.anchors, data.thresholds, "none", 0);
      const bool has_std = run.params.shape().has_variance();
      emit(method_label(kind), bon_evaluate(model_proxy(run.params), data.truth, pool,
                                            cfg_.bon.n_grid,
                                            has_std ? std::span<const double>(cfg_.bon.quantiles)
                                                    : std::span<const double>(median)));
    }
  }

  void gradcheck_mode() {
    const GradcheckReport rep = gradcheck(cfg_.gradcheck, seed_);
    out_.gradcheck_error = rep.max_relative_error;
    out_.rows.push_back({"kernel", "none", 0, seed_, "max_relative_error", rep.max_relative_error});
  }

  void recover_mode() {
    Rng rng(seed_, "recover");
    const auto& t = cfg_.recover.thresholds;
    double err_r = 0.0, err_s = 0.0, gap = 0.0;
    std::size_t done = 0;
    while (done < cfg_.recover.samples) {
      const double r = rng.uniform(-5, 5), s = rng.uniform(0.05, 5);
      const double z1 = (r - t.tau1) / s, z2 = (r - t.tau2) / s;
      if (std::abs(z1) > 5 || std::abs(z2) > 5) continue;
      const Recovery rec = recover_mean_std(anchor_exceedance(r, s, t), t);
      err_r = std::max(err_r, std::abs(rec.mean - r));
      err_s = std::max(err_s, std::abs(rec.std - s));
      gap = std::max(gap, std::abs(rec.mean - rec.mean_via_tau2));
      ++done;
    }
    out_.rows.push_back({"closed_form", "none", 0, seed_, "max_abs_error_r", err_r});
    out_.rows.push_back({"closed_form", "none", 0, seed_, "max_abs_error_s", err_s});
    out_.rows.push_back({"closed_form", "none", 0, seed_, "max_mean_gap", gap});
  }

 private:
  void save_history(const TrainHistory& h, const std::string& rel) {
    write_history_csv(h, cfg_.out / rel);
    out_.files.push_back(rel);
  }

  const ExperimentConfig& cfg_;
  std::uint64_t seed_;
  SeedOutput& out_;
  TrainConfig train_cfg_;
};

FileData load_file_data(const ExperimentConfig& cfg) {
  FileData d;
  d.train = read_jsonl<ComparisonRecord>(cfg.data.pref_train);
  d.val = read_jsonl<ComparisonRecord>(cfg.data.pref_val);
  if (!cfg.data.pref_test.empty()) {
    d.test = read_jsonl<ComparisonRecord>(cfg.data.pref_test);
    std::erase_if(d.test, [](const ComparisonRecord& c) { return is_label_tie(c.soft_label); });
  }
  if (!cfg.data.anchors.empty()) {
    d.anchors = read_jsonl<AnchorRecord>(cfg.data.anchors);
    d.thresholds = *cfg.data.thresholds;
  } else if (!cfg.data.scores.empty()) {
    const auto scores = read_jsonl<ScoreRecord>(cfg.data.scores);
    ScoreAnchors sa = anchors_from_score_records(scores, cfg.data.score_quantile);
    d.anchors = std::move(sa.anchors);
    d.thresholds = sa.thresholds;
  }
  return d;
}

void write_lines(const std::filesystem::path& path, const std::string& header,
                 const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << header << '\n';
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// Recovery of (r, s) for user-supplied anchor probabilities.
std::vector<std::string> recover_file(const RecoverConfig& cfg) {
  std::ifstream in(cfg.input);
  if (!in) throw IoError("cannot open '" + cfg.input.string() + "'");
  std::vector<std::string> lines;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("q1") || !j.contains("q2")) {
      throw ParseError(line, "missing required field 'q1' or 'q2'");
    }
    if (!j["q1"].is_number() || !j["q2"].is_number()) {
      throw SchemaError("line " + std::to_string(line) + ": q1 and q2 must be numbers");
    }
    const AnchorProbabilityPair q{j["q1"].get<double>(), j["q2"].get<double>()};
    std::string row = format_real(q.q1) + "," + format_real(q.q2) + ",";
    try {
      const Recovery rec = recover_mean_std(q, cfg.thresholds);
      row += format_real(rec.mean) + "," + format_real(rec.std) + "," +
             (rec.ill_conditioned ? "1" : "0") + ",";
    } catch (const Error& e) {
      row += ",,," + e.kind();
    }
    lines.push_back(row);
  }
  return lines;
}

void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  json seeds = json::array();
  for (const auto& s : m.seeds) {
    json e{{"seed", s.seed}, {"ok", s.ok}, {"started", s.started}, {"finished", s.finished}};
    if (!s.ok) e["error"] = s.error;
    seeds.push_back(std::move(e));
  }
  json files = json::array();
  for (const auto& f : m.files) files.push_back(f.generic_string());
  json j{{"version", m.version}, {"started", m.started}, {"finished", m.finished},
         {"config", m.config},   {"seeds", seeds},       {"files", files},
         {"passed", m.passed}};
  if (m.gradcheck_max_error) j["gradcheck_max_relative_error"] = *m.gradcheck_max_error;
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

RunManifest run(const ExperimentConfig& cfg) {
  validate(cfg);
  std::error_code ec;
  for (const char* sub : {"", "histories", "checkpoints", "reports"}) {
    std::filesystem::create_directories(cfg.out / sub, ec);
    if (ec) throw ConfigError("output directory '" + cfg.out.string() + "' is not writable");
  }

  RunManifest manifest;
  manifest.config = config_to_json(cfg);
  manifest.version = kVersion;
  manifest.started = utc_now();

  std::optional<FileData> file_data;
  if (cfg.mode == Mode::kTrain) file_data = load_file_data(cfg);

  const auto n = static_cast<std::ptrdiff_t>(cfg.seeds.size());
  std::vector<SeedOutput> outputs(cfg.seeds.size());
  manifest.seeds.resize(cfg.seeds.size());
#pragma omp parallel for num_threads(cfg.workers) schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    SeedStatus& status = manifest.seeds[idx];
    status.seed = cfg.seeds[idx];
    status.started = utc_now();
    SeedRunner runner(cfg, status.seed, outputs[idx]);
    try {
      switch (cfg.mode) {
        case Mode::kSimulate: runner.simulate_mode(); break;
        case Mode::kTrain: runner.train_mode(*file_data); break;
        case Mode::kAblateFraction:
          runner.ablation_mode("fraction", cfg.fraction_grid,
                               [&](const std::vector<AnchorRecord>& a, double f) {
                                 return subsample_anchors(a, f, status.seed);
                               });
          break;
        case Mode::kAblateNoise:
          runner.ablation_mode("rho", cfg.noise_grid,
                               [&](const std::vector<AnchorRecord>& a, double rho) {
                                 return corrupt_anchors(a, rho, status.seed);
                               });
          break;
        case Mode::kBon: runner.bon_mode(); break;
        case Mode::kGradcheck: runner.gradcheck_mode(); break;
        case Mode::kRecover: runner.recover_mode(); break;
      }
    } catch (const std::exception& e) {
      status.ok = false;
      status.error = e.what();
    }
    status.finished = utc_now();
  }

  std::vector<ResultRow> rows;
  std::vector<LabeledMetrics> metrics;
  std::vector<std::string> bon_lines;
  for (auto& o : outputs) {
    rows.insert(rows.end(), o.rows.begin(), o.rows.end());
    metrics.insert(metrics.end(), o.metrics.begin(), o.metrics.end());
    bon_lines.insert(bon_lines.end(), o.bon_lines.begin(), o.bon_lines.end());
    manifest.files.insert(manifest.files.end(), o.files.begin(), o.files.end());
    if (o.gradcheck_error) {
      manifest.gradcheck_max_error =
          std::max(manifest.gradcheck_max_error.value_or(0.0), *o.gradcheck_error);
    }
  }
  const auto rel = [&](const std::filesystem::path& p) {
    return std::filesystem::relative(p, cfg.out);
  };
  if (!metrics.empty()) {
    write_metrics_csv(metrics, cfg.out / "metrics.csv");
    write_metrics_json(metrics, cfg.out / "metrics.json");
    manifest.files.push_back("metrics.csv");
    manifest.files.push_back("metrics.json");
  }
  if (!bon_lines.empty()) {
    write_lines(cfg.out / "bon.csv", "method,seed,n,q,mean_gold,n_prompts", bon_lines);
    manifest.files.push_back("bon.csv");
  }
  if (cfg.mode == Mode::kRecover && !cfg.recover.input.empty()) {
    write_lines(cfg.out / "recover.csv", "q1,q2,mean,std,ill_conditioned,error",
                recover_file(cfg.recover));
    manifest.files.push_back("recover.csv");
  }
  if (!rows.empty()) {
    for (const auto& p : emit_reports(rows, cfg.out / "reports")) manifest.files.push_back(rel(p));
  }

  manifest.passed = std::all_of(manifest.seeds.begin(), manifest.seeds.end(),
                                [](const SeedStatus& s) { return s.ok; });
  if (cfg.mode == Mode::kGradcheck) {
    manifest.passed = manifest.passed && manifest.gradcheck_max_error &&
                      *manifest.gradcheck_max_error <= cfg.gradcheck.tolerance;
  }
  manifest.finished = utc_now();
  manifest.files.push_back("manifest.json");
  write_manifest(manifest, cfg.out / "manifest.json");
  return manifest;
}

}  // namespace avrm
