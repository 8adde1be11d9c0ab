#include "avrm/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "avrm/errors.hpp"
#include "avrm/numerics.hpp"
#include "avrm/rng.hpp"
#include "json.hpp"

namespace avrm {

std::string_view to_string(VarianceParam vp) {
  switch (vp) {
    case VarianceParam::kExp: return "exp";
    case VarianceParam::kSoftplus: return "softplus";
    case VarianceParam::kNone: return "none";
  }
  return "unknown";
}

VarianceParam variance_param_from_string(std::string_view name) {
  if (name == "exp") return VarianceParam::kExp;
  if (name == "softplus") return VarianceParam::kSoftplus;
  if (name == "none") return VarianceParam::kNone;
  throw ConfigError("unknown variance parameterization '" + std::string(name) +
                    "' (expected exp, softplus or none)");
}

std::size_t ModelShape::b1_offset() const {
  return static_cast<std::size_t>(hidden) * input();
}
std::size_t ModelShape::w2_offset() const { return b1_offset() + hidden; }
std::size_t ModelShape::b2_offset() const {
  return w2_offset() + static_cast<std::size_t>(hidden) * hidden;
}
std::size_t ModelShape::wr_offset() const { return b2_offset() + hidden; }
std::size_t ModelShape::wv_offset() const { return wr_offset() + hidden; }
std::size_t ModelShape::size() const {
  return wv_offset() + (has_variance() ? hidden : 0);
}

void GradientBuffer::zero() {
  auto v = values();
  std::fill(v.begin(), v.end(), 0.0);
}

GradientBuffer& GradientBuffer::operator+=(const GradientBuffer& other) {
  if (!(shape() == other.shape())) throw UsageError("gradient shape mismatch");
  auto dst = values();
  const auto src = other.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return *this;
}

ModelParams init_params(std::uint64_t seed, int d, int hidden,
                        VarianceParam variance) {
  if (d < 1 || hidden < 1) throw ConfigError("model dimensions must be >= 1");
  ModelParams m(ModelShape{d, hidden, variance});
  Rng rng(seed, "model_init");
  const auto fill = [&rng](std::span<double> w, double bound) {
    for (double& v : w) v = rng.uniform(-bound, bound);
  };
  fill(m.w1(), 1.0 / std::sqrt(2.0 * d));
  fill(m.w2(), 1.0 / std::sqrt(static_cast<double>(hidden)));
  fill(m.w_r(), 1.0 / std::sqrt(static_cast<double>(hidden)));
  if (m.shape().has_variance()) {
    fill(m.w_v(), 1.0 / std::sqrt(static_cast<double>(hidden)));
  }
  return m;
}

namespace detail {

StdAndSlope std_from_head(double t, VarianceParam vp) {
  if (vp == VarianceParam::kExp) {
    if (t < kMinHeadInput || t > kMaxExpHeadInput) {
      return {std::exp(std::clamp(t, kMinHeadInput, kMaxExpHeadInput)), 0.0};
    }
    const double s = std::exp(t);
    return {s, s};
  }
  if (t < kMinHeadInput) return {std::sqrt(softplus(kMinHeadInput)), 0.0};
  const double s = std::sqrt(softplus(t));
  return {s, sigmoid(t) / (2.0 * s)};
}

void check_batch(const ModelParams& m, const Batch& batch, const LossSpec& spec) {
  const bool pref = spec.kind != LossKind::kAnchor;
  const bool anchors = spec.kind == LossKind::kAnchor ||
                       (spec.kind == LossKind::kJoint && spec.lambda != 0.0);
  if (pref && batch.comparisons.empty()) {
    throw UsageError("loss '" + std::string(to_string(spec.kind)) +
                     "' needs a nonempty comparison batch");
  }
  if (anchors && batch.anchors.empty()) {
    throw UsageError("anchor loss needs a nonempty anchor batch");
  }
  const bool needs_variance = spec.kind == LossKind::kGaussianSoft ||
                              spec.kind == LossKind::kAnchor ||
                              spec.kind == LossKind::kJoint;
  if (needs_variance && !m.shape().has_variance()) {
    throw UsageError("loss '" + std::string(to_string(spec.kind)) +
                     "' requires a variance head");
  }
  if (spec.kind == LossKind::kJoint && !(spec.lambda >= 0.0)) {
    throw ConfigError("anchor weight lambda must be >= 0");
  }
  if (anchors) validate_thresholds(spec.thresholds);
  const auto d = static_cast<std::size_t>(m.shape().d);
  for (const auto& c : batch.comparisons) {
    if (c.x.size() != d || c.y1.size() != d || c.y2.size() != d) {
      throw ShapeError("comparison feature dimension does not match model");
    }
  }
  for (const auto& a : batch.anchors) {
    if (a.x.size() != d || a.y.size() != d) {
      throw ShapeError("anchor feature dimension does not match model");
    }
  }
}

}  // namespace detail

Prediction forward(const ModelParams& m, std::span<const double> x,
                   std::span<const double> y) {
  const ModelShape& s = m.shape();
  const auto d = static_cast<std::size_t>(s.d);
  if (x.size() != d || y.size() != d) {
    throw ShapeError("forward: feature dimension does not match model");
  }
  const auto hidden = static_cast<std::size_t>(s.hidden);
  const std::size_t in = 2 * d;
  std::vector<double> h1(hidden), h2(hidden);
  const auto w1 = m.w1();
  const auto b1 = m.b1();
  for (std::size_t j = 0; j < hidden; ++j) {
    double a = b1[j];
    for (std::size_t k = 0; k < d; ++k) a += w1[j * in + k] * x[k];
    for (std::size_t k = 0; k < d; ++k) a += w1[j * in + d + k] * y[k];
    h1[j] = a > 0.0 ? a : 0.0;
  }
  const auto w2 = m.w2();
  const auto b2 = m.b2();
  for (std::size_t j = 0; j < hidden; ++j) {
    double a = b2[j];
    for (std::size_t k = 0; k < hidden; ++k) a += w2[j * hidden + k] * h1[k];
    h2[j] = a > 0.0 ? a : 0.0;
  }
  Prediction out;
  const auto wr = m.w_r();
  for (std::size_t j = 0; j < hidden; ++j) out.mean += wr[j] * h2[j];
  if (s.has_variance()) {
    const auto wv = m.w_v();
    double t = 0.0;
    for (std::size_t j = 0; j < hidden; ++j) t += wv[j] * h2[j];
    out.std = detail::std_from_head(t, s.variance).std;
  }
  return out;
}

std::vector<Prediction> forward_many(const ModelParams& m,
                                     std::span<const Vec> xs,
                                     std::span<const Vec> ys) {
  if (xs.size() != ys.size()) throw UsageError("forward_many: size mismatch");
  std::vector<Prediction> out(xs.size());
  const auto n = static_cast<std::ptrdiff_t>(xs.size());
  // Exceptions must not escape the parallel region.
  bool bad_shape = false;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (xs[i].size() != static_cast<std::size_t>(m.shape().d) ||
        ys[i].size() != xs[i].size()) {
#pragma omp atomic write
      bad_shape = true;
      continue;
    }
    out[i] = forward(m, xs[i], ys[i]);
  }
  if (bad_shape) throw ShapeError("forward_many: feature dimension mismatch");
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'A', 'V', 'R', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

int variance_code(VarianceParam vp) {
  return vp == VarianceParam::kExp ? 0 : vp == VarianceParam::kSoftplus ? 1 : 2;
}

VarianceParam variance_from_code(int code) {
  switch (code) {
    case 0: return VarianceParam::kExp;
    case 1: return VarianceParam::kSoftplus;
    case 2: return VarianceParam::kNone;
  }
  throw SchemaError("checkpoint: unknown variance code");
}

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw SchemaError("checkpoint: truncated file");
  return value;
}

void copy_into(std::span<double> dst, const nlohmann::json& src,
               const char* name) {
  if (!src.is_array() || src.size() != dst.size()) {
    throw SchemaError(std::string("checkpoint: field '") + name +
                      "' has wrong size");
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i].get<double>();
}

}  // namespace

void save_checkpoint_json(const ModelParams& m,
                          const std::filesystem::path& path) {
  nlohmann::json j;
  j["d"] = m.shape().d;
  j["hidden"] = m.shape().hidden;
  j["variance_param"] = std::string(to_string(m.shape().variance));
  const auto arr = [](std::span<const double> v) {
    return nlohmann::json(std::vector<double>(v.begin(), v.end()));
  };
  j["w1"] = arr(m.w1());
  j["b1"] = arr(m.b1());
  j["w2"] = arr(m.w2());
  j["b2"] = arr(m.b2());
  j["w_r"] = arr(m.w_r());
  if (m.shape().has_variance()) j["w_v"] = arr(m.w_v());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

ModelParams load_checkpoint_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    ModelShape shape{j.at("d").get<int>(), j.at("hidden").get<int>(),
                     variance_param_from_string(
                         j.at("variance_param").get<std::string>())};
    if (shape.d < 1 || shape.hidden < 1) {
      throw SchemaError("checkpoint: dimensions must be >= 1");
    }
    ModelParams m(shape);
    copy_into(m.w1(), j.at("w1"), "w1");
    copy_into(m.b1(), j.at("b1"), "b1");
    copy_into(m.w2(), j.at("w2"), "w2");
    copy_into(m.b2(), j.at("b2"), "b2");
    copy_into(m.w_r(), j.at("w_r"), "w_r");
    if (shape.has_variance()) copy_into(m.w_v(), j.at("w_v"), "w_v");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint_binary(const ModelParams& m,
                            const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little,
                "binary checkpoints assume a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::int32_t>(m.shape().d));
  write_pod(out, static_cast<std::int32_t>(m.shape().hidden));
  write_pod(out, static_cast<std::int32_t>(variance_code(m.shape().variance)));
  const auto values = m.values();
  write_pod(out, static_cast<std::uint64_t>(values.size()));
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw SchemaError("checkpoint: bad magic");
  }
  if (read_pod<std::uint32_t>(in) != kVersion) {
    throw SchemaError("checkpoint: unsupported version");
  }
  ModelShape shape;
  shape.d = read_pod<std::int32_t>(in);
  shape.hidden = read_pod<std::int32_t>(in);
  shape.variance = variance_from_code(read_pod<std::int32_t>(in));
  if (shape.d < 1 || shape.hidden < 1) {
    throw SchemaError("checkpoint: dimensions must be >= 1");
  }
  const auto count = read_pod<std::uint64_t>(in);
  if (count != shape.size()) throw SchemaError("checkpoint: size mismatch");
  ModelParams m(shape);
  auto values = m.values();
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw SchemaError("checkpoint: truncated weights");
  return m;
}

}  // namespace avrm
