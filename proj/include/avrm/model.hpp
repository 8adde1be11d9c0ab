#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "avrm/objectives.hpp"
#include "avrm/records.hpp"

namespace avrm {

// How the variance head output t = w_v'h becomes a standard deviation.
//   kExp:      s = exp(t)                (log-std head)
//   kSoftplus: s^2 = softplus(t)         (softplus on the variance)
//   kNone:     no variance head (Bradley-Terry models)
enum class VarianceParam { kExp, kSoftplus, kNone };

std::string_view to_string(VarianceParam vp);
VarianceParam variance_param_from_string(std::string_view name);

// Architecture of the reward model: input (x, y) concatenated to 2d features,
// two ReLU layers of width `hidden`, a linear mean head and an optional linear
// variance head. No head biases.
struct ModelShape {
  int d = 10;
  int hidden = 64;
  VarianceParam variance = VarianceParam::kExp;

  int input() const { return 2 * d; }
  bool has_variance() const { return variance != VarianceParam::kNone; }

  // Flat layout in declaration order: w1 (hidden x 2d, row-major), b1, w2
  // (hidden x hidden), b2, w_r, then w_v when present.
  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const;
  std::size_t w2_offset() const;
  std::size_t b2_offset() const;
  std::size_t wr_offset() const;
  std::size_t wv_offset() const;
  std::size_t size() const;

  bool operator==(const ModelShape&) const = default;
};

// Flat parameter storage with named views onto each tensor.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(const ModelShape& shape)
      : shape_(shape), values_(shape.size(), 0.0) {}

  const ModelShape& shape() const { return shape_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double> w1() { return view(shape_.w1_offset(), w1_size()); }
  std::span<double> b1() { return view(shape_.b1_offset(), hidden()); }
  std::span<double> w2() { return view(shape_.w2_offset(), w2_size()); }
  std::span<double> b2() { return view(shape_.b2_offset(), hidden()); }
  std::span<double> w_r() { return view(shape_.wr_offset(), hidden()); }
  std::span<double> w_v() { return view(shape_.wv_offset(), wv_size()); }
  std::span<const double> w1() const { return view(shape_.w1_offset(), w1_size()); }
  std::span<const double> b1() const { return view(shape_.b1_offset(), hidden()); }
  std::span<const double> w2() const { return view(shape_.w2_offset(), w2_size()); }
  std::span<const double> b2() const { return view(shape_.b2_offset(), hidden()); }
  std::span<const double> w_r() const { return view(shape_.wr_offset(), hidden()); }
  std::span<const double> w_v() const { return view(shape_.wv_offset(), wv_size()); }

  bool operator==(const ParamVector&) const = default;

 private:
  std::size_t hidden() const { return static_cast<std::size_t>(shape_.hidden); }
  std::size_t w1_size() const { return hidden() * shape_.input(); }
  std::size_t w2_size() const { return hidden() * hidden(); }
  std::size_t wv_size() const { return shape_.has_variance() ? hidden() : 0; }
  std::span<double> view(std::size_t off, std::size_t n) {
    return std::span(values_).subspan(off, n);
  }
  std::span<const double> view(std::size_t off, std::size_t n) const {
    return std::span(values_).subspan(off, n);
  }

  ModelShape shape_;
  std::vector<double> values_;
};

// Learnable reward model weights.
class ModelParams : public ParamVector {
 public:
  using ParamVector::ParamVector;
};

// Accumulated partial derivatives, congruent with a ModelParams.
class GradientBuffer : public ParamVector {
 public:
  using ParamVector::ParamVector;
  void zero();
  GradientBuffer& operator+=(const GradientBuffer& other);
};

// Layers: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero; heads drawn
// uniform and scaled by 1/sqrt(hidden) so initial outputs stay near 0 (and
// s near 1 for the exp head). Deterministic per seed.
ModelParams init_params(std::uint64_t seed, int d, int hidden = 64,
                        VarianceParam variance = VarianceParam::kExp);

struct Prediction {
  double mean = 0.0;
  std::optional<double> std;  // absent without a variance head
};

// Throws ShapeError when x or y does not have dimension d.
Prediction forward(const ModelParams& m, std::span<const double> x,
                   std::span<const double> y);

// Predictions for many responses; parallel over responses, order preserved.
std::vector<Prediction> forward_many(const ModelParams& m,
                                     std::span<const Vec> xs,
                                     std::span<const Vec> ys);

struct Batch {
  std::span<const ComparisonRecord> comparisons;
  std::span<const AnchorRecord> anchors;
};

struct LossAndGrad {
  double loss = 0.0;
  double pref_loss = 0.0;    // mean preference term (0 if unused)
  double anchor_loss = 0.0;  // mean anchor term (0 if unused)
  GradientBuffer grads;
};

// Objective value and its exact gradient by explicit backpropagation.
//   bt_soft / bt_hard / gaussian_soft: mean over comparisons
//   anchor: mean over unmasked anchor records
//   joint: gaussian_soft + lambda * anchor (lambda == 0 skips anchors)
// Blocked OpenMP kernel: work is split into fixed-size blocks whose partial
// gradients are summed in block order, so the result does not depend on the
// thread count. Throws UsageError for an empty batch or a variance loss on a
// model without a variance head.
LossAndGrad loss_and_grad(const ModelParams& m, const Batch& batch,
                          const LossSpec& spec);

// Serial per-example reference of loss_and_grad, written for clarity. Kept
// for testing and benchmarking the parallel kernel.
LossAndGrad loss_and_grad_reference(const ModelParams& m, const Batch& batch,
                                    const LossSpec& spec);

// Objective value only (no backward pass).
LossAndGrad evaluate_loss(const ModelParams& m, const Batch& batch,
                          const LossSpec& spec);

// Checkpoints. JSON: {"d", "hidden", "variance_param", "w1", "b1", "w2", "b2",
// "w_r", "w_v"?}. Binary: magic "AVRMCKPT", uint32 version, int32 d, int32
// hidden, int32 variance (0 exp, 1 softplus, 2 none), uint64 count, then count
// little-endian doubles in flat layout order.
void save_checkpoint_json(const ModelParams& m, const std::filesystem::path& path);
ModelParams load_checkpoint_json(const std::filesystem::path& path);
void save_checkpoint_binary(const ModelParams& m,
                            const std::filesystem::path& path);
ModelParams load_checkpoint_binary(const std::filesystem::path& path);

// Variance head transforms, shared by forward and the gradient kernels.
namespace detail {
inline constexpr double kMinHeadInput = -40.0;
inline constexpr double kMaxExpHeadInput = 40.0;
struct StdAndSlope {
  double std;
  double slope;  // ds/dt, zero where the head input is clamped
};
StdAndSlope std_from_head(double t, VarianceParam vp);
void check_batch(const ModelParams& m, const Batch& batch, const LossSpec& spec);
}  // namespace detail

}  // namespace avrm
