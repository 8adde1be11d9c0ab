#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace avrm {

// Mixes a base seed with a stream tag so that every dataset kind (ground truth,
// preferences, anchors, corruption, masking, init, shuffling) draws from an
// independent stream. SplitMix64 finalizer over an FNV-1a hash of the tag.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                          std::uint64_t index);

// Seedable generator with platform-independent output. The engine is
// std::mt19937_64, whose sequence the standard fixes; the distributions are
// implemented here because the standard library's are not portable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view stream)
      : engine_(derive_seed(seed, stream)) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n), rejection sampled (no modulo bias). n > 0.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via the Box-Muller transform.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  void fill_normal(std::span<double> out, double stddev = 1.0);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace avrm
