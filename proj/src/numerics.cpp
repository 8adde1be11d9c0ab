#include "avrm/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "avrm/errors.hpp"

namespace avrm {
namespace {

void require_finite(double z, const char* fn) {
  if (!std::isfinite(z)) {
    throw DomainError(std::string(fn) + ": non-finite argument");
  }
}

// Acklam's rational approximation for the lower half (p <= 0.5). Relative
// error about 1e-9 before refinement.
double acklam_lower(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
            c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
         q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double std_normal_cdf(double z) {
  require_finite(z, "std_normal_cdf");
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

double std_normal_pdf(double z) {
  require_finite(z, "std_normal_pdf");
  constexpr double inv_sqrt_2pi = 0.3989422804014326779399460599343819;
  return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("std_normal_quantile: p must lie in (0, 1)");
  }
  if (p > 0.5) return -std_normal_quantile(1.0 - p);
  if (p == 0.5) return 0.0;
  double x = acklam_lower(p);
  // Newton refinement. In the lower half Phi(x) is computed with full
  // relative accuracy by erfc, so the residual stays meaningful in the tail.
  for (int iter = 0; iter < 2; ++iter) {
    const double density = std_normal_pdf(x);
    if (density <= 0.0) break;
    x -= (std_normal_cdf(x) - p) / density;
  }
  return x;
}

double clamp_prob(double p) noexcept {
  return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
}

bool is_clamped(double p) noexcept {
  return p < kProbEpsilon || p > 1.0 - kProbEpsilon;
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) noexcept {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace avrm
