#pragma once

namespace avrm {

// Floor applied to every probability before it enters a log.
inline constexpr double kProbEpsilon = 1e-7;

// Standard normal CDF, Phi(z) = erfc(-z / sqrt(2)) / 2. Throws DomainError on
// non-finite input.
double std_normal_cdf(double z);

// Standard normal density. Underflows to 0 for large |z|.
double std_normal_pdf(double z);

// Inverse of std_normal_cdf on (0, 1). Rational initial guess refined by
// Newton steps; |Phi(Phi^-1(p)) - p| <= 1e-9. Exactly antisymmetric:
// Phi^-1(p) == -Phi^-1(1 - p) whenever 1 - p is exact.
double std_normal_quantile(double p);

// min(max(p, eps), 1 - eps).
double clamp_prob(double p) noexcept;

// True when clamp_prob(p) != p, i.e. the derivative of the clamp is zero.
bool is_clamped(double p) noexcept;

double sigmoid(double x) noexcept;

// log(1 + exp(x)) without overflow.
double softplus(double x) noexcept;

}  // namespace avrm
