#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ranges>
#include <span>

#include "qsi/errors.hpp"

namespace qsi {

/// ln Γ(x) for x > 0.
///
/// Backed by the C library's lgamma. On glibc the reentrant lgamma_r is used
/// so concurrent callers never race on the global `signgam`.
inline double log_gamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError("log_gamma: argument must be finite and positive");
  }
#if defined(__GLIBC__)
  int sign = 0;
  return ::lgamma_r(x, &sign);
#else
  return std::lgamma(x);
#endif
}

inline double log_factorial(std::size_t n) { return log_gamma(static_cast<double>(n) + 1.0); }

/// ln Σ exp(v). Returns -inf for an empty range or when every entry is -inf.
inline double log_sum_exp(std::span<const double> values) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  double peak = kNegInf;
  for (double v : values) peak = std::max(peak, v);
  if (peak == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - peak);
  return peak + std::log(acc);
}

// Kummer's confluent hypergeometric function with lower parameter b = 1/2,
// restricted to upper parameters a = j + 1/2 (j = 0, 1, 2, ...) and x >= 0.
// Every term of either representation below is nonnegative, so neither
// route suffers cancellation.

namespace kummer {

/// Largest argument evaluated by the ascending series; beyond it the
/// terminating Kummer-transformed form is used.
inline constexpr double kSeriesMaxArgument = 50.0;
inline constexpr int kSeriesMaxTerms = 500;
inline constexpr double kSeriesRelTol = 1e-16;

/// Returns j when a = j + 1/2 for a nonnegative integer j; throws otherwise.
inline int half_integer_index(double a) {
  const double j = a - 0.5;
  if (!(j >= 0.0) || j != std::floor(j) || j > 1e6) {
    throw DomainError("kummer: upper parameter must be a positive half-integer");
  }
  return static_cast<int>(j);
}

inline void check_argument(double x) {
  if (!(x >= 0.0) || !std::isfinite(x)) {
    throw DomainError("kummer: argument must be finite and nonnegative");
  }
}

/// 1F1(a; 1/2; x) by the ascending series, linear space.
/// Stops once a term is below 1e-16 of the partial sum or after 500 terms.
inline double series(double a, double x) {
  half_integer_index(a);
  check_argument(x);
  double term = 1.0;
  double sum = 1.0;
  for (int k = 0; k < kSeriesMaxTerms; ++k) {
    term *= (a + k) / (0.5 + k) * x / (k + 1.0);
    sum += term;
    if (term <= kSeriesRelTol * sum) break;
  }
  return sum;
}

/// ln(e^{-x} 1F1(j + 1/2; 1/2; x)) through Kummer's transformation
///   1F1(a; b; x) = e^x 1F1(b - a; b; -x),
/// which for b - a = -j terminates after j + 1 terms:
///   Σ_{i=0..j} j! / ((j-i)! i! (1/2)_i) x^i.
/// Exact for any x >= 0; summed in log space so huge x does not overflow.
inline double log_terminating_scaled(double a, double x) {
  const int j = half_integer_index(a);
  check_argument(x);
  if (j == 0 || x == 0.0) return 0.0;
  const double log_x = std::log(x);
  double log_term = 0.0;
  double peak = 0.0;
  // Two passes (peak, then sum) keep the accumulation in range without
  // storing all terms.
  for (int i = 0; i < j; ++i) {
    log_term += std::log(static_cast<double>(j - i)) - std::log(i + 1.0) - std::log(i + 0.5) + log_x;
    peak = std::max(peak, log_term);
  }
  log_term = 0.0;
  double acc = std::exp(-peak);
  for (int i = 0; i < j; ++i) {
    log_term += std::log(static_cast<double>(j - i)) - std::log(i + 1.0) - std::log(i + 0.5) + log_x;
    acc += std::exp(log_term - peak);
  }
  return peak + std::log(acc);
}

}  // namespace kummer

/// ln 1F1(a; 1/2; x) for a a positive half-integer and x >= 0.
inline double log_kummer_half(double a, double x) {
  if (x <= kummer::kSeriesMaxArgument) {
    return std::log(kummer::series(a, x));
  }
  return x + kummer::log_terminating_scaled(a, x);
}

/// ln(e^{-x} 1F1(a; 1/2; x)). Removing the e^x growth analytically lets
/// callers combine several exponentials without catastrophic cancellation.
inline double log_kummer_half_scaled(double a, double x) {
  if (x <= kummer::kSeriesMaxArgument) {
    return std::log(kummer::series(a, x)) - x;
  }
  return kummer::log_terminating_scaled(a, x);
}

}  // namespace qsi
