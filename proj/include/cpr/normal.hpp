#pragma once

#include <cmath>
#include <numbers>

namespace cpr {

inline constexpr double kInvSqrt2Pi = 0.3989422804014327;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274;

inline double norm_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

namespace detail {

// Below this the tail quantities switch to the continued fraction.
inline constexpr double kTailSwitch = -6.0;

/// Tails of the continued fraction for the upper-tail Mills ratio
///   R(x) = (1 - Phi(x)) / phi(x) = 1 / (x + 1 / (x + 2 / (x + 3 / ...)))
/// Returns (t, u) with t = 1/(x + 2/(x + ...)) and u = 2/(x + 3/(x + ...)),
/// so that R(x) = 1 / (x + t). Only used for x >= 6 where 120 terms are far
/// beyond double precision.
struct MillsTail {
  double t;
  double u;
};

inline MillsTail mills_tail(double x) {
  double c = 0.0;
  for (int k = 120; k >= 2; --k) c = k / (x + c);
  const double u = c;
  const double t = 1.0 / (x + u);
  return {t, u};
}

}  // namespace detail

/// log Phi(z), accurate for arbitrarily negative z.
inline double log_norm_cdf(double z) {
  if (z >= detail::kTailSwitch) return std::log(norm_cdf(z));
  const auto [t, u] = detail::mills_tail(-z);
  // Phi(z) = phi(z) * R(-z) = phi(z) / (-z + t)
  return -0.5 * z * z - kLogSqrt2Pi - std::log(-z + t);
}

/// phi(z) / Phi(z) without overflow or cancellation for z << 0.
inline double inverse_mills_ratio(double z) {
  if (z >= detail::kTailSwitch) return norm_pdf(z) / norm_cdf(z);
  return -z + detail::mills_tail(-z).t;
}

}  // namespace cpr
