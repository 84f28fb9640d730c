#pragma once

#include <array>
#include <cmath>

#include "cpr/error.hpp"
#include "cpr/normal.hpp"

namespace cpr {

/// Normalizer and first two moments of N(mean, variance) restricted to (0, inf).
struct TruncatedMoments1d {
  double mass;
  double logMass;
  double mean;
  double variance;
};

inline TruncatedMoments1d truncnorm_moments_1d(double mean, double variance) {
  if (!(variance > 0.0) || !std::isfinite(variance))
    throw InvalidInput("truncnorm_moments_1d: variance must be positive");
  if (!std::isfinite(mean)) throw InvalidInput("truncnorm_moments_1d: non-finite mean");
  const double sd = std::sqrt(variance);
  const double z = mean / sd;
  TruncatedMoments1d out{};
  out.logMass = log_norm_cdf(z);
  out.mass = std::exp(out.logMass);
  if (z >= detail::kTailSwitch) {
    const double r = inverse_mills_ratio(z);
    out.mean = mean + sd * r;
    out.variance = variance * (1.0 - r * (z + r));
  } else {
    // r = x + t with x = -z, so z + r = t; 1 - r (z + r) = (u - t) / (x + u).
    const double x = -z;
    const auto [t, u] = detail::mills_tail(x);
    out.mean = sd * t;
    out.variance = variance * (u - t) / (x + u);
  }
  return out;
}

/// First four cumulants of N(mean, variance) restricted to (0, inf).
/// With u = (x - mean)/sd truncated below at l = -mean/sd and hazard
/// h(l) = phi(l)/(1 - Phi(l)), the cumulants of u are h, 1 - h', h'' and
/// -h''' where h' = h (h - l).
inline std::array<double, 4> truncnorm_cumulants_1d(double mean, double variance) {
  if (!(variance > 0.0) || !std::isfinite(variance))
    throw InvalidInput("truncnorm_cumulants_1d: variance must be positive");
  const double sd = std::sqrt(variance);
  const double z = mean / sd;
  const double l = -z;
  double h, gap;  // gap = h - l
  if (z >= detail::kTailSwitch) {
    h = inverse_mills_ratio(z);
    gap = h + z;
  } else {
    gap = detail::mills_tail(-z).t;
    h = l + gap;
  }
  const double d1 = h * gap;
  const double d2 = d1 * gap + h * (d1 - 1.0);
  const double d3 = d2 * gap + 2.0 * d1 * (d1 - 1.0) + h * d2;
  return {mean + sd * h, variance * (1.0 - d1), variance * sd * d2, -variance * variance * d3};
}

}  // namespace cpr
