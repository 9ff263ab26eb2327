#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rvrs {

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;  // log(2 pi)

// log(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double log_sigmoid(double u) { return -softplus(-u); }

inline double sigmoid(double u) {
  const double e = std::exp(-std::abs(u));
  return u >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
}

inline double log_add_exp(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline double normal_log_pdf(double x, double mean, double sd) {
  const double r = (x - mean) / sd;
  return -0.5 * kLogTwoPi - std::log(sd) - 0.5 * r * r;
}

}  // namespace rvrs
