#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <vector>

#include "rvrs/types.hpp"

namespace testsupport {

inline rvrs::Vector vec(std::initializer_list<double> xs) {
  rvrs::Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

/// Running mean and standard error per coordinate.
class MeanAccumulator {
 public:
  explicit MeanAccumulator(Eigen::Index dim) : sum_(rvrs::Vector::Zero(dim)), sum2_(rvrs::Vector::Zero(dim)) {}

  void add(const rvrs::Vector& x) {
    sum_ += x;
    sum2_ += x.cwiseAbs2();
    ++n_;
  }

  long long count() const { return n_; }
  rvrs::Vector mean() const { return sum_ / static_cast<double>(n_); }
  rvrs::Vector variance() const {
    const rvrs::Vector m = mean();
    return ((sum2_ / static_cast<double>(n_) - m.cwiseAbs2()) * static_cast<double>(n_) /
            static_cast<double>(n_ - 1))
        .cwiseMax(0.0);
  }
  rvrs::Vector std_err() const { return (variance() / static_cast<double>(n_)).cwiseSqrt(); }

 private:
  rvrs::Vector sum_;
  rvrs::Vector sum2_;
  long long n_ = 0;
};

// Asymptotic two-sample Kolmogorov-Smirnov p-value.
inline double ks_two_sample_p(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  const double ne = static_cast<double>(a.size()) * b.size() / (a.size() + b.size());
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace testsupport
