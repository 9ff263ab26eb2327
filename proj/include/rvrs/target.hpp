#pragma once

#include <cmath>
#include <concepts>
#include <string>

#include "error.hpp"
#include "math.hpp"
#include "proposal.hpp"
#include "types.hpp"

namespace rvrs {

/// Unnormalized log-joint log p_theta(x, z) with analytic gradients.
template <class T>
concept TargetModel = requires(const T& t, const Vector& theta, const Vector& z) {
  { t.latent_dim() } -> std::convertible_to<Eigen::Index>;
  { t.theta_dim() } -> std::convertible_to<Eigen::Index>;
  { t.default_theta() } -> std::convertible_to<Vector>;
  { t.log_joint(theta, z) } -> std::convertible_to<double>;
  { t.grad_z_log_joint(theta, z) } -> std::convertible_to<Vector>;
  { t.grad_theta_log_joint(theta, z) } -> std::convertible_to<Vector>;
};

namespace detail {

inline void check_theta(const Vector& theta, Eigen::Index theta_dim, const char* who) {
  if (theta.size() != theta_dim) {
    throw DimensionError(std::string(who) + ": theta has dimension " + std::to_string(theta.size()) +
                         ", expected " + std::to_string(theta_dim));
  }
}

[[noreturn]] inline void throw_no_theta(const char* who) {
  throw NoThetaError(std::string(who) + ": target has no model parameters");
}

}  // namespace detail

/// log_Zp + log N(z | mean, L L^T). theta = (log_Zp), so the exact posterior is the
/// Normal itself and the exact log evidence is theta[0].
class AnalyticGaussianTarget {
 public:
  AnalyticGaussianTarget(double log_Zp, Vector mean, Matrix chol)
      : log_Zp_(log_Zp),
        density_(FullRankNormal(mean, chol.diagonal().array().log().matrix(),
                                Matrix(chol.triangularView<Eigen::StrictlyLower>()))) {
    if ((chol.diagonal().array() <= 0.0).any()) {
      throw Error("AnalyticGaussianTarget: Cholesky diagonal must be positive");
    }
  }

  static AnalyticGaussianTarget standard(Eigen::Index dim, double log_Zp = 0.0) {
    return AnalyticGaussianTarget(log_Zp, Vector::Zero(dim), Matrix::Identity(dim, dim));
  }

  // Diagonal covariance diag(sd^2).
  static AnalyticGaussianTarget diagonal(double log_Zp, const Vector& mean, const Vector& sd) {
    return AnalyticGaussianTarget(log_Zp, mean, Matrix(sd.asDiagonal()));
  }

  Eigen::Index latent_dim() const { return density_.dim(); }
  Eigen::Index theta_dim() const { return 1; }
  Vector default_theta() const { return Vector::Constant(1, log_Zp_); }
  double log_Zp() const { return log_Zp_; }
  const FullRankNormal& posterior() const { return density_; }

  double log_joint(const Vector& theta, const Vector& z) const {
    detail::check_theta(theta, 1, "AnalyticGaussianTarget::log_joint");
    return theta[0] + density_.log_density(z);
  }

  Vector grad_z_log_joint(const Vector& theta, const Vector& z) const {
    detail::check_theta(theta, 1, "AnalyticGaussianTarget::grad_z_log_joint");
    return density_.grad_log_density(z);
  }

  Vector grad_theta_log_joint(const Vector& theta, const Vector& z) const {
    detail::check_theta(theta, 1, "AnalyticGaussianTarget::grad_theta_log_joint");
    detail::check_dim(z, latent_dim(), "AnalyticGaussianTarget::grad_theta_log_joint");
    return Vector::Ones(1);
  }

 private:
  double log_Zp_;
  FullRankNormal density_;
};

/// Normalized 2-D funnel: with u = (x+y)/sqrt2 and v = (x-y)/sqrt2,
/// log N(u | 0, 1) + log N(v | 0, e^u).
class FunnelTarget {
 public:
  Eigen::Index latent_dim() const { return 2; }
  Eigen::Index theta_dim() const { return 0; }
  Vector default_theta() const { return Vector(0); }

  double log_joint(const Vector& theta, const Vector& z) const {
    check(theta, z, "FunnelTarget::log_joint");
    const double u = (z[0] + z[1]) * kInvSqrt2;
    const double v = (z[0] - z[1]) * kInvSqrt2;
    return -kLogTwoPi - 0.5 * u * u - 0.5 * u - 0.5 * v * v * std::exp(-u);
  }

  Vector grad_z_log_joint(const Vector& theta, const Vector& z) const {
    check(theta, z, "FunnelTarget::grad_z_log_joint");
    const double u = (z[0] + z[1]) * kInvSqrt2;
    const double v = (z[0] - z[1]) * kInvSqrt2;
    const double e = std::exp(-u);
    const double gu = -u - 0.5 + 0.5 * v * v * e;
    const double gv = -v * e;
    Vector g(2);
    g << (gu + gv) * kInvSqrt2, (gu - gv) * kInvSqrt2;
    return g;
  }

  Vector grad_theta_log_joint(const Vector&, const Vector&) const {
    detail::throw_no_theta("FunnelTarget::grad_theta_log_joint");
  }

 private:
  static constexpr double kInvSqrt2 = 0.70710678118654752440;

  static void check(const Vector& theta, const Vector& z, const char* who) {
    detail::check_theta(theta, 0, who);
    detail::check_dim(z, 2, who);
  }
};

/// Bayesian logistic regression with a standard Normal prior on the weights.
class LogisticRegressionTarget {
 public:
  LogisticRegressionTarget(Matrix features, Vector labels)
      : features_(std::move(features)), labels_(std::move(labels)) {
    if (features_.rows() != labels_.size() || features_.cols() < 1) {
      throw DimensionError("LogisticRegressionTarget: features/labels shape mismatch");
    }
    for (Eigen::Index n = 0; n < labels_.size(); ++n) {
      if (labels_[n] != 0.0 && labels_[n] != 1.0) throw DataError("LogisticRegressionTarget: labels must be 0/1");
    }
  }

  Eigen::Index latent_dim() const { return features_.cols(); }
  Eigen::Index theta_dim() const { return 0; }
  Vector default_theta() const { return Vector(0); }
  Eigen::Index num_data() const { return features_.rows(); }
  const Matrix& features() const { return features_; }
  const Vector& labels() const { return labels_; }

  double log_joint(const Vector& theta, const Vector& z) const {
    check(theta, z, "LogisticRegressionTarget::log_joint");
    const Vector s = features_ * z;
    double ll = 0.0;
    for (Eigen::Index n = 0; n < s.size(); ++n) ll += labels_[n] * s[n] - softplus(s[n]);
    return ll - 0.5 * z.squaredNorm() - 0.5 * static_cast<double>(z.size()) * kLogTwoPi;
  }

  // -z + X^T (y - sigmoid(X z))
  Vector grad_z_log_joint(const Vector& theta, const Vector& z) const {
    check(theta, z, "LogisticRegressionTarget::grad_z_log_joint");
    Vector resid = features_ * z;
    for (Eigen::Index n = 0; n < resid.size(); ++n) resid[n] = labels_[n] - sigmoid(resid[n]);
    return features_.transpose() * resid - z;
  }

  Vector grad_theta_log_joint(const Vector&, const Vector&) const {
    detail::throw_no_theta("LogisticRegressionTarget::grad_theta_log_joint");
  }

 private:
  void check(const Vector& theta, const Vector& z, const char* who) const {
    detail::check_theta(theta, 0, who);
    detail::check_dim(z, latent_dim(), who);
  }

  Matrix features_;
  Vector labels_;
};

}  // namespace rvrs
