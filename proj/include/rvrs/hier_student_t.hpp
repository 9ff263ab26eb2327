#pragma once

#include <cmath>
#include <string>

#include <boost/math/special_functions/digamma.hpp>

#include "error.hpp"
#include "math.hpp"
#include "target.hpp"
#include "types.hpp"

namespace rvrs {

/// Bayesian linear regression with a Student-t likelihood written as a scale mixture:
///   beta, b ~ N(0, prior_sd^2),  lambda_n ~ Gamma(nu/2, rate nu/2),
///   y_n | lambda_n ~ N(x_n . beta + b, sigma^2 / lambda_n).
/// Local latents are z_n = log lambda_n; theta = (log nu, log sigma).
/// Global latent layout: [beta (D_x), b].
class HierStudentTModel {
 public:
  HierStudentTModel(Matrix features, Vector responses, double nu = 4.0, double sigma = 0.5,
                    double prior_sd = 1.0)
      : x_(std::move(features)), y_(std::move(responses)), nu_(nu), sigma_(sigma), prior_sd_(prior_sd) {
    if (x_.rows() != y_.size() || x_.rows() < 1) {
      throw DimensionError("HierStudentTModel: features/responses shape mismatch");
    }
    if (!(nu > 0.0) || !(sigma > 0.0) || !(prior_sd > 0.0)) {
      throw Error("HierStudentTModel: nu, sigma and prior_sd must be positive");
    }
  }

  Eigen::Index num_data() const { return x_.rows(); }
  Eigen::Index feature_dim() const { return x_.cols(); }
  Eigen::Index global_dim() const { return x_.cols() + 1; }
  Eigen::Index theta_dim() const { return 2; }
  Vector default_theta() const { return Vector{{std::log(nu_), std::log(sigma_)}}; }
  double prior_sd() const { return prior_sd_; }
  const Matrix& features() const { return x_; }
  const Vector& responses() const { return y_; }

  double log_prior_global(const Vector& zg) const {
    detail::check_dim(zg, global_dim(), "HierStudentTModel::log_prior_global");
    const double n = static_cast<double>(zg.size());
    return -0.5 * n * kLogTwoPi - n * std::log(prior_sd_) - 0.5 * zg.squaredNorm() / (prior_sd_ * prior_sd_);
  }

  Vector grad_log_prior_global(const Vector& zg) const {
    detail::check_dim(zg, global_dim(), "HierStudentTModel::grad_log_prior_global");
    return -zg / (prior_sd_ * prior_sd_);
  }

  /// log Gamma(lambda | nu/2, nu/2) + log lambda + log N(y_n | m_n, sigma^2/lambda), lambda = e^{z_n}.
  double local_log_joint(const Vector& theta, const Vector& zg, Eigen::Index n, double zn) const {
    const Local l = local(theta, zg, n, "HierStudentTModel::local_log_joint");
    const double lam = std::exp(zn);
    return l.a * std::log(l.a) - std::lgamma(l.a) + l.a * zn - l.a * lam - 0.5 * kLogTwoPi - l.log_sigma +
           0.5 * zn - 0.5 * lam * l.r * l.r / l.var;
  }

  double grad_local_zn(const Vector& theta, const Vector& zg, Eigen::Index n, double zn) const {
    const Local l = local(theta, zg, n, "HierStudentTModel::grad_local_zn");
    const double lam = std::exp(zn);
    return l.a - l.a * lam + 0.5 - 0.5 * lam * l.r * l.r / l.var;
  }

  Vector grad_local_global(const Vector& theta, const Vector& zg, Eigen::Index n, double zn) const {
    const Local l = local(theta, zg, n, "HierStudentTModel::grad_local_global");
    return mean_jacobian(n) * (std::exp(zn) * l.r / l.var);
  }

  Vector grad_local_theta(const Vector& theta, const Vector& zg, Eigen::Index n, double zn) const {
    const Local l = local(theta, zg, n, "HierStudentTModel::grad_local_theta");
    const double lam = std::exp(zn);
    Vector g(2);
    g[0] = l.a * (std::log(l.a) + 1.0 - boost::math::digamma(l.a) + zn - lam);
    g[1] = -1.0 + lam * l.r * l.r / l.var;
    return g;
  }

  /// Student-t(nu, m_n, sigma) log density of y_n: the local latent integrated out.
  double marginal_log_lik(const Vector& theta, const Vector& zg, Eigen::Index n) const {
    const Local l = local(theta, zg, n, "HierStudentTModel::marginal_log_lik");
    const double nu = 2.0 * l.a;
    return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * M_PI) - l.log_sigma -
           0.5 * (nu + 1.0) * std::log1p(l.r * l.r / (nu * l.var));
  }

  Vector grad_marginal_global(const Vector& theta, const Vector& zg, Eigen::Index n) const {
    const Local l = local(theta, zg, n, "HierStudentTModel::grad_marginal_global");
    const double nu = 2.0 * l.a;
    return mean_jacobian(n) * ((nu + 1.0) * l.r / (nu * l.var + l.r * l.r));
  }

  Vector grad_marginal_theta(const Vector& theta, const Vector& zg, Eigen::Index n) const {
    const Local l = local(theta, zg, n, "HierStudentTModel::grad_marginal_theta");
    const double nu = 2.0 * l.a;
    const double r2 = l.r * l.r;
    const double denom = nu * l.var + r2;
    Vector g(2);
    g[0] = nu * (0.5 * boost::math::digamma(0.5 * (nu + 1.0)) - 0.5 * boost::math::digamma(0.5 * nu) -
                 0.5 / nu - 0.5 * std::log1p(r2 / (nu * l.var)) + 0.5 * (nu + 1.0) * r2 / (nu * denom));
    g[1] = -1.0 + (nu + 1.0) * r2 / denom;
    return g;
  }

  double residual(const Vector& zg, Eigen::Index n) const {
    return y_[n] - x_.row(n).dot(zg.head(feature_dim())) - zg[feature_dim()];
  }

 private:
  struct Local {
    double a;  // nu / 2
    double log_sigma;
    double var;  // sigma^2
    double r;    // y_n - x_n . beta - b
  };

  Local local(const Vector& theta, const Vector& zg, Eigen::Index n, const char* who) const {
    detail::check_theta(theta, 2, who);
    detail::check_dim(zg, global_dim(), who);
    if (n < 0 || n >= num_data()) {
      throw IndexError(std::string(who) + ": datapoint index " + std::to_string(n) + " out of range");
    }
    return {0.5 * std::exp(theta[0]), theta[1], std::exp(2.0 * theta[1]), residual(zg, n)};
  }

  // d m_n / d z_G
  Vector mean_jacobian(Eigen::Index n) const {
    Vector j(global_dim());
    j.head(feature_dim()) = x_.row(n).transpose();
    j[feature_dim()] = 1.0;
    return j;
  }

  Matrix x_;
  Vector y_;
  double nu_;
  double sigma_;
  double prior_sd_;
};

/// The full joint over [z_G, z_1, ..., z_N] as a single TargetModel.
class HierJointTarget {
 public:
  explicit HierJointTarget(const HierStudentTModel& model) : m_(&model) {}

  Eigen::Index latent_dim() const { return m_->global_dim() + m_->num_data(); }
  Eigen::Index theta_dim() const { return 2; }
  Vector default_theta() const { return m_->default_theta(); }

  double log_joint(const Vector& theta, const Vector& z) const {
    detail::check_dim(z, latent_dim(), "HierJointTarget::log_joint");
    const Vector zg = z.head(m_->global_dim());
    double lp = m_->log_prior_global(zg);
    for (Eigen::Index n = 0; n < m_->num_data(); ++n) lp += m_->local_log_joint(theta, zg, n, z[m_->global_dim() + n]);
    return lp;
  }

  Vector grad_z_log_joint(const Vector& theta, const Vector& z) const {
    detail::check_dim(z, latent_dim(), "HierJointTarget::grad_z_log_joint");
    const Eigen::Index g = m_->global_dim();
    const Vector zg = z.head(g);
    Vector out(latent_dim());
    out.head(g) = m_->grad_log_prior_global(zg);
    for (Eigen::Index n = 0; n < m_->num_data(); ++n) {
      out.head(g) += m_->grad_local_global(theta, zg, n, z[g + n]);
      out[g + n] = m_->grad_local_zn(theta, zg, n, z[g + n]);
    }
    return out;
  }

  Vector grad_theta_log_joint(const Vector& theta, const Vector& z) const {
    detail::check_dim(z, latent_dim(), "HierJointTarget::grad_theta_log_joint");
    const Eigen::Index g = m_->global_dim();
    const Vector zg = z.head(g);
    Vector out = Vector::Zero(2);
    for (Eigen::Index n = 0; n < m_->num_data(); ++n) out += m_->grad_local_theta(theta, zg, n, z[g + n]);
    return out;
  }

 private:
  const HierStudentTModel* m_;
};

/// Local latents integrated out analytically: prior(z_G) * prod_n Student-t(y_n).
class StudentTMarginalTarget {
 public:
  explicit StudentTMarginalTarget(const HierStudentTModel& model) : m_(&model) {}

  Eigen::Index latent_dim() const { return m_->global_dim(); }
  Eigen::Index theta_dim() const { return 2; }
  Vector default_theta() const { return m_->default_theta(); }

  double log_joint(const Vector& theta, const Vector& zg) const {
    double lp = m_->log_prior_global(zg);
    for (Eigen::Index n = 0; n < m_->num_data(); ++n) lp += m_->marginal_log_lik(theta, zg, n);
    return lp;
  }

  Vector grad_z_log_joint(const Vector& theta, const Vector& zg) const {
    Vector out = m_->grad_log_prior_global(zg);
    for (Eigen::Index n = 0; n < m_->num_data(); ++n) out += m_->grad_marginal_global(theta, zg, n);
    return out;
  }

  Vector grad_theta_log_joint(const Vector& theta, const Vector& zg) const {
    detail::check_dim(zg, latent_dim(), "StudentTMarginalTarget::grad_theta_log_joint");
    Vector out = Vector::Zero(2);
    for (Eigen::Index n = 0; n < m_->num_data(); ++n) out += m_->grad_marginal_theta(theta, zg, n);
    return out;
  }

 private:
  const HierStudentTModel* m_;
};

/// Single-datapoint conditional target p(y_n, z_n | z_G) over the 1-D local latent.
/// The global latent plays the role of the model parameter, so theta-gradient
/// estimators on this view give d/dz_G of the local ELBO.
class LocalGivenGlobalTarget {
 public:
  LocalGivenGlobalTarget(const HierStudentTModel& model, Vector model_theta, Eigen::Index n)
      : m_(&model), theta_(std::move(model_theta)), n_(n) {
    detail::check_theta(theta_, 2, "LocalGivenGlobalTarget");
    if (n < 0 || n >= model.num_data()) throw IndexError("LocalGivenGlobalTarget: datapoint index out of range");
  }

  Eigen::Index latent_dim() const { return 1; }
  Eigen::Index theta_dim() const { return m_->global_dim(); }
  Vector default_theta() const { return Vector::Zero(m_->global_dim()); }
  Eigen::Index index() const { return n_; }

  double log_joint(const Vector& zg, const Vector& zn) const {
    detail::check_dim(zn, 1, "LocalGivenGlobalTarget::log_joint");
    return m_->local_log_joint(theta_, zg, n_, zn[0]);
  }

  Vector grad_z_log_joint(const Vector& zg, const Vector& zn) const {
    detail::check_dim(zn, 1, "LocalGivenGlobalTarget::grad_z_log_joint");
    return Vector::Constant(1, m_->grad_local_zn(theta_, zg, n_, zn[0]));
  }

  Vector grad_theta_log_joint(const Vector& zg, const Vector& zn) const {
    detail::check_dim(zn, 1, "LocalGivenGlobalTarget::grad_theta_log_joint");
    return m_->grad_local_global(theta_, zg, n_, zn[0]);
  }

 private:
  const HierStudentTModel* m_;
  Vector theta_;
  Eigen::Index n_;
};

}  // namespace rvrs
