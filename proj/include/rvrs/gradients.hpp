#pragma once

#include <optional>
#include <string>

#include "error.hpp"
#include "proposal.hpp"
#include "sampler.hpp"
#include "target.hpp"
#include "types.hpp"

namespace rvrs {

struct GradientEstimate {
  Vector d_phi;
  Vector d_theta;  // empty when the target has no parameters or they are not estimated
  std::optional<double> d_T;
  Eigen::Index S_used = 0;
};

namespace detail {

inline void require_pair(const AcceptedBatch& batch, const char* who) {
  if (batch.size() < 2) {
    throw BatchTooSmallError(std::string(who) + ": need at least 2 accepted samples, got " +
                             std::to_string(batch.size()));
  }
}

// num / den, with 0/0 read as 0 (only reached when the multiplying coefficient is also 0).
inline double ratio_or_zero(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace detail

/// Pathwise phi-gradient with an unguarded acceptance (eps = 0):
///   2/(S-1) sum (A_s - mean A) grad_z a(z_s) . dz_s/dphi + 1/S sum a_s grad_z A(z_s) . dz_s/dphi
/// where grad_z a = a (1 - a) g and grad_z A = a g, g = grad_z log p - grad_z log q.
template <TargetModel Target, Proposal Q>
Vector rvrs_phi_gradient_eps0(const Target& target, const Vector& theta, const Q& proposal,
                              const AcceptedBatch& batch) {
  detail::require_pair(batch, "rvrs_phi_gradient_eps0");
  const Eigen::Index S = batch.size();
  const double mean_A = batch.A.mean();
  Vector out = Vector::Zero(proposal.num_params());
  for (Eigen::Index s = 0; s < S; ++s) {
    const Vector g = target.grad_z_log_joint(theta, batch.z[s]) - proposal.grad_log_density(batch.z[s]);
    const double ar = batch.a_raw[s];
    const double slope = ar * batch.a_raw_c[s];
    const double c1 = (batch.A[s] - mean_A) * (2.0 * slope) / static_cast<double>(S - 1);
    const double c2 = ar * ar / static_cast<double>(S);
    out += proposal.velocity_vjp(batch.z[s], batch.eps[s], ((c1 + c2) * g).eval());
  }
  return out;
}

/// Pathwise phi-gradient with the guarded acceptance a = eps + (1 - eps) a_raw, zeta = eps/(1 - eps).
/// Per sample, with w = (zeta + a_raw^2)/(zeta + a_raw):
///   grad_z log a = a_raw (1 - a_raw) g / (zeta + a_raw),   grad_z A = w g,
///   w grad_z log a + grad_z w = 2 a_raw (1 - a_raw) (a_raw / (zeta + a_raw)) g.
/// At zeta = 0 every factor reduces exactly to the unguarded form.
template <TargetModel Target, Proposal Q>
Vector rvrs_phi_gradient(const Target& target, const Vector& theta, const Q& proposal, const AcceptanceConfig& cfg,
                         const AcceptedBatch& batch) {
  detail::require_pair(batch, "rvrs_phi_gradient");
  const Eigen::Index S = batch.size();
  const double zeta = cfg.zeta;
  const double mean_A = batch.A.mean();
  Vector out = Vector::Zero(proposal.num_params());
  for (Eigen::Index s = 0; s < S; ++s) {
    const Vector g = target.grad_z_log_joint(theta, batch.z[s]) - proposal.grad_log_density(batch.z[s]);
    const double ar = batch.a_raw[s];
    const double arc = batch.a_raw_c[s];
    const double slope = ar * arc;
    const double share = zeta == 0.0 ? 1.0 : ar / (zeta + ar);
    const double w = zeta == 0.0 ? ar : ar + detail::ratio_or_zero(zeta * arc, zeta + ar);
    const double c1 = (batch.A[s] - mean_A) * (2.0 * slope * share) / static_cast<double>(S - 1);
    const double c2 = w * w / static_cast<double>(S);
    out += proposal.velocity_vjp(batch.z[s], batch.eps[s], ((c1 + c2) * g).eval());
  }
  return out;
}

/// Score-function phi-gradient: 1/(S-1) sum (A_s - mean A) w_s score(z_s), where
/// w = d log(q a)/d log q at fixed z. w = a for eps = 0; for eps > 0 it is (zeta + a_raw^2)/(zeta + a_raw).
template <Proposal Q>
Vector vrs_phi_gradient(const Q& proposal, const AcceptanceConfig& cfg, const AcceptedBatch& batch) {
  detail::require_pair(batch, "vrs_phi_gradient");
  const Eigen::Index S = batch.size();
  const double mean_A = batch.A.mean();
  Vector out = Vector::Zero(proposal.num_params());
  for (Eigen::Index s = 0; s < S; ++s) {
    const double ar = batch.a_raw[s];
    const double w = cfg.zeta == 0.0 ? ar : ar + detail::ratio_or_zero(cfg.zeta * batch.a_raw_c[s], cfg.zeta + ar);
    out += ((batch.A[s] - mean_A) * w / static_cast<double>(S - 1)) * proposal.score(batch.z[s]);
  }
  return out;
}

// 1/S sum grad_theta log p(x, z_s)
template <TargetModel Target>
Vector theta_gradient_direct(const Target& target, const Vector& theta, const AcceptedBatch& batch) {
  if (target.theta_dim() == 0) throw NoThetaError("theta_gradient_direct: target has no model parameters");
  if (batch.size() < 1) throw BatchTooSmallError("theta_gradient_direct: empty batch");
  Vector out = Vector::Zero(target.theta_dim());
  for (Eigen::Index s = 0; s < batch.size(); ++s) out += target.grad_theta_log_joint(theta, batch.z[s]);
  return out / static_cast<double>(batch.size());
}

/// Direct term plus the covariance of A with grad_theta log a:
///   + 1/(S-1) sum (A_s - mean A) k_s grad_theta log p(x, z_s),  k = a_raw (1 - a_raw)/(zeta + a_raw),
/// which is 1 - a when eps = 0.
template <TargetModel Target>
Vector theta_gradient_full(const Target& target, const Vector& theta, const AcceptanceConfig& cfg,
                           const AcceptedBatch& batch) {
  if (target.theta_dim() == 0) throw NoThetaError("theta_gradient_full: target has no model parameters");
  detail::require_pair(batch, "theta_gradient_full");
  const Eigen::Index S = batch.size();
  const double mean_A = batch.A.mean();
  Vector direct = Vector::Zero(target.theta_dim());
  Vector cov = Vector::Zero(target.theta_dim());
  for (Eigen::Index s = 0; s < S; ++s) {
    const Vector gt = target.grad_theta_log_joint(theta, batch.z[s]);
    const double ar = batch.a_raw[s];
    const double k = cfg.zeta == 0.0 ? batch.a_raw_c[s] : detail::ratio_or_zero(ar * batch.a_raw_c[s], cfg.zeta + ar);
    direct += gt;
    cov += ((batch.A[s] - mean_A) * k) * gt;
  }
  return direct / static_cast<double>(S) + cov / static_cast<double>(S - 1);
}

/// d/dT of (Z_r - Z_tgt)^2 / 2 from the accepted draws' guarded acceptance values:
///   1/S sum a_s (1 - a_s) ((sum_{s'} a_s' - a_s)/(S-1) - Z_tgt).
/// Its zero is at E_r[a] = Z_tgt rather than Z_r = Z_tgt.
inline double t_gradient(const AcceptedBatch& batch, double Z_tgt) {
  detail::require_pair(batch, "t_gradient");
  if (!(Z_tgt > 0.0 && Z_tgt < 1.0)) throw Error("t_gradient: Z_tgt must lie in (0, 1)");
  const Eigen::Index S = batch.size();
  double g = 0.0;
  for (Eigen::Index s = 0; s < S; ++s) {
    double others = 0.0;
    for (Eigen::Index t = 0; t < S; ++t) {
      if (t != s) others += batch.a[t];
    }
    const double as = batch.a[s];
    g += as * (1.0 - as) * (others / static_cast<double>(S - 1) - Z_tgt);
  }
  return g / static_cast<double>(S);
}

/// Unbiased d/dT of (Z_r - Z_tgt)^2 / 2 from K iid proposal draws:
///   1/(K(K-1)) sum_{i != j} (a_i - Z_tgt) da_j/dT.
inline double t_gradient_from_proposals(const std::vector<double>& a, const std::vector<double>& da_dT,
                                        double Z_tgt) {
  if (a.size() < 2 || a.size() != da_dT.size()) {
    throw BatchTooSmallError("t_gradient_from_proposals: need at least 2 proposal draws");
  }
  if (!(Z_tgt > 0.0 && Z_tgt < 1.0)) throw Error("t_gradient_from_proposals: Z_tgt must lie in (0, 1)");
  double p = 0.0;
  double q = 0.0;
  double diag = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    p += a[i] - Z_tgt;
    q += da_dT[i];
    diag += (a[i] - Z_tgt) * da_dT[i];
  }
  const double k = static_cast<double>(a.size());
  return (p * q - diag) / (k * (k - 1.0));
}

inline double t_gradient_proposals(const AcceptedBatch& batch, double Z_tgt) {
  return t_gradient_from_proposals(batch.prefix_a, batch.prefix_da_dT, Z_tgt);
}

enum class TEstimator { proposals, accepted };

inline double t_gradient(const AcceptedBatch& batch, double Z_tgt, TEstimator which) {
  return which == TEstimator::accepted ? t_gradient(batch, Z_tgt) : t_gradient_proposals(batch, Z_tgt);
}

}  // namespace rvrs
