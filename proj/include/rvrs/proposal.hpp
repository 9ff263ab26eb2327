#pragma once

#include <cmath>
#include <concepts>
#include <string>

#include "error.hpp"
#include "math.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace rvrs {

namespace detail {

inline void check_dim(const Vector& v, Eigen::Index dim, const char* what) {
  if (v.size() != dim) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(dim) +
                         ", got " + std::to_string(v.size()));
  }
}

inline constexpr double kPathTolerance = 1e-9;

}  // namespace detail

/// Factorized Normal q(z) = prod_d N(z_d | mu_d, exp(log_scale_d)^2).
///
/// Flat parameter layout used by optimizers and gradients: [mu (D), log_scale (D)].
class MeanFieldNormal {
 public:
  MeanFieldNormal() = default;
  MeanFieldNormal(Vector mu, Vector log_scale) : mu_(std::move(mu)), log_scale_(std::move(log_scale)) {
    if (mu_.size() < 1 || mu_.size() != log_scale_.size()) {
      throw DimensionError("MeanFieldNormal: mu and log_scale must have equal nonzero length");
    }
    if (!mu_.allFinite() || !log_scale_.allFinite()) {
      throw Error("MeanFieldNormal: non-finite parameters");
    }
  }

  static MeanFieldNormal standard(Eigen::Index dim) {
    return MeanFieldNormal(Vector::Zero(dim), Vector::Zero(dim));
  }

  Eigen::Index dim() const { return mu_.size(); }
  Eigen::Index num_params() const { return 2 * mu_.size(); }

  const Vector& mu() const { return mu_; }
  const Vector& log_scale() const { return log_scale_; }
  Vector scale() const { return log_scale_.array().exp(); }

  Vector flat() const {
    Vector out(num_params());
    out << mu_, log_scale_;
    return out;
  }

  void set_flat(const Vector& flat) {
    detail::check_dim(flat, num_params(), "MeanFieldNormal::set_flat");
    mu_ = flat.head(dim());
    log_scale_ = flat.tail(dim());
  }

  Vector transform(const NoiseDraw& noise) const {
    detail::check_dim(noise.eps, dim(), "MeanFieldNormal::transform");
    return mu_ + (log_scale_.array().exp() * noise.eps.array()).matrix();
  }

  ReparamDraw sample(Rng& rng) const {
    NoiseDraw noise{Vector(dim())};
    for (Eigen::Index d = 0; d < dim(); ++d) noise.eps[d] = rng.normal();
    Vector z = transform(noise);
    return {std::move(z), std::move(noise)};
  }

  double log_density(const Vector& z) const {
    detail::check_dim(z, dim(), "MeanFieldNormal::log_density");
    const auto r = (z - mu_).array() * (-log_scale_).array().exp();
    return -0.5 * static_cast<double>(dim()) * kLogTwoPi - log_scale_.sum() - 0.5 * r.square().sum();
  }

  // d/dz log q(z) = -(z - mu) / sigma^2
  Vector grad_log_density(const Vector& z) const {
    detail::check_dim(z, dim(), "MeanFieldNormal::grad_log_density");
    return -((z - mu_).array() * (-2.0 * log_scale_).array().exp()).matrix();
  }

  // d/dphi log q(z) at fixed z.
  Vector score(const Vector& z) const {
    detail::check_dim(z, dim(), "MeanFieldNormal::score");
    const auto inv_var = (-2.0 * log_scale_).array().exp();
    const auto r = (z - mu_).array();
    Vector out(num_params());
    out.head(dim()) = (r * inv_var).matrix();
    out.tail(dim()) = (r.square() * inv_var - 1.0).matrix();
    return out;
  }

  /// cotangent . dz/dphi along the path z = mu + sigma * eps.
  Vector velocity_vjp(const Vector& z, const NoiseDraw& noise, const Vector& cotangent) const {
    detail::check_dim(cotangent, dim(), "MeanFieldNormal::velocity_vjp");
    const Vector expected = transform(noise);
    detail::check_dim(z, dim(), "MeanFieldNormal::velocity_vjp");
    if ((expected - z).lpNorm<Eigen::Infinity>() > detail::kPathTolerance * (1.0 + z.lpNorm<Eigen::Infinity>())) {
      throw InconsistentPathError("MeanFieldNormal::velocity_vjp: z is not mu + sigma * eps");
    }
    Vector out(num_params());
    out.head(dim()) = cotangent;
    out.tail(dim()) = (cotangent.array() * (z - mu_).array()).matrix();
    return out;
  }

 private:
  Vector mu_;
  Vector log_scale_;
};

/// Full-rank Normal with Cholesky factor L (lower triangular, diagonal exp(chol_log_diag)).
///
/// Flat layout: [mu (D), chol_log_diag (D), strictly-lower entries of L row by row].
class FullRankNormal {
 public:
  FullRankNormal() = default;
  FullRankNormal(Vector mu, Vector chol_log_diag, Matrix chol_offdiag)
      : mu_(std::move(mu)), log_diag_(std::move(chol_log_diag)), offdiag_(std::move(chol_offdiag)) {
    const auto d = mu_.size();
    if (d < 1 || log_diag_.size() != d || offdiag_.rows() != d || offdiag_.cols() != d) {
      throw DimensionError("FullRankNormal: inconsistent parameter shapes");
    }
    offdiag_ = offdiag_.triangularView<Eigen::StrictlyLower>();
    if (!mu_.allFinite() || !log_diag_.allFinite() || !offdiag_.allFinite()) {
      throw Error("FullRankNormal: non-finite parameters");
    }
    rebuild();
  }

  static FullRankNormal standard(Eigen::Index dim) {
    return FullRankNormal(Vector::Zero(dim), Vector::Zero(dim), Matrix::Zero(dim, dim));
  }

  static FullRankNormal from_mean_field(const MeanFieldNormal& mf) {
    return FullRankNormal(mf.mu(), mf.log_scale(), Matrix::Zero(mf.dim(), mf.dim()));
  }

  Eigen::Index dim() const { return mu_.size(); }
  Eigen::Index num_params() const { return 2 * dim() + dim() * (dim() - 1) / 2; }

  const Vector& mu() const { return mu_; }
  const Vector& chol_log_diag() const { return log_diag_; }
  const Matrix& chol() const { return chol_; }
  Matrix covariance() const { return chol_ * chol_.transpose(); }
  // Marginal standard deviations sqrt(diag(L L^T)).
  Vector scale() const { return chol_.rowwise().norm(); }

  Vector flat() const {
    Vector out(num_params());
    out.head(dim()) = mu_;
    out.segment(dim(), dim()) = log_diag_;
    Eigen::Index k = 2 * dim();
    for (Eigen::Index i = 1; i < dim(); ++i)
      for (Eigen::Index j = 0; j < i; ++j) out[k++] = offdiag_(i, j);
    return out;
  }

  void set_flat(const Vector& flat) {
    detail::check_dim(flat, num_params(), "FullRankNormal::set_flat");
    mu_ = flat.head(dim());
    log_diag_ = flat.segment(dim(), dim());
    Eigen::Index k = 2 * dim();
    for (Eigen::Index i = 1; i < dim(); ++i)
      for (Eigen::Index j = 0; j < i; ++j) offdiag_(i, j) = flat[k++];
    rebuild();
  }

  Vector transform(const NoiseDraw& noise) const {
    detail::check_dim(noise.eps, dim(), "FullRankNormal::transform");
    return mu_ + chol_.triangularView<Eigen::Lower>() * noise.eps;
  }

  ReparamDraw sample(Rng& rng) const {
    NoiseDraw noise{Vector(dim())};
    for (Eigen::Index d = 0; d < dim(); ++d) noise.eps[d] = rng.normal();
    Vector z = transform(noise);
    return {std::move(z), std::move(noise)};
  }

  double log_density(const Vector& z) const {
    detail::check_dim(z, dim(), "FullRankNormal::log_density");
    const Vector e = whiten(z);
    return -0.5 * static_cast<double>(dim()) * kLogTwoPi - log_diag_.sum() - 0.5 * e.squaredNorm();
  }

  // -(L L^T)^{-1} (z - mu) via two triangular solves.
  Vector grad_log_density(const Vector& z) const {
    detail::check_dim(z, dim(), "FullRankNormal::grad_log_density");
    const Vector e = whiten(z);
    return -(chol_.transpose().triangularView<Eigen::Upper>().solve(e));
  }

  Vector score(const Vector& z) const {
    detail::check_dim(z, dim(), "FullRankNormal::score");
    const Vector e = whiten(z);
    const Vector w = chol_.transpose().triangularView<Eigen::Upper>().solve(e);  // L^{-T} e
    Vector out(num_params());
    out.head(dim()) = w;
    // d/dL of -0.5 |L^{-1}(z-mu)|^2 is L^{-T} e e^T; the log-det term adds -1/L_dd.
    for (Eigen::Index d = 0; d < dim(); ++d) out[dim() + d] = chol_(d, d) * w[d] * e[d] - 1.0;
    Eigen::Index k = 2 * dim();
    for (Eigen::Index i = 1; i < dim(); ++i)
      for (Eigen::Index j = 0; j < i; ++j) out[k++] = w[i] * e[j];
    return out;
  }

  Vector velocity_vjp(const Vector& z, const NoiseDraw& noise, const Vector& cotangent) const {
    detail::check_dim(cotangent, dim(), "FullRankNormal::velocity_vjp");
    detail::check_dim(z, dim(), "FullRankNormal::velocity_vjp");
    const Vector expected = transform(noise);
    if ((expected - z).lpNorm<Eigen::Infinity>() > detail::kPathTolerance * (1.0 + z.lpNorm<Eigen::Infinity>())) {
      throw InconsistentPathError("FullRankNormal::velocity_vjp: z is not mu + L eps");
    }
    const Vector& eps = noise.eps;
    Vector out(num_params());
    out.head(dim()) = cotangent;
    for (Eigen::Index d = 0; d < dim(); ++d) out[dim() + d] = cotangent[d] * eps[d] * chol_(d, d);
    Eigen::Index k = 2 * dim();
    for (Eigen::Index i = 1; i < dim(); ++i)
      for (Eigen::Index j = 0; j < i; ++j) out[k++] = cotangent[i] * eps[j];
    return out;
  }

 private:
  void rebuild() {
    chol_ = offdiag_;
    chol_.diagonal() = log_diag_.array().exp().matrix();
  }

  // L^{-1} (z - mu)
  Vector whiten(const Vector& z) const { return chol_.triangularView<Eigen::Lower>().solve(z - mu_); }

  Vector mu_;
  Vector log_diag_;
  Matrix offdiag_;
  Matrix chol_;
};

template <class P>
concept Proposal = requires(const P& p, P& mut, const Vector& v, const NoiseDraw& n, Rng& rng) {
  { p.dim() } -> std::convertible_to<Eigen::Index>;
  { p.num_params() } -> std::convertible_to<Eigen::Index>;
  { p.flat() } -> std::convertible_to<Vector>;
  mut.set_flat(v);
  { p.sample(rng) } -> std::same_as<ReparamDraw>;
  { p.transform(n) } -> std::convertible_to<Vector>;
  { p.log_density(v) } -> std::convertible_to<double>;
  { p.grad_log_density(v) } -> std::convertible_to<Vector>;
  { p.score(v) } -> std::convertible_to<Vector>;
  { p.velocity_vjp(v, n, v) } -> std::convertible_to<Vector>;
  { p.scale() } -> std::convertible_to<Vector>;
};

// Geometric mean of marginal standard deviations.
template <Proposal P>
double geometric_mean_scale(const P& proposal) {
  return std::exp(proposal.scale().array().log().mean());
}

}  // namespace rvrs
