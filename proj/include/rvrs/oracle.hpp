#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "error.hpp"
#include "proposal.hpp"
#include "sampler.hpp"
#include "target.hpp"
#include "types.hpp"

namespace rvrs {

/// Tensor-product trapezoid rule on a 1-D interval or 2-D box.
class QuadratureGrid {
 public:
  QuadratureGrid(std::vector<double> lo, std::vector<double> hi, Eigen::Index nodes_per_axis) {
    if (lo.size() != hi.size() || lo.empty()) throw DimensionError("QuadratureGrid: bounds mismatch");
    if (lo.size() > 2) throw DimensionError("QuadratureGrid: quadrature is limited to D <= 2");
    if (nodes_per_axis < 3) throw Error("QuadratureGrid: need at least 3 nodes per axis");
    for (std::size_t d = 0; d < lo.size(); ++d) {
      if (!(hi[d] > lo[d])) throw Error("QuadratureGrid: empty interval");
      Vector x(nodes_per_axis);
      Vector w(nodes_per_axis);
      const double h = (hi[d] - lo[d]) / static_cast<double>(nodes_per_axis - 1);
      for (Eigen::Index k = 0; k < nodes_per_axis; ++k) {
        x[k] = lo[d] + h * static_cast<double>(k);
        w[k] = h;
      }
      w[0] = w[nodes_per_axis - 1] = 0.5 * h;
      nodes_.push_back(std::move(x));
      weights_.push_back(std::move(w));
    }
  }

  static QuadratureGrid interval(double lo, double hi, Eigen::Index nodes = 2001) {
    return QuadratureGrid({lo}, {hi}, nodes);
  }

  /// Box of +-width marginal standard deviations around the proposal mean.
  template <Proposal Q>
  static QuadratureGrid around(const Q& proposal, double width = 12.0, Eigen::Index nodes = 2001) {
    if (proposal.dim() > 2) throw DimensionError("QuadratureGrid: quadrature is limited to D <= 2");
    const Vector sd = proposal.scale();
    std::vector<double> lo, hi;
    for (Eigen::Index d = 0; d < proposal.dim(); ++d) {
      lo.push_back(proposal.mu()[d] - width * sd[d]);
      hi.push_back(proposal.mu()[d] + width * sd[d]);
    }
    return QuadratureGrid(lo, hi, nodes);
  }

  Eigen::Index dim() const { return static_cast<Eigen::Index>(nodes_.size()); }
  const Vector& nodes(Eigen::Index axis) const { return nodes_.at(axis); }
  const Vector& weights(Eigen::Index axis) const { return weights_.at(axis); }

  /// f(z, weight, on_boundary) at every node.
  template <class F>
  void for_each(F&& f) const {
    const Eigen::Index k0 = nodes_[0].size();
    Vector z(dim());
    if (dim() == 1) {
      for (Eigen::Index i = 0; i < k0; ++i) {
        z[0] = nodes_[0][i];
        f(static_cast<const Vector&>(z), weights_[0][i], i == 0 || i == k0 - 1);
      }
      return;
    }
    const Eigen::Index k1 = nodes_[1].size();
    for (Eigen::Index i = 0; i < k0; ++i) {
      z[0] = nodes_[0][i];
      for (Eigen::Index j = 0; j < k1; ++j) {
        z[1] = nodes_[1][j];
        const bool edge = i == 0 || i == k0 - 1 || j == 0 || j == k1 - 1;
        f(static_cast<const Vector&>(z), weights_[0][i] * weights_[1][j], edge);
      }
    }
  }

  double integrate(const std::function<double(const Vector&)>& f) const {
    double total = 0.0;
    for_each([&](const Vector& z, double w, bool) { total += w * f(z); });
    return total;
  }

 private:
  std::vector<Vector> nodes_;
  std::vector<Vector> weights_;
};

namespace detail {

template <TargetModel Target, Proposal Q>
void check_quadrature_dims(const Target& target, const Q& proposal, const QuadratureGrid& grid, const char* who) {
  if (proposal.dim() > 2 || target.latent_dim() > 2) {
    throw DimensionError(std::string(who) + ": quadrature is limited to D <= 2");
  }
  if (proposal.dim() != target.latent_dim() || grid.dim() != target.latent_dim()) {
    throw DimensionError(std::string(who) + ": grid, proposal and target dimensions differ");
  }
}

}  // namespace detail

// Z_r = integral q(z) a(z) dz
template <TargetModel Target, Proposal Q>
double quad_Zr(const Target& target, const Vector& theta, const Q& proposal, const AcceptanceConfig& cfg,
               const QuadratureGrid& grid) {
  detail::check_quadrature_dims(target, proposal, grid, "quad_Zr");
  double total = 0.0;
  grid.for_each([&](const Vector& z, double w, bool) {
    const double lq = proposal.log_density(z);
    total += w * std::exp(lq) * accept_prob(target, theta, proposal, cfg, z).a;
  });
  return total;
}

// ELBO of r = q a / Z_r: integral r (log p - log r) = E_r[A] + log Z_r.
template <TargetModel Target, Proposal Q>
double quad_elbo(const Target& target, const Vector& theta, const Q& proposal, const AcceptanceConfig& cfg,
                 const QuadratureGrid& grid) {
  detail::check_quadrature_dims(target, proposal, grid, "quad_elbo");
  double zr = 0.0;
  double weighted_A = 0.0;
  grid.for_each([&](const Vector& z, double w, bool) {
    const double lp = target.log_joint(theta, z);
    const double lq = proposal.log_density(z);
    const Acceptance acc = acceptance(lp, lq, cfg);
    const double mass = w * std::exp(lq + acc.log_a);
    if (mass == 0.0) return;
    zr += mass;
    weighted_A += mass * (lp - lq - acc.log_a);
  });
  return weighted_A / zr + std::log(zr);
}

// log integral p(x, z) dz over the grid.
template <TargetModel Target>
double quad_log_evidence(const Target& target, const Vector& theta, const QuadratureGrid& grid) {
  double peak = -INFINITY;
  grid.for_each([&](const Vector& z, double, bool) { peak = std::max(peak, target.log_joint(theta, z)); });
  double total = 0.0;
  grid.for_each([&](const Vector& z, double w, bool) { total += w * std::exp(target.log_joint(theta, z) - peak); });
  return peak + std::log(total);
}

/// Central differences, one coordinate at a time.
inline Vector finite_diff(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

namespace detail {

template <class Target>
double log_evidence_of(const Target& target, const Vector& theta, const QuadratureGrid& grid) {
  if constexpr (requires { target.log_Zp(); }) {
    if (theta.size() == 1) return theta[0];
    return target.log_Zp();
  } else {
    return quad_log_evidence(target, theta, grid);
  }
}

}  // namespace detail

/// xi = E_posterior[p(x, z) / q(z)] = integral p(x,z)^2 / (Z_p q(z)) dz.
/// Throws DivergentXiError if the integrand has not decayed to 1e-12 of its peak at the grid edges.
template <TargetModel Target, Proposal Q>
double compute_xi(const Target& target, const Vector& theta, const Q& proposal, const QuadratureGrid& grid) {
  detail::check_quadrature_dims(target, proposal, grid, "compute_xi");
  const double log_Zp = detail::log_evidence_of(target, theta, grid);
  double peak = -INFINITY;
  double edge_max = -INFINITY;
  grid.for_each([&](const Vector& z, double, bool edge) {
    const double li = 2.0 * target.log_joint(theta, z) - log_Zp - proposal.log_density(z);
    peak = std::max(peak, li);
    if (edge) edge_max = std::max(edge_max, li);
  });
  if (!(edge_max < peak + std::log(1e-12))) {
    throw DivergentXiError("compute_xi: p^2/q does not decay on the grid; the proposal is too light-tailed");
  }
  double total = 0.0;
  grid.for_each([&](const Vector& z, double w, bool) {
    total += w * std::exp(2.0 * target.log_joint(theta, z) - log_Zp - proposal.log_density(z) - peak);
  });
  return std::exp(peak) * total;
}

struct BoundReport {
  double T = 0.0;
  double xi = 0.0;
  double delta = 0.0;  // log Z_p - ELBO
  double bound = 0.0;  // 1.5 e^T xi
  bool valid = false;  // T < -log(2 xi)
  bool holds = false;  // valid implies delta <= bound
};

template <TargetModel Target, Proposal Q>
std::vector<BoundReport> check_prop2(const Target& target, const Vector& theta, const Q& proposal,
                                     const std::vector<double>& T_list, const QuadratureGrid& grid,
                                     double epsilon = 0.0) {
  const double xi = compute_xi(target, theta, proposal, grid);
  const double log_Zp = detail::log_evidence_of(target, theta, grid);
  std::vector<BoundReport> out;
  out.reserve(T_list.size());
  for (double T : T_list) {
    BoundReport r;
    r.T = T;
    r.xi = xi;
    r.delta = log_Zp - quad_elbo(target, theta, proposal, AcceptanceConfig(T, epsilon), grid);
    r.bound = 1.5 * std::exp(T) * xi;
    r.valid = T < -std::log(2.0 * xi);
    r.holds = !r.valid || r.delta <= r.bound;
    out.push_back(r);
  }
  return out;
}

}  // namespace rvrs
