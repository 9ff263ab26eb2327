#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "error.hpp"
#include "math.hpp"
#include "proposal.hpp"
#include "rng.hpp"
#include "target.hpp"
#include "types.hpp"

namespace rvrs {

/// Threshold T and guard floor epsilon of a(z) = eps + (1 - eps) sigmoid(log p - log q + T).
struct AcceptanceConfig {
  double T = 0.0;
  double epsilon = 0.0;
  double zeta = 0.0;  // epsilon / (1 - epsilon)

  AcceptanceConfig() = default;
  AcceptanceConfig(double threshold, double eps) : T(threshold), epsilon(eps), zeta(eps / (1.0 - eps)) {
    if (!std::isfinite(threshold)) throw Error("AcceptanceConfig: T must be finite");
    if (!(eps >= 0.0 && eps < 1.0)) throw Error("AcceptanceConfig: epsilon must lie in [0, 1)");
  }

  void set_T(double threshold) {
    if (!std::isfinite(threshold)) throw Error("AcceptanceConfig: T must be finite");
    T = threshold;
  }
};

/// Acceptance quantities at one point.
struct Acceptance {
  double u = 0.0;          // log p - log q + T
  double a_raw = 0.0;      // sigmoid(u)
  double a_raw_c = 0.0;    // 1 - a_raw, computed as sigmoid(-u)
  double a = 0.0;          // guarded
  double log_a = 0.0;
  double da_dT = 0.0;      // (1 - eps) a_raw (1 - a_raw)
};

inline Acceptance acceptance(double log_p, double log_q, const AcceptanceConfig& cfg) {
  Acceptance acc;
  acc.u = log_p - log_q + cfg.T;
  acc.a_raw = sigmoid(acc.u);
  acc.a_raw_c = sigmoid(-acc.u);
  acc.a = cfg.epsilon + (1.0 - cfg.epsilon) * acc.a_raw;
  if (cfg.epsilon == 0.0) {
    acc.log_a = log_sigmoid(acc.u);
  } else {
    acc.log_a = log_add_exp(std::log(cfg.epsilon), std::log1p(-cfg.epsilon) + log_sigmoid(acc.u));
  }
  acc.da_dT = (1.0 - cfg.epsilon) * acc.a_raw * acc.a_raw_c;
  return acc;
}

template <TargetModel Target, Proposal Q>
Acceptance accept_prob(const Target& target, const Vector& theta, const Q& proposal, const AcceptanceConfig& cfg,
                       const Vector& z) {
  return acceptance(target.log_joint(theta, z), proposal.log_density(z), cfg);
}

/// S accepted draws with everything the estimators need cached.
///
/// prefix_a / prefix_da_dT hold the acceptance values of the first prefix_size proposals
/// (accepted or not), topped up with extra draws from q if the sampler finished early.
/// That prefix is an iid sample from q of fixed size.
struct AcceptedBatch {
  std::vector<Vector> z;
  std::vector<NoiseDraw> eps;
  Vector log_p;
  Vector log_q;
  Vector u;
  Vector a_raw;
  Vector a_raw_c;
  Vector a;
  Vector A;
  std::vector<long long> proposals_used;
  std::vector<double> prefix_a;
  std::vector<double> prefix_da_dT;
  long long total_proposals = 0;
  long long extra_proposals = 0;  // q-draws made only to complete the prefix

  Eigen::Index size() const { return static_cast<Eigen::Index>(z.size()); }

  void reserve(Eigen::Index s) {
    z.reserve(s);
    eps.reserve(s);
    proposals_used.reserve(s);
    log_p.resize(s);
    log_q.resize(s);
    u.resize(s);
    a_raw.resize(s);
    a_raw_c.resize(s);
    a.resize(s);
    A.resize(s);
  }

  // Drops unfilled slots left by reserve() when fewer draws were accepted.
  void shrink_to_size() {
    const auto s = size();
    log_p.conservativeResize(s);
    log_q.conservativeResize(s);
    u.conservativeResize(s);
    a_raw.conservativeResize(s);
    a_raw_c.conservativeResize(s);
    a.conservativeResize(s);
    A.conservativeResize(s);
  }

  void push(ReparamDraw draw, double lp, double lq, const Acceptance& acc, long long used) {
    const auto s = size();
    if (s >= log_p.size()) throw ShapeError("AcceptedBatch::push: batch is full");
    z.push_back(std::move(draw.z));
    eps.push_back(std::move(draw.noise));
    log_p[s] = lp;
    log_q[s] = lq;
    u[s] = acc.u;
    a_raw[s] = acc.a_raw;
    a_raw_c[s] = acc.a_raw_c;
    a[s] = acc.a;
    A[s] = lp - lq - acc.log_a;
    proposals_used.push_back(used);
  }
};

inline long long default_max_proposals(Eigen::Index S) { return 1000000LL * static_cast<long long>(S); }

/// Propose from q, accept with probability a(z), until S acceptances.
template <TargetModel Target, Proposal Q>
AcceptedBatch rejection_sample(const Target& target, const Vector& theta, const Q& proposal,
                               const AcceptanceConfig& cfg, Rng& rng, Eigen::Index S, long long max_proposals = 0,
                               Eigen::Index prefix_size = -1) {
  if (S < 1) throw BatchTooSmallError("rejection_sample: S must be at least 1");
  if (max_proposals == 0) max_proposals = default_max_proposals(S);
  if (max_proposals < S) throw Error("rejection_sample: max_proposals must be at least S");
  if (prefix_size < 0) prefix_size = S;

  AcceptedBatch batch;
  batch.reserve(S);
  batch.prefix_a.reserve(static_cast<std::size_t>(prefix_size));
  batch.prefix_da_dT.reserve(static_cast<std::size_t>(prefix_size));
  long long since_last = 0;
  while (batch.size() < S) {
    if (batch.total_proposals >= max_proposals) {
      throw BudgetExhaustedError("rejection_sample: " + std::to_string(batch.total_proposals) +
                                     " proposals drawn for " + std::to_string(batch.size()) + " of " +
                                     std::to_string(S) + " acceptances; T is probably too low",
                                 batch.total_proposals);
    }
    ReparamDraw draw = proposal.sample(rng);
    const double uniform = rng.uniform();
    const double lp = target.log_joint(theta, draw.z);
    const double lq = proposal.log_density(draw.z);
    const Acceptance acc = acceptance(lp, lq, cfg);
    ++batch.total_proposals;
    ++since_last;
    if (static_cast<Eigen::Index>(batch.prefix_a.size()) < prefix_size) {
      batch.prefix_a.push_back(acc.a);
      batch.prefix_da_dT.push_back(acc.da_dT);
    }
    if (uniform < acc.a) {
      batch.push(std::move(draw), lp, lq, acc, since_last);
      since_last = 0;
    }
  }
  while (static_cast<Eigen::Index>(batch.prefix_a.size()) < prefix_size) {
    const ReparamDraw draw = proposal.sample(rng);
    const Acceptance acc = accept_prob(target, theta, proposal, cfg, draw.z);
    batch.prefix_a.push_back(acc.a);
    batch.prefix_da_dT.push_back(acc.da_dT);
    ++batch.extra_proposals;
  }
  return batch;
}

struct MeanEstimate {
  double mean = 0.0;
  double std_err = 0.0;
};

// Monte Carlo Z_r = E_q[a] with its standard error.
template <TargetModel Target, Proposal Q>
MeanEstimate estimate_Zr(const Target& target, const Vector& theta, const Q& proposal, const AcceptanceConfig& cfg,
                         Rng& rng, long long M) {
  if (M < 2) throw Error("estimate_Zr: M must be at least 2");
  double mean = 0.0;
  double m2 = 0.0;
  for (long long i = 0; i < M; ++i) {
    const ReparamDraw draw = proposal.sample(rng);
    const double a = accept_prob(target, theta, proposal, cfg, draw.z).a;
    const double delta = a - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (a - mean);
  }
  const double var = m2 / static_cast<double>(M - 1);
  return {mean, std::sqrt(var / static_cast<double>(M))};
}

template <TargetModel Target, Proposal Q>
double estimate_log_Zr(const Target& target, const Vector& theta, const Q& proposal, const AcceptanceConfig& cfg,
                       Rng& rng, long long M = 100000) {
  return std::log(estimate_Zr(target, theta, proposal, cfg, rng, M).mean);
}

// Plug-in ELBO: mean A over accepted draws plus log Z_r.
inline double elbo_estimate(const AcceptedBatch& batch, double log_Zr) {
  if (batch.size() < 1) throw BatchTooSmallError("elbo_estimate: empty batch");
  return batch.A.mean() + log_Zr;
}

struct ElboEstimate {
  double elbo = 0.0;
  double Zr = 0.0;
  double Zr_std_err = 0.0;
  double log_Zr = 0.0;
};

/// ELBO from M proposal draws: log Zhat + sum(a A) / sum(a), where Zhat = mean(a).
/// The accepted-sample average of A is replaced by its importance-weighted form.
template <TargetModel Target, Proposal Q>
ElboEstimate estimate_elbo(const Target& target, const Vector& theta, const Q& proposal, const AcceptanceConfig& cfg,
                           Rng& rng, long long M) {
  if (M < 2) throw Error("estimate_elbo: M must be at least 2");
  double sum_a = 0.0;
  double sum_a2 = 0.0;
  double sum_aA = 0.0;
  for (long long i = 0; i < M; ++i) {
    const ReparamDraw draw = proposal.sample(rng);
    const double lp = target.log_joint(theta, draw.z);
    const double lq = proposal.log_density(draw.z);
    const Acceptance acc = acceptance(lp, lq, cfg);
    sum_a += acc.a;
    sum_a2 += acc.a * acc.a;
    sum_aA += acc.a * (lp - lq - acc.log_a);
  }
  const double m = static_cast<double>(M);
  ElboEstimate out;
  out.Zr = sum_a / m;
  out.Zr_std_err = std::sqrt(std::max(0.0, (sum_a2 / m - out.Zr * out.Zr) / (m - 1.0)));
  out.log_Zr = std::log(out.Zr);
  out.elbo = sum_aA / sum_a + out.log_Zr;
  return out;
}

}  // namespace rvrs
