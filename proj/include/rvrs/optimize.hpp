#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "error.hpp"
#include "gradients.hpp"
#include "proposal.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "target.hpp"
#include "types.hpp"

namespace rvrs {

/// Adam moments for an objective that is maximized.
struct AdamState {
  long long step = 0;
  Vector m;
  Vector v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double base_lr = 1e-3;

  AdamState() = default;
  AdamState(Eigen::Index n, double lr) : m(Vector::Zero(n)), v(Vector::Zero(n)), base_lr(lr) {}
};

/// One bias-corrected Adam ascent step; lr < 0 means use state.base_lr.
inline void adam_step(AdamState& state, Vector& params, const Vector& grad, double lr = -1.0) {
  if (params.size() != grad.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter (" + std::to_string(params.size()) + "), gradient (" +
                     std::to_string(grad.size()) + ") and moment (" + std::to_string(state.m.size()) +
                     ") sizes differ");
  }
  if (lr < 0.0) lr = state.base_lr;
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() += lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps_adam);
}

// Step decay by 10x after one third and again after two thirds of training.
inline double lr_schedule(long long iter, long long total_iters, double base_lr) {
  if (3 * iter < total_iters) return base_lr;
  if (3 * iter < 2 * total_iters) return base_lr / 10.0;
  return base_lr / 100.0;
}

struct TraceRow {
  long long iter = 0;
  double elbo_proxy = 0.0;
  double T = 0.0;
  double Zr_hat = 0.0;
  double lr = 0.0;
};

struct Checkpoint {
  long long iter = 0;
  double elbo = 0.0;
  double Zr = 0.0;
};

enum class ThetaEstimator { direct, full };
enum class PhiEstimator { rvrs, vrs };

struct MeanFieldConfig {
  long long iters = 10000;
  double base_lr = 1e-3;
  Eigen::Index S = 1;       // reparameterized draws per step
  long long trace_every = 100;
};

struct TrainConfig {
  long long total_iters = 10000;
  Eigen::Index S = 2;
  double Z_tgt = 0.3;
  double epsilon = 1e-4;
  double base_lr = 1e-4;
  std::uint64_t seed = 0;
  bool learn_theta = false;
  ThetaEstimator theta_estimator = ThetaEstimator::direct;
  TEstimator t_estimator = TEstimator::proposals;
  double t_lr = 1.0;
  long long t_samples = 0;  // iid q-draws behind each T step; 0 means ceil(4 S / Z_tgt)
  MeanFieldConfig phase1{};
  long long init_T_samples = 1000;
  long long trace_every = 100;
  long long checkpoint_every = 1000;  // 0 disables
  long long checkpoint_samples = 20000;
  long long max_proposals = 0;  // per batch; 0 means 1e6 * S

  void validate() const {
    if (!(Z_tgt > 0.0 && Z_tgt < 1.0)) throw Error("TrainConfig: Z_tgt must lie in (0, 1)");
    if (S < 2) throw Error("TrainConfig: S must be at least 2");
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw Error("TrainConfig: epsilon must lie in [0, 1)");
    if (total_iters < 0 || phase1.iters < 0) throw Error("TrainConfig: iteration counts must be non-negative");
    if (trace_every < 1 || phase1.trace_every < 1) throw Error("TrainConfig: trace_every must be positive");
    if (init_T_samples < 1) throw Error("TrainConfig: init_T_samples must be positive");
    if (t_samples != 0 && t_samples < 2) throw Error("TrainConfig: t_samples must be at least 2");
  }

  Eigen::Index resolved_t_samples() const {
    if (t_samples > 0) return static_cast<Eigen::Index>(t_samples);
    return static_cast<Eigen::Index>(std::ceil(4.0 * static_cast<double>(S) / Z_tgt));
  }
};

// Rng streams reserved per training stage so stages never share draws.
namespace stream {
inline constexpr std::uint64_t phase1 = 1;
inline constexpr std::uint64_t init_T = 2;
inline constexpr std::uint64_t phase2 = 3;
inline constexpr std::uint64_t checkpoint_base = 1000;
}  // namespace stream

template <Proposal Q>
struct MeanFieldFit {
  Q proposal;
  std::vector<TraceRow> trace;
};

/// Maximizes E_q[log p - log q] with the reparameterized gradient of log p - log q taken along the
/// sample path only (score term dropped; it has zero mean).
template <TargetModel Target, Proposal Q>
MeanFieldFit<Q> fit_meanfield(const Target& target, const Vector& theta, Q init, const MeanFieldConfig& cfg,
                              Rng& rng) {
  if (cfg.S < 1) throw Error("fit_meanfield: S must be at least 1");
  MeanFieldFit<Q> out{std::move(init), {}};
  Q& q = out.proposal;
  Vector params = q.flat();
  AdamState adam(params.size(), cfg.base_lr);
  double window_elbo = 0.0;
  long long window = 0;
  const double inf = std::numeric_limits<double>::infinity();
  for (long long it = 0; it < cfg.iters; ++it) {
    const double lr = lr_schedule(it, cfg.iters, cfg.base_lr);
    Vector grad = Vector::Zero(params.size());
    double elbo = 0.0;
    for (Eigen::Index s = 0; s < cfg.S; ++s) {
      const ReparamDraw draw = q.sample(rng);
      elbo += target.log_joint(theta, draw.z) - q.log_density(draw.z);
      const Vector g = target.grad_z_log_joint(theta, draw.z) - q.grad_log_density(draw.z);
      grad += q.velocity_vjp(draw.z, draw.noise, g);
    }
    grad /= static_cast<double>(cfg.S);
    elbo /= static_cast<double>(cfg.S);
    if (!grad.allFinite() || !std::isfinite(elbo)) {
      throw DivergedError("fit_meanfield: non-finite ELBO or gradient at iteration " + std::to_string(it),
                          q.flat(), inf, it);
    }
    adam_step(adam, params, grad, lr);
    q.set_flat(params);
    window_elbo += elbo;
    ++window;
    if (window == cfg.trace_every || it + 1 == cfg.iters) {
      out.trace.push_back({it + 1, window_elbo / static_cast<double>(window), inf, 1.0, lr});
      window_elbo = 0.0;
      window = 0;
    }
  }
  return out;
}

// Plain Monte Carlo estimate of E_q[log p - log q].
template <TargetModel Target, Proposal Q>
double estimate_vi_elbo(const Target& target, const Vector& theta, const Q& q, Rng& rng, long long M) {
  double total = 0.0;
  for (long long i = 0; i < M; ++i) {
    const ReparamDraw draw = q.sample(rng);
    total += target.log_joint(theta, draw.z) - q.log_density(draw.z);
  }
  return total / static_cast<double>(M);
}

template <Proposal Q>
struct FitResult {
  Q proposal;
  AcceptanceConfig acceptance;
  Vector theta;
  std::vector<TraceRow> trace;
  std::vector<Checkpoint> checkpoints;
  std::vector<TraceRow> phase1_trace;
  long long total_proposals = 0;
};

/// Phase 2 of training: rejection-sampled batches drive phi (Adam), T (SGD) and optionally theta (Adam).
template <TargetModel Target, Proposal Q>
FitResult<Q> train_rejection(const Target& target, Vector theta, Q q, double T_init, const TrainConfig& cfg,
                             PhiEstimator estimator) {
  cfg.validate();
  FitResult<Q> out{std::move(q), AcceptanceConfig(T_init, cfg.epsilon), std::move(theta), {}, {}, {}, 0};
  Q& prop = out.proposal;
  AcceptanceConfig& acc = out.acceptance;
  Vector params = prop.flat();
  AdamState adam(params.size(), cfg.base_lr);
  AdamState adam_theta(out.theta.size(), cfg.base_lr);
  Rng rng(cfg.seed, stream::phase2);
  const Eigen::Index t_samples = cfg.t_estimator == TEstimator::proposals ? cfg.resolved_t_samples() : cfg.S;

  double window_A = 0.0;
  long long window_accepted = 0;
  long long window_proposals = 0;
  for (long long it = 0; it < cfg.total_iters; ++it) {
    const double lr = lr_schedule(it, cfg.total_iters, cfg.base_lr);
    const AcceptedBatch batch =
        rejection_sample(target, out.theta, prop, acc, rng, cfg.S, cfg.max_proposals, t_samples);
    const Vector g_phi = estimator == PhiEstimator::rvrs ? rvrs_phi_gradient(target, out.theta, prop, acc, batch)
                                                         : vrs_phi_gradient(prop, acc, batch);
    Vector g_theta;
    if (cfg.learn_theta) {
      g_theta = cfg.theta_estimator == ThetaEstimator::full ? theta_gradient_full(target, out.theta, acc, batch)
                                                            : theta_gradient_direct(target, out.theta, batch);
    }
    const double g_T = t_gradient(batch, cfg.Z_tgt, cfg.t_estimator);
    if (!g_phi.allFinite() || !std::isfinite(g_T) || (cfg.learn_theta && !g_theta.allFinite()) ||
        !batch.A.allFinite()) {
      throw DivergedError("training diverged at iteration " + std::to_string(it), prop.flat(), acc.T, it);
    }
    adam_step(adam, params, g_phi, lr);
    prop.set_flat(params);
    if (cfg.learn_theta) adam_step(adam_theta, out.theta, g_theta, lr);
    acc.set_T(acc.T - cfg.t_lr * g_T);

    out.total_proposals += batch.total_proposals;
    window_A += batch.A.sum();
    window_accepted += batch.size();
    window_proposals += batch.total_proposals;
    if ((it + 1) % cfg.trace_every == 0 || it + 1 == cfg.total_iters) {
      out.trace.push_back({it + 1, window_A / static_cast<double>(window_accepted), acc.T,
                           static_cast<double>(window_accepted) / static_cast<double>(window_proposals), lr});
      window_A = 0.0;
      window_accepted = 0;
      window_proposals = 0;
    }
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) {
      Rng eval_rng(cfg.seed, stream::checkpoint_base + static_cast<std::uint64_t>(it + 1));
      const ElboEstimate e = estimate_elbo(target, out.theta, prop, acc, eval_rng, cfg.checkpoint_samples);
      out.checkpoints.push_back({it + 1, e.elbo, e.Zr});
    }
  }
  return out;
}

/// SGD on T alone with the proposal held fixed. Returns the adapted configuration.
template <TargetModel Target, Proposal Q>
AcceptanceConfig adapt_threshold(const Target& target, const Vector& theta, const Q& q, AcceptanceConfig acc,
                                 double Z_tgt, long long iters, Rng& rng, Eigen::Index S = 2,
                                 Eigen::Index t_samples = 0, TEstimator which = TEstimator::proposals,
                                 double t_lr = 1.0) {
  if (t_samples == 0) t_samples = static_cast<Eigen::Index>(std::ceil(4.0 * static_cast<double>(S) / Z_tgt));
  for (long long it = 0; it < iters; ++it) {
    const AcceptedBatch batch = rejection_sample(target, theta, q, acc, rng, S, 0, t_samples);
    const double g = t_gradient(batch, Z_tgt, which);
    if (!std::isfinite(g)) {
      throw DivergedError("adapt_threshold: non-finite T gradient", q.flat(), acc.T, it);
    }
    acc.set_T(acc.T - t_lr * g);
  }
  return acc;
}

/// Phase 1 shared by the RVRS and VRS fits: conventional ELBO fit, then T = -ELBO.
template <Proposal Q>
struct PhaseOne {
  MeanFieldFit<Q> fit;
  double T_init = 0.0;
};

template <TargetModel Target, Proposal Q>
PhaseOne<Q> phase_one(const Target& target, const Vector& theta, Q init, const TrainConfig& cfg) {
  cfg.validate();
  Rng rng1(cfg.seed, stream::phase1);
  PhaseOne<Q> out{fit_meanfield(target, theta, std::move(init), cfg.phase1, rng1), 0.0};
  Rng rng2(cfg.seed, stream::init_T);
  out.T_init = -estimate_vi_elbo(target, theta, out.fit.proposal, rng2, cfg.init_T_samples);
  return out;
}

template <TargetModel Target, Proposal Q>
FitResult<Q> fit_from_phase_one(const Target& target, const Vector& theta, const PhaseOne<Q>& p1,
                                const TrainConfig& cfg, PhiEstimator estimator) {
  FitResult<Q> out = train_rejection(target, theta, p1.fit.proposal, p1.T_init, cfg, estimator);
  out.phase1_trace = p1.fit.trace;
  return out;
}

template <TargetModel Target, Proposal Q>
FitResult<Q> fit_rvrs(const Target& target, const Vector& theta, Q init, const TrainConfig& cfg) {
  return fit_from_phase_one(target, theta, phase_one(target, theta, std::move(init), cfg), cfg, PhiEstimator::rvrs);
}

template <TargetModel Target, Proposal Q>
FitResult<Q> fit_vrs(const Target& target, const Vector& theta, Q init, const TrainConfig& cfg) {
  return fit_from_phase_one(target, theta, phase_one(target, theta, std::move(init), cfg), cfg, PhiEstimator::vrs);
}

}  // namespace rvrs
