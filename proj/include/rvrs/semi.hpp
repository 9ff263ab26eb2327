#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "error.hpp"
#include "gradients.hpp"
#include "hier_student_t.hpp"
#include "optimize.hpp"
#include "parallel.hpp"
#include "proposal.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "types.hpp"

namespace rvrs {

/// Per-datapoint thresholds T_n sharing one target acceptance rate.
struct LocalThresholds {
  Vector T;
  double Z_tgt = 0.5;

  LocalThresholds() = default;
  LocalThresholds(Vector thresholds, double z_tgt) : T(std::move(thresholds)), Z_tgt(z_tgt) {
    if (!T.allFinite()) throw Error("LocalThresholds: thresholds must be finite");
    if (!(z_tgt > 0.0 && z_tgt < 1.0)) throw Error("LocalThresholds: Z_tgt must lie in (0, 1)");
  }
};

/// Local draws for a mini-batch. Slot k belongs to datapoint indices[k].
/// A masked-in slot holds exactly S accepted draws; a masked-out slot holds fewer.
struct LocalBatch {
  std::vector<Eigen::Index> indices;
  std::vector<AcceptedBatch> points;
  std::vector<char> mask;
  long long proposals_used = 0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(indices.size()); }

  Eigen::Index masked_in() const {
    return static_cast<Eigen::Index>(std::count(mask.begin(), mask.end(), char{1}));
  }

  double mask_rate() const {
    return indices.empty() ? 0.0 : static_cast<double>(masked_in()) / static_cast<double>(size());
  }
};

struct SemiEvalConfig {
  long long M1 = 10000;  // global draws
  long long M2 = 1000;   // local draws per global draw and datapoint

  void validate() const {
    if (M1 < 1 || M2 < 1) throw Error("SemiEvalConfig: M1 and M2 must be at least 1");
  }
};

/// Settings shared by both local samplers. Datapoint n at training step `step` draws from
/// the stream Rng(seed, stream_id(step, n)), so results do not depend on batch composition
/// or on the number of workers.
struct LocalSampling {
  double epsilon = 1e-4;
  Eigen::Index S = 2;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  long long max_proposals = 0;  // unbiased sampler only; 0 means 1e6 * S
  Eigen::Index t_samples = -1;  // prefix of iid proposals kept per datapoint; -1 means S
  int workers = 1;
};

inline Rng local_rng(std::uint64_t seed, std::uint64_t step, Eigen::Index n) {
  return Rng(seed, stream_id(step, static_cast<std::uint64_t>(n)));
}

namespace detail {

template <Proposal Q>
void check_semi_inputs(const HierStudentTModel& model, const Vector& zg, const std::vector<Q>& local_q,
                       const LocalThresholds& th, const std::vector<Eigen::Index>& indices, const char* who) {
  const Eigen::Index N = model.num_data();
  check_dim(zg, model.global_dim(), who);
  if (static_cast<Eigen::Index>(local_q.size()) != N || th.T.size() != N) {
    throw DimensionError(std::string(who) + ": need one local proposal and one threshold per datapoint");
  }
  for (const Eigen::Index n : indices) {
    if (n < 0 || n >= N) throw IndexError(std::string(who) + ": datapoint index out of range");
  }
}

}  // namespace detail

/// Rejection-samples S locals for every datapoint in `indices`, each from its own stream.
template <Proposal Q>
LocalBatch semi_sample_unbiased(const HierStudentTModel& model, const Vector& theta, const Vector& zg,
                                const std::vector<Q>& local_q, const LocalThresholds& th,
                                const std::vector<Eigen::Index>& indices, const LocalSampling& ls) {
  if (ls.S < 2) throw BatchTooSmallError("semi_sample_unbiased: S must be at least 2");
  detail::check_semi_inputs(model, zg, local_q, th, indices, "semi_sample_unbiased");
  LocalBatch out;
  out.indices = indices;
  out.points.resize(indices.size());
  out.mask.assign(indices.size(), 1);
  parallel_for(indices.size(), ls.workers, [&](std::size_t k) {
    const Eigen::Index n = indices[k];
    const LocalGivenGlobalTarget target(model, theta, n);
    Rng rng = local_rng(ls.seed, ls.step, n);
    out.points[k] = rejection_sample(target, zg, local_q[n], AcceptanceConfig(th.T[n], ls.epsilon), rng, ls.S,
                                     ls.max_proposals, ls.t_samples);
  });
  for (const auto& p : out.points) out.proposals_used += p.total_proposals;
  return out;
}

/// Draws exactly S_prime proposals per datapoint and keeps the first S accepted ones.
/// A datapoint is masked in iff at least S were accepted. All S_prime proposals form
/// the iid prefix used by the threshold gradient.
template <Proposal Q>
LocalBatch semi_sample_biased(const HierStudentTModel& model, const Vector& theta, const Vector& zg,
                              const std::vector<Q>& local_q, const LocalThresholds& th,
                              const std::vector<Eigen::Index>& indices, Eigen::Index S_prime,
                              const LocalSampling& ls) {
  if (ls.S < 2) throw BatchTooSmallError("semi_sample_biased: S must be at least 2");
  if (S_prime < ls.S) throw Error("semi_sample_biased: S_prime must be at least S");
  detail::check_semi_inputs(model, zg, local_q, th, indices, "semi_sample_biased");
  LocalBatch out;
  out.indices = indices;
  out.points.resize(indices.size());
  out.mask.assign(indices.size(), 0);
  parallel_for(indices.size(), ls.workers, [&](std::size_t k) {
    const Eigen::Index n = indices[k];
    const Q& q = local_q[n];
    const AcceptanceConfig cfg(th.T[n], ls.epsilon);
    Rng rng = local_rng(ls.seed, ls.step, n);
    AcceptedBatch& b = out.points[k];
    b.reserve(ls.S);
    b.prefix_a.reserve(static_cast<std::size_t>(S_prime));
    b.prefix_da_dT.reserve(static_cast<std::size_t>(S_prime));
    long long since_last = 0;
    for (Eigen::Index j = 0; j < S_prime; ++j) {
      ReparamDraw draw = q.sample(rng);
      const double uniform = rng.uniform();
      const double lp = model.local_log_joint(theta, zg, n, draw.z[0]);
      const double lq = q.log_density(draw.z);
      const Acceptance acc = acceptance(lp, lq, cfg);
      ++b.total_proposals;
      ++since_last;
      b.prefix_a.push_back(acc.a);
      b.prefix_da_dT.push_back(acc.da_dT);
      if (uniform < acc.a && b.size() < ls.S) {
        b.push(std::move(draw), lp, lq, acc, since_last);
        since_last = 0;
      }
    }
    b.shrink_to_size();
    out.mask[k] = b.size() == ls.S ? 1 : 0;
  });
  for (const auto& p : out.points) out.proposals_used += p.total_proposals;
  return out;
}

struct SemiGradient {
  Vector d_global;               // global proposal parameters
  std::vector<Vector> d_local;   // per batch slot; empty when masked out
  Vector d_theta;
  Eigen::Index B_eff = 0;
};

/// Gradient of the mini-batch Semi-RVRS ELBO
///   log p(z_G) - log q(z_G) + (N / B_eff) sum_{masked in} L_n(z_G)
/// where L_n is the local RVRS ELBO with z_G acting as its model parameter.
/// d/dz_G L_n uses the covariance-corrected theta estimator on the conditional target, and the
/// global cotangent is pushed through the reparameterized path of z_G.
template <Proposal QG, Proposal QL>
SemiGradient semi_elbo_gradient(const HierStudentTModel& model, const Vector& theta, const QG& q_global,
                                const ReparamDraw& global_draw, const std::vector<QL>& local_q,
                                const LocalThresholds& th, double epsilon, const LocalBatch& batch,
                                Eigen::Index N_total, int workers = 1) {
  const Eigen::Index B_eff = batch.masked_in();
  if (B_eff == 0) throw EmptyMaskError("semi_elbo_gradient: every datapoint in the batch is masked out");
  const Vector& zg = global_draw.z;
  detail::check_semi_inputs(model, zg, local_q, th, batch.indices, "semi_elbo_gradient");

  const std::size_t B = batch.indices.size();
  std::vector<Vector> g_global(B);
  std::vector<Vector> g_theta(B);
  SemiGradient out;
  out.B_eff = B_eff;
  out.d_local.resize(B);
  parallel_for(B, workers, [&](std::size_t k) {
    if (!batch.mask[k]) return;
    const Eigen::Index n = batch.indices[k];
    const AcceptedBatch& b = batch.points[k];
    const LocalGivenGlobalTarget target(model, theta, n);
    const AcceptanceConfig cfg(th.T[n], epsilon);
    out.d_local[k] = rvrs_phi_gradient(target, zg, local_q[n], cfg, b);
    g_global[k] = theta_gradient_full(target, zg, cfg, b);
    Vector gt = Vector::Zero(model.theta_dim());
    for (Eigen::Index s = 0; s < b.size(); ++s) gt += model.grad_local_theta(theta, zg, n, b.z[s][0]);
    g_theta[k] = gt / static_cast<double>(b.size());
  });

  const double scale = static_cast<double>(N_total) / static_cast<double>(B_eff);
  Vector sum_global = Vector::Zero(model.global_dim());
  Vector sum_theta = Vector::Zero(model.theta_dim());
  for (std::size_t k = 0; k < B; ++k) {
    if (!batch.mask[k]) continue;
    sum_global += g_global[k];
    sum_theta += g_theta[k];
  }
  const Vector cot = model.grad_log_prior_global(zg) - q_global.grad_log_density(zg) + scale * sum_global;
  out.d_global = q_global.velocity_vjp(zg, global_draw.noise, cot);
  out.d_theta = scale * sum_theta;
  return out;
}

/// One SGD step on T_n for every masked-in datapoint of the batch.
inline LocalThresholds semi_adapt_thresholds(const LocalBatch& batch, LocalThresholds th, double t_lr = 1.0,
                                             TEstimator which = TEstimator::proposals) {
  for (std::size_t k = 0; k < batch.indices.size(); ++k) {
    if (!batch.mask[k]) continue;
    const Eigen::Index n = batch.indices[k];
    th.T[n] -= t_lr * t_gradient(batch.points[k], th.Z_tgt, which);
  }
  if (!th.T.allFinite()) throw DivergedError("semi_adapt_thresholds: non-finite threshold", Vector(), 0.0, 0);
  return th;
}

struct SemiEvaluation {
  double elbo = 0.0;                // global term + local A term + log_Zr_lb
  double elbo_per_datapoint = 0.0;
  double log_Zr_lb = 0.0;           // Jensen lower bound on E_q(z_G) sum_n log Z_{r,n}(z_G)
  double global_term = 0.0;         // E[log p(z_G) - log q(z_G)]
  double local_A_term = 0.0;        // E_q(z_G) sum_n E_{r_n}[A_n], self-normalized
};

/// Nested Monte Carlo evaluation: M1 global draws, and for each of them M2 local draws per datapoint.
/// Datapoint n under global draw m uses Rng(base, stream_id(m, n)) with `base` taken from rng, so the
/// result does not depend on `workers`.
template <Proposal QG, Proposal QL>
SemiEvaluation semi_evaluate(const HierStudentTModel& model, const Vector& theta, const QG& q_global,
                             const std::vector<QL>& local_q, const LocalThresholds& th, double epsilon,
                             const SemiEvalConfig& cfg, Rng& rng, int workers = 1) {
  cfg.validate();
  const Eigen::Index N = model.num_data();
  detail::check_semi_inputs(model, Vector::Zero(model.global_dim()), local_q, th, {}, "semi_evaluate");
  const std::uint64_t base = rng.engine()();
  std::vector<double> log_z(static_cast<std::size_t>(N));
  std::vector<double> mean_A(static_cast<std::size_t>(N));
  SemiEvaluation out;
  for (long long m = 0; m < cfg.M1; ++m) {
    const ReparamDraw g = q_global.sample(rng);
    out.global_term += model.log_prior_global(g.z) - q_global.log_density(g.z);
    parallel_for(static_cast<std::size_t>(N), workers, [&](std::size_t k) {
      const auto n = static_cast<Eigen::Index>(k);
      const AcceptanceConfig acc_cfg(th.T[n], epsilon);
      Rng r(base, stream_id(static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(n)));
      double sum_a = 0.0;
      double sum_aA = 0.0;
      for (long long j = 0; j < cfg.M2; ++j) {
        const ReparamDraw d = local_q[n].sample(r);
        const double lp = model.local_log_joint(theta, g.z, n, d.z[0]);
        const double lq = local_q[n].log_density(d.z);
        const Acceptance acc = acceptance(lp, lq, acc_cfg);
        sum_a += acc.a;
        sum_aA += acc.a * (lp - lq - acc.log_a);
      }
      log_z[k] = std::log(sum_a / static_cast<double>(cfg.M2));
      mean_A[k] = sum_aA / sum_a;
    });
    for (Eigen::Index n = 0; n < N; ++n) {
      out.log_Zr_lb += log_z[n];
      out.local_A_term += mean_A[n];
    }
  }
  const double m1 = static_cast<double>(cfg.M1);
  out.global_term /= m1;
  out.log_Zr_lb /= m1;
  out.local_A_term /= m1;
  out.elbo = out.global_term + out.local_A_term + out.log_Zr_lb;
  out.elbo_per_datapoint = out.elbo / static_cast<double>(N);
  return out;
}

template <Proposal QG, Proposal QL>
double semi_log_Zr_lower_bound(const HierStudentTModel& model, const Vector& theta, const QG& q_global,
                               const std::vector<QL>& local_q, const LocalThresholds& th, double epsilon,
                               const SemiEvalConfig& cfg, Rng& rng, int workers = 1) {
  return semi_evaluate(model, theta, q_global, local_q, th, epsilon, cfg, rng, workers).log_Zr_lb;
}

// Uniform B-subset of {0..N-1} by partial Fisher-Yates, in draw order.
inline std::vector<Eigen::Index> sample_without_replacement(Eigen::Index N, Eigen::Index B, Rng& rng) {
  if (B < 1 || B > N) throw Error("sample_without_replacement: need 1 <= B <= N");
  std::vector<Eigen::Index> pool(static_cast<std::size_t>(N));
  for (Eigen::Index i = 0; i < N; ++i) pool[i] = i;
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto span = static_cast<double>(N - i);
    const auto j = i + std::min(static_cast<Eigen::Index>(rng.uniform() * span), N - i - 1);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(B));
  return pool;
}

enum class SemiSampler { unbiased, biased };

struct SemiTrainConfig {
  long long total_iters = 20000;
  Eigen::Index batch_size = 32;
  Eigen::Index S = 2;
  SemiSampler sampler = SemiSampler::unbiased;
  Eigen::Index S_prime = 0;  // biased sampler; 0 means ceil(2 S / Z_tgt)
  double Z_tgt = 0.5;
  double epsilon = 1e-4;
  double base_lr = 1e-3;   // global proposal (and theta when learned)
  double local_lr = 1e-2;  // per-datapoint proposals, lazy Adam
  std::uint64_t seed = 0;
  bool learn_theta = false;
  TEstimator t_estimator = TEstimator::proposals;
  double t_lr = 1.0;
  long long t_samples = 0;  // unbiased sampler; 0 means ceil(4 S / Z_tgt)
  MeanFieldConfig phase1{5000, 1e-2, 1, 100};
  long long init_T_samples = 200;
  long long trace_every = 100;
  long long max_proposals = 0;
  int workers = 1;

  void validate() const {
    if (!(Z_tgt > 0.0 && Z_tgt < 1.0)) throw Error("SemiTrainConfig: Z_tgt must lie in (0, 1)");
    if (S < 2) throw Error("SemiTrainConfig: S must be at least 2");
    if (S_prime != 0 && S_prime < S) throw Error("SemiTrainConfig: S_prime must be at least S");
    if (batch_size < 1) throw Error("SemiTrainConfig: batch_size must be positive");
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw Error("SemiTrainConfig: epsilon must lie in [0, 1)");
    if (total_iters < 0 || phase1.iters < 0) throw Error("SemiTrainConfig: iteration counts must be non-negative");
    if (trace_every < 1 || init_T_samples < 1) throw Error("SemiTrainConfig: trace_every and init_T_samples must be positive");
    if (t_samples != 0 && t_samples < 2) throw Error("SemiTrainConfig: t_samples must be at least 2");
  }

  Eigen::Index resolved_S_prime() const {
    return S_prime > 0 ? S_prime : static_cast<Eigen::Index>(std::ceil(2.0 * static_cast<double>(S) / Z_tgt));
  }

  Eigen::Index resolved_t_samples() const {
    return t_samples > 0 ? static_cast<Eigen::Index>(t_samples)
                         : static_cast<Eigen::Index>(std::ceil(4.0 * static_cast<double>(S) / Z_tgt));
  }
};

namespace stream {
inline constexpr std::uint64_t semi_batch = 4;
inline constexpr std::uint64_t semi_global = 5;
}  // namespace stream

struct SemiState {
  MeanFieldNormal global;
  std::vector<MeanFieldNormal> locals;
  LocalThresholds thresholds;
  Vector theta;
};

struct SemiFit {
  SemiState state;
  std::vector<TraceRow> trace;  // T column holds the mean threshold
  std::vector<TraceRow> phase1_trace;
  double mask_rate = 0.0;       // over all phase-2 batch slots
  long long total_proposals = 0;
  long long skipped_steps = 0;  // batches with every datapoint masked out
};

/// Splits a mean-field fit over [z_G, z_1..z_N] into the global and per-datapoint proposals.
inline SemiState split_joint_meanfield(const HierStudentTModel& model, const MeanFieldNormal& joint, Vector theta,
                                       double Z_tgt) {
  const Eigen::Index G = model.global_dim();
  const Eigen::Index N = model.num_data();
  detail::check_dim(joint.mu(), G + N, "split_joint_meanfield");
  SemiState st{MeanFieldNormal(joint.mu().head(G), joint.log_scale().head(G)), {}, {}, std::move(theta)};
  st.locals.reserve(static_cast<std::size_t>(N));
  for (Eigen::Index n = 0; n < N; ++n) {
    st.locals.emplace_back(joint.mu().segment(G + n, 1), joint.log_scale().segment(G + n, 1));
  }
  st.thresholds = LocalThresholds(Vector::Zero(N), Z_tgt);
  return st;
}

// T_n = -E_{q(z_G) q_n}[log p(y_n, z_n | z_G) - log q_n(z_n)]
inline Vector initial_local_thresholds(const HierStudentTModel& model, const SemiState& st, long long M, Rng& rng) {
  const Eigen::Index N = model.num_data();
  Vector T = Vector::Zero(N);
  for (long long m = 0; m < M; ++m) {
    const ReparamDraw g = st.global.sample(rng);
    for (Eigen::Index n = 0; n < N; ++n) {
      const ReparamDraw d = st.locals[n].sample(rng);
      T[n] -= model.local_log_joint(st.theta, g.z, n, d.z[0]) - st.locals[n].log_density(d.z);
    }
  }
  return T / static_cast<double>(M);
}

/// Semi-RVRS training: mean-field fit of the full joint, thresholds from the local ELBOs,
/// then mini-batch steps on the global proposal (Adam), the touched local proposals (lazy Adam)
/// and their thresholds (SGD).
inline SemiFit fit_semi(const HierStudentTModel& model, Vector theta, const SemiTrainConfig& cfg) {
  cfg.validate();
  const Eigen::Index N = model.num_data();
  const Eigen::Index G = model.global_dim();
  const Eigen::Index B = std::min(cfg.batch_size, N);
  const HierJointTarget joint(model);

  SemiFit out;
  {
    Rng rng1(cfg.seed, stream::phase1);
    MeanFieldFit<MeanFieldNormal> p1 =
        fit_meanfield(joint, theta, MeanFieldNormal::standard(G + N), cfg.phase1, rng1);
    out.phase1_trace = std::move(p1.trace);
    out.state = split_joint_meanfield(model, p1.proposal, std::move(theta), cfg.Z_tgt);
  }
  SemiState& st = out.state;
  {
    Rng rng_T(cfg.seed, stream::init_T);
    st.thresholds.T = initial_local_thresholds(model, st, cfg.init_T_samples, rng_T);
  }

  Vector g_params = st.global.flat();
  AdamState adam_g(g_params.size(), cfg.base_lr);
  AdamState adam_theta(st.theta.size(), cfg.base_lr);
  std::vector<AdamState> adam_l(static_cast<std::size_t>(N), AdamState(2, cfg.local_lr));
  Rng batch_rng(cfg.seed, stream::semi_batch);
  Rng global_rng(cfg.seed, stream::semi_global);

  LocalSampling ls;
  ls.epsilon = cfg.epsilon;
  ls.S = cfg.S;
  ls.seed = cfg.seed;
  ls.max_proposals = cfg.max_proposals;
  ls.t_samples = cfg.t_estimator == TEstimator::proposals ? cfg.resolved_t_samples() : cfg.S;
  ls.workers = cfg.workers;
  const Eigen::Index S_prime = cfg.resolved_S_prime();

  long long slots = 0;
  long long slots_in = 0;
  double window_proxy = 0.0;
  long long window_steps = 0;
  double window_prefix_a = 0.0;
  long long window_prefix_n = 0;
  for (long long it = 0; it < cfg.total_iters; ++it) {
    const double lr = lr_schedule(it, cfg.total_iters, cfg.base_lr);
    const double local_lr = lr_schedule(it, cfg.total_iters, cfg.local_lr);
    const std::vector<Eigen::Index> idx = sample_without_replacement(N, B, batch_rng);
    const ReparamDraw draw = st.global.sample(global_rng);
    ls.step = static_cast<std::uint64_t>(it);
    const LocalBatch batch = cfg.sampler == SemiSampler::unbiased
                                 ? semi_sample_unbiased(model, st.theta, draw.z, st.locals, st.thresholds, idx, ls)
                                 : semi_sample_biased(model, st.theta, draw.z, st.locals, st.thresholds, idx,
                                                      S_prime, ls);
    out.total_proposals += batch.proposals_used;
    slots += batch.size();
    slots_in += batch.masked_in();
    for (const auto& p : batch.points) {
      for (const double a : p.prefix_a) window_prefix_a += a;
      window_prefix_n += static_cast<long long>(p.prefix_a.size());
    }

    if (batch.masked_in() == 0) {
      ++out.skipped_steps;
    } else {
      const SemiGradient grad = semi_elbo_gradient(model, st.theta, st.global, draw, st.locals, st.thresholds,
                                                   cfg.epsilon, batch, N, cfg.workers);
      if (!grad.d_global.allFinite() || (cfg.learn_theta && !grad.d_theta.allFinite())) {
        throw DivergedError("fit_semi: non-finite gradient at iteration " + std::to_string(it), st.global.flat(),
                            st.thresholds.T.mean(), it);
      }
      double proxy = model.log_prior_global(draw.z) - st.global.log_density(draw.z);
      const double scale = static_cast<double>(N) / static_cast<double>(batch.masked_in());
      for (Eigen::Index k = 0; k < batch.size(); ++k) {
        if (!batch.mask[k]) continue;
        const Eigen::Index n = batch.indices[k];
        proxy += scale * batch.points[k].A.mean();
        if (!grad.d_local[k].allFinite()) {
          throw DivergedError("fit_semi: non-finite local gradient at iteration " + std::to_string(it),
                              st.locals[n].flat(), st.thresholds.T[n], it);
        }
        Vector lp = st.locals[n].flat();
        adam_step(adam_l[n], lp, grad.d_local[k], local_lr);
        st.locals[n].set_flat(lp);
      }
      adam_step(adam_g, g_params, grad.d_global, lr);
      st.global.set_flat(g_params);
      if (cfg.learn_theta) adam_step(adam_theta, st.theta, grad.d_theta, lr);
      st.thresholds = semi_adapt_thresholds(batch, std::move(st.thresholds), cfg.t_lr, cfg.t_estimator);
      window_proxy += proxy;
      ++window_steps;
    }

    if ((it + 1) % cfg.trace_every == 0 || it + 1 == cfg.total_iters) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      out.trace.push_back({it + 1, window_steps > 0 ? window_proxy / static_cast<double>(window_steps) : nan,
                           st.thresholds.T.mean(),
                           window_prefix_n > 0 ? window_prefix_a / static_cast<double>(window_prefix_n) : nan, lr});
      window_proxy = 0.0;
      window_steps = 0;
      window_prefix_a = 0.0;
      window_prefix_n = 0;
    }
  }
  out.mask_rate = slots > 0 ? static_cast<double>(slots_in) / static_cast<double>(slots) : 1.0;
  return out;
}

}  // namespace rvrs
