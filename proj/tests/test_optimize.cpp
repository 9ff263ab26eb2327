#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "rvrs/optimize.hpp"
#include "rvrs/oracle.hpp"
#include "test_support.hpp"

using rvrs::AcceptanceConfig;
using rvrs::MeanFieldNormal;
using rvrs::Vector;
using testsupport::vec;

namespace {

// Bimodal 1-D target: log(0.7 N(z|-1, 0.5^2) + 0.3 N(z|1.5, 0.8^2)).
struct Bimodal {
  Eigen::Index latent_dim() const { return 1; }
  Eigen::Index theta_dim() const { return 0; }
  Vector default_theta() const { return Vector(0); }
  double log_joint(const Vector&, const Vector& z) const {
    return rvrs::log_add_exp(std::log(0.7) + rvrs::normal_log_pdf(z[0], -1.0, 0.5),
                             std::log(0.3) + rvrs::normal_log_pdf(z[0], 1.5, 0.8));
  }
  Vector grad_z_log_joint(const Vector&, const Vector& z) const {
    const double l1 = std::log(0.7) + rvrs::normal_log_pdf(z[0], -1.0, 0.5);
    const double l2 = std::log(0.3) + rvrs::normal_log_pdf(z[0], 1.5, 0.8);
    const double w1 = 1.0 / (1.0 + std::exp(l2 - l1));
    return Vector::Constant(1, w1 * (-(z[0] + 1.0) / 0.25) + (1.0 - w1) * (-(z[0] - 1.5) / 0.64));
  }
  Vector grad_theta_log_joint(const Vector&, const Vector&) const { throw rvrs::NoThetaError("none"); }
};

// z ~ N(0, 1), x | z ~ N(z, e^{2 theta}) with x = 2: evidence is maximal at theta = log(3)/2.
struct NoiseScale {
  Eigen::Index latent_dim() const { return 1; }
  Eigen::Index theta_dim() const { return 1; }
  Vector default_theta() const { return Vector::Zero(1); }
  double log_joint(const Vector& th, const Vector& z) const {
    return rvrs::normal_log_pdf(z[0], 0.0, 1.0) + rvrs::normal_log_pdf(2.0, z[0], std::exp(th[0]));
  }
  Vector grad_z_log_joint(const Vector& th, const Vector& z) const {
    return Vector::Constant(1, -z[0] + (2.0 - z[0]) * std::exp(-2.0 * th[0]));
  }
  Vector grad_theta_log_joint(const Vector& th, const Vector& z) const {
    return Vector::Constant(1, -1.0 + (2.0 - z[0]) * (2.0 - z[0]) * std::exp(-2.0 * th[0]));
  }
};

struct NanTarget : Bimodal {
  double log_joint(const Vector&, const Vector& z) const {
    return z[0] > 1.0 ? std::numeric_limits<double>::quiet_NaN() : -0.5 * z[0] * z[0];
  }
  Vector grad_z_log_joint(const Vector&, const Vector& z) const {
    return Vector::Constant(1, z[0] > 1.0 ? std::numeric_limits<double>::quiet_NaN() : -z[0]);
  }
};

rvrs::TrainConfig quick_config(double z_tgt, long long iters) {
  rvrs::TrainConfig cfg;
  cfg.total_iters = iters;
  cfg.Z_tgt = z_tgt;
  cfg.base_lr = 1e-2;
  cfg.seed = 5;
  cfg.checkpoint_every = 0;
  cfg.phase1.iters = 3000;
  cfg.phase1.base_lr = 1e-2;
  return cfg;
}

}  // namespace

TEST(Adam, ZeroGradientKeepsParameters) {
  rvrs::AdamState st(3, 0.1);
  Vector p = vec({1.0, -2.0, 3.0});
  const Vector p0 = p;
  rvrs::adam_step(st, p, Vector::Zero(3));
  EXPECT_EQ(p, p0);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepIsNormalizedGradient) {
  rvrs::AdamState st(3, 0.1);
  Vector p = Vector::Zero(3);
  const Vector g = vec({2.0, -0.5, 1e-3});
  rvrs::adam_step(st, p, g, 0.01);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], 0.01 * g[i] / (std::abs(g[i]) + 1e-8), 1e-15);
}

TEST(Adam, OppositeStepsClosedForm) {
  // After +g then -g: m_hat = -0.01 g / 0.19, v_hat = g^2, so the net move is lr (1 - 1/19).
  rvrs::AdamState st(1, 0.1);
  Vector p = Vector::Zero(1);
  rvrs::adam_step(st, p, vec({3.0}), 1e-3);
  rvrs::adam_step(st, p, vec({-3.0}), 1e-3);
  EXPECT_NEAR(p[0], 1e-3 * (1.0 - 1.0 / 19.0), 1e-10);
}

TEST(Adam, ShapeMismatch) {
  rvrs::AdamState st(2, 0.1);
  Vector p = Vector::Zero(2);
  EXPECT_THROW(rvrs::adam_step(st, p, Vector::Zero(3)), rvrs::ShapeError);
  Vector p3 = Vector::Zero(3);
  EXPECT_THROW(rvrs::adam_step(st, p3, Vector::Zero(3)), rvrs::ShapeError);
}

TEST(LrSchedule, Examples) {
  EXPECT_DOUBLE_EQ(rvrs::lr_schedule(0, 300, 1e-4), 1e-4);
  EXPECT_DOUBLE_EQ(rvrs::lr_schedule(99, 300, 1e-4), 1e-4);
  EXPECT_DOUBLE_EQ(rvrs::lr_schedule(100, 300, 1e-4), 1e-5);
  EXPECT_DOUBLE_EQ(rvrs::lr_schedule(199, 300, 1e-4), 1e-5);
  EXPECT_DOUBLE_EQ(rvrs::lr_schedule(200, 300, 1e-4), 1e-6);
  EXPECT_DOUBLE_EQ(rvrs::lr_schedule(299, 300, 1e-4), 1e-6);
}

TEST(FitMeanField, RecoversGaussian) {
  const auto target = rvrs::AnalyticGaussianTarget::diagonal(0.0, vec({2.0}), vec({0.5}));
  rvrs::MeanFieldConfig cfg;
  cfg.iters = 10000;
  cfg.base_lr = 1e-2;
  rvrs::Rng rng(1);
  const auto fit = rvrs::fit_meanfield(target, target.default_theta(), MeanFieldNormal::standard(1), cfg, rng);
  EXPECT_NEAR(fit.proposal.mu()[0], 2.0, 1e-2);
  EXPECT_NEAR(fit.proposal.scale()[0], 0.5, 1e-2);
  EXPECT_FALSE(fit.trace.empty());
}

TEST(FitMeanField, FunnelHasParametricMisfit) {
  rvrs::FunnelTarget f;
  rvrs::MeanFieldConfig cfg;
  cfg.iters = 5000;
  cfg.base_lr = 1e-2;
  rvrs::Rng rng(2);
  const auto fit = rvrs::fit_meanfield(f, Vector(0), MeanFieldNormal::standard(2), cfg, rng);
  const auto grid = rvrs::QuadratureGrid::around(fit.proposal, 12.0, 801);
  EXPECT_LT(rvrs::quad_elbo(f, Vector(0), fit.proposal, AcceptanceConfig(200.0, 0.0), grid), -0.05);
}

TEST(FitMeanField, DivergenceCarriesLastGoodState) {
  NanTarget t;
  rvrs::MeanFieldConfig cfg;
  cfg.iters = 100;
  rvrs::Rng rng(3);
  try {
    rvrs::fit_meanfield(t, Vector(0), MeanFieldNormal::standard(1), cfg, rng);
    FAIL() << "expected DivergedError";
  } catch (const rvrs::DivergedError& e) {
    EXPECT_EQ(e.last_good_params().size(), 2);
    EXPECT_TRUE(e.last_good_params().allFinite());
  }
}

TEST(AdaptThreshold, ReachesTargetAcceptance) {
  const auto target = rvrs::AnalyticGaussianTarget::diagonal(0.2, vec({1.0}), vec({0.6}));
  const auto q = MeanFieldNormal::standard(1);
  for (const double z : {0.1, 0.3, 0.5}) {
    rvrs::Rng rng(4);
    const auto acc = rvrs::adapt_threshold(target, target.default_theta(), q, AcceptanceConfig(0.0, 1e-4), z, 5000, rng);
    rvrs::Rng eval(5);
    EXPECT_NEAR(rvrs::estimate_Zr(target, target.default_theta(), q, acc, eval, 100000).mean, z, 0.02) << z;
  }
}

TEST(FitRvrs, MismatchReachesTargetAndImprovesElbo) {
  Bimodal t;
  const auto cfg = quick_config(0.3, 30000);
  const auto p1 = rvrs::phase_one(t, Vector(0), MeanFieldNormal::standard(1), cfg);
  const auto fit = rvrs::fit_from_phase_one(t, Vector(0), p1, cfg, rvrs::PhiEstimator::rvrs);
  rvrs::Rng rng(6);
  const double zr = rvrs::estimate_Zr(t, Vector(0), fit.proposal, fit.acceptance, rng, 100000).mean;
  EXPECT_GE(zr, 0.28);
  EXPECT_LE(zr, 0.32);
  const auto grid = rvrs::QuadratureGrid::interval(-15.0, 15.0, 4001);
  const double elbo_mf = rvrs::quad_elbo(t, Vector(0), p1.fit.proposal, AcceptanceConfig(200.0, 0.0), grid);
  const double elbo = rvrs::quad_elbo(t, Vector(0), fit.proposal, fit.acceptance, grid);
  EXPECT_GT(elbo, elbo_mf + 0.05);
  EXPECT_LT(elbo, 0.0);
}

TEST(FitRvrs, DeterministicGivenSeed) {
  Bimodal t;
  const auto cfg = quick_config(0.3, 2000);
  const auto a = rvrs::fit_rvrs(t, Vector(0), MeanFieldNormal::standard(1), cfg);
  const auto b = rvrs::fit_rvrs(t, Vector(0), MeanFieldNormal::standard(1), cfg);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].elbo_proxy, b.trace[i].elbo_proxy);
    EXPECT_EQ(a.trace[i].T, b.trace[i].T);
    EXPECT_EQ(a.trace[i].Zr_hat, b.trace[i].Zr_hat);
  }
  EXPECT_EQ(a.proposal.flat(), b.proposal.flat());
}

TEST(FitVrs, SharesPhaseOneAndFixedPoint) {
  Bimodal t;
  auto cfg = quick_config(0.3, 100000);
  const auto p1 = rvrs::phase_one(t, Vector(0), MeanFieldNormal::standard(1), cfg);
  const auto p1b = rvrs::phase_one(t, Vector(0), MeanFieldNormal::standard(1), cfg);
  EXPECT_EQ(p1.fit.proposal.flat(), p1b.fit.proposal.flat());
  EXPECT_EQ(p1.T_init, p1b.T_init);
  const auto r = rvrs::fit_from_phase_one(t, Vector(0), p1, cfg, rvrs::PhiEstimator::rvrs);
  const auto v = rvrs::fit_from_phase_one(t, Vector(0), p1, cfg, rvrs::PhiEstimator::vrs);
  const auto grid = rvrs::QuadratureGrid::interval(-15.0, 15.0, 4001);
  EXPECT_NEAR(rvrs::quad_elbo(t, Vector(0), r.proposal, r.acceptance, grid),
              rvrs::quad_elbo(t, Vector(0), v.proposal, v.acceptance, grid), 0.05);
}

TEST(FitRvrs, LearnsThetaWithFullEstimator) {
  NoiseScale t;
  auto cfg = quick_config(0.5, 40000);
  cfg.learn_theta = true;
  cfg.theta_estimator = rvrs::ThetaEstimator::full;
  const auto fit = rvrs::fit_rvrs(t, t.default_theta(), MeanFieldNormal::standard(1), cfg);
  EXPECT_NEAR(fit.theta[0], 0.5 * std::log(3.0), 0.05);
}

TEST(FitRvrs, ConfigValidation) {
  Bimodal t;
  auto cfg = quick_config(1.2, 10);
  EXPECT_THROW(rvrs::fit_rvrs(t, Vector(0), MeanFieldNormal::standard(1), cfg), rvrs::Error);
  cfg = quick_config(0.3, 10);
  cfg.S = 1;
  EXPECT_THROW(rvrs::fit_rvrs(t, Vector(0), MeanFieldNormal::standard(1), cfg), rvrs::Error);
}

TEST(FitRvrs, BudgetExhaustionPropagates) {
  Bimodal t;
  auto cfg = quick_config(0.3, 10);
  cfg.max_proposals = 2;
  cfg.phase1.iters = 10;
  EXPECT_THROW(rvrs::train_rejection(t, Vector(0), MeanFieldNormal::standard(1), -200.0, cfg, rvrs::PhiEstimator::rvrs),
               rvrs::BudgetExhaustedError);
}
