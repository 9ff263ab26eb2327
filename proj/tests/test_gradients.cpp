#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "rvrs/dataset.hpp"
#include "rvrs/gradients.hpp"
#include "rvrs/hier_student_t.hpp"
#include "rvrs/optimize.hpp"
#include "rvrs/oracle.hpp"
#include "test_support.hpp"

using rvrs::AcceptanceConfig;
using rvrs::AcceptedBatch;
using rvrs::MeanFieldNormal;
using rvrs::Vector;
using testsupport::MeanAccumulator;
using testsupport::vec;

namespace {

struct Mismatch {
  rvrs::AnalyticGaussianTarget target = rvrs::AnalyticGaussianTarget::diagonal(0.2, vec({1.0}), vec({0.6}));
  MeanFieldNormal q{vec({0.1}), vec({0.05})};
  Vector theta = target.default_theta();
  rvrs::QuadratureGrid grid = rvrs::QuadratureGrid::around(q, 14.0, 2001);

  Vector phi_truth(const AcceptanceConfig& cfg) const {
    return rvrs::finite_diff(
        [&](const Vector& p) {
          MeanFieldNormal moved = q;
          moved.set_flat(p);
          return rvrs::quad_elbo(target, theta, moved, cfg, grid);
        },
        q.flat());
  }
};

void expect_within_se(const MeanAccumulator& acc, const Vector& truth, double k = 4.0) {
  const Vector m = acc.mean();
  const Vector se = acc.std_err();
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    EXPECT_LE(std::abs(m[i] - truth[i]), k * se[i] + 1e-12)
        << "coordinate " << i << ": mean " << m[i] << " truth " << truth[i] << " se " << se[i];
  }
}

AcceptedBatch batch_with_acceptance(std::vector<double> a) {
  AcceptedBatch b;
  b.reserve(static_cast<Eigen::Index>(a.size()));
  for (double v : a) {
    rvrs::Acceptance acc;
    acc.a = acc.a_raw = v;
    acc.a_raw_c = 1.0 - v;
    acc.log_a = std::log(v);
    b.push({Vector::Zero(1), {Vector::Zero(1)}}, 0.0, 0.0, acc, 1);
  }
  b.prefix_a = a;
  for (double v : a) b.prefix_da_dT.push_back(v * (1.0 - v));
  return b;
}

}  // namespace

TEST(RvrsPhi, ReducesToReparameterizedGradient) {
  const auto target = rvrs::AnalyticGaussianTarget::standard(1, 0.0);
  const MeanFieldNormal q(vec({0.7}), vec({0.0}));
  const AcceptanceConfig cfg(40.0, 0.0);
  rvrs::Rng rng(1);
  MeanAccumulator acc(2);
  for (int i = 0; i < 100000; ++i) {
    const auto b = rvrs::rejection_sample(target, target.default_theta(), q, cfg, rng, 2);
    acc.add(rvrs::rvrs_phi_gradient(target, target.default_theta(), q, cfg, b));
  }
  EXPECT_LE(std::abs(acc.mean()[0] + 0.7), 4.0 * acc.std_err()[0] + 1e-12);
}

TEST(RvrsPhi, GuardedFormAtZeroEpsilonIsBitwiseIdentical) {
  Mismatch p;
  const AcceptanceConfig cfg(0.3, 0.0);
  rvrs::Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    const auto b = rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 2 + i % 4);
    const Vector g0 = rvrs::rvrs_phi_gradient_eps0(p.target, p.theta, p.q, b);
    const Vector g1 = rvrs::rvrs_phi_gradient(p.target, p.theta, p.q, cfg, b);
    ASSERT_EQ(g0.size(), g1.size());
    for (Eigen::Index k = 0; k < g0.size(); ++k) ASSERT_EQ(g0[k], g1[k]);
  }
}

TEST(RvrsPhi, UnbiasedAgainstQuadratureFiniteDifferences) {
  Mismatch p;
  for (const double eps : {0.0, 1e-4, 0.05}) {
    const AcceptanceConfig cfg(0.0, eps);
    rvrs::Rng rng(3);
    MeanAccumulator acc(2);
    for (int i = 0; i < 100000; ++i) {
      const auto b = rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 2);
      acc.add(rvrs::rvrs_phi_gradient(p.target, p.theta, p.q, cfg, b));
    }
    SCOPED_TRACE(eps);
    expect_within_se(acc, p.phi_truth(cfg));
  }
}

TEST(VrsPhi, UnbiasedAgainstQuadratureFiniteDifferences) {
  Mismatch p;
  for (const double eps : {0.0, 0.05}) {
    const AcceptanceConfig cfg(0.0, eps);
    rvrs::Rng rng(4);
    MeanAccumulator acc(2);
    for (int i = 0; i < 100000; ++i) {
      const auto b = rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 2);
      acc.add(rvrs::vrs_phi_gradient(p.q, cfg, b));
    }
    SCOPED_TRACE(eps);
    expect_within_se(acc, p.phi_truth(cfg));
  }
}

TEST(VrsPhi, SameMeanAsRvrs) {
  Mismatch p;
  const AcceptanceConfig cfg(-0.5, 0.0);
  rvrs::Rng rng(5);
  MeanAccumulator r(2), v(2);
  for (int i = 0; i < 100000; ++i) {
    const auto b = rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 2);
    r.add(rvrs::rvrs_phi_gradient(p.target, p.theta, p.q, cfg, b));
    v.add(rvrs::vrs_phi_gradient(p.q, cfg, b));
  }
  for (int k = 0; k < 2; ++k) {
    const double joint = std::sqrt(r.std_err()[k] * r.std_err()[k] + v.std_err()[k] * v.std_err()[k]);
    EXPECT_LT(std::abs(r.mean()[k] - v.mean()[k]), 4.0 * joint);
  }
}

TEST(VrsPhi, ConstantAIsZero) {
  const auto target = rvrs::AnalyticGaussianTarget::standard(2, -1.0);
  const auto q = MeanFieldNormal::standard(2);
  rvrs::Rng rng(6);
  const AcceptanceConfig cfg(0.0, 0.0);
  for (int i = 0; i < 100; ++i) {
    const auto b = rvrs::rejection_sample(target, target.default_theta(), q, cfg, rng, 2);
    EXPECT_LT(rvrs::vrs_phi_gradient(q, cfg, b).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(VrsPhi, VarianceExceedsRvrsOnLogistic) {
  rvrs::Rng data_rng(7);
  auto ds = rvrs::synthetic_logistic(100, 10, data_rng);
  rvrs::LogisticRegressionTarget target(ds.features, ds.targets);
  const Vector theta(0);
  rvrs::MeanFieldConfig mf;
  mf.iters = 1000;
  mf.base_lr = 1e-2;
  rvrs::Rng fit_rng(8);
  const auto fit = rvrs::fit_meanfield(target, theta, MeanFieldNormal::standard(10), mf, fit_rng);
  rvrs::Rng elbo_rng(9);
  const AcceptanceConfig cfg(-rvrs::estimate_vi_elbo(target, theta, fit.proposal, elbo_rng, 1000), 0.0);
  rvrs::Rng rng(10);
  MeanAccumulator r(20), v(20);
  for (int i = 0; i < 20000; ++i) {
    const auto b = rvrs::rejection_sample(target, theta, fit.proposal, cfg, rng, 2);
    r.add(rvrs::rvrs_phi_gradient(target, theta, fit.proposal, cfg, b));
    v.add(rvrs::vrs_phi_gradient(fit.proposal, cfg, b));
  }
  const Vector ratio = v.variance().cwiseQuotient(r.variance());
  EXPECT_GT(ratio.minCoeff(), 1.0);
}

TEST(ThetaDirect, Examples) {
  Mismatch p;
  rvrs::Rng rng(11);
  const auto b = rvrs::rejection_sample(p.target, p.theta, p.q, AcceptanceConfig(0.0, 0.0), rng, 2);
  EXPECT_EQ(rvrs::theta_gradient_direct(p.target, p.theta, b)[0], 1.0);

  const auto m = [] {
    rvrs::Rng r(12);
    auto ds = rvrs::synthetic_heavy_tailed_regression(4, 1, r);
    return rvrs::HierStudentTModel(ds.features, ds.targets);
  }();
  rvrs::HierJointTarget joint(m);
  const auto q = MeanFieldNormal::standard(joint.latent_dim());
  const auto b2 = rvrs::rejection_sample(joint, joint.default_theta(), q, AcceptanceConfig(40.0, 0.0), rng, 2);
  const Vector expected = 0.5 * (joint.grad_theta_log_joint(joint.default_theta(), b2.z[0]) +
                                 joint.grad_theta_log_joint(joint.default_theta(), b2.z[1]));
  EXPECT_TRUE(rvrs::theta_gradient_direct(joint, joint.default_theta(), b2).isApprox(expected, 1e-14));
}

TEST(ThetaDirect, NoThetaTarget) {
  rvrs::FunnelTarget f;
  const auto q = MeanFieldNormal::standard(2);
  rvrs::Rng rng(13);
  const auto b = rvrs::rejection_sample(f, Vector(0), q, AcceptanceConfig(40.0, 0.0), rng, 2);
  EXPECT_THROW(rvrs::theta_gradient_direct(f, Vector(0), b), rvrs::NoThetaError);
  EXPECT_THROW(rvrs::theta_gradient_full(f, Vector(0), AcceptanceConfig(40.0, 0.0), b), rvrs::NoThetaError);
}

TEST(ThetaDirect, MatchesFiniteDifferenceWhenAcceptanceIsOne) {
  Mismatch p;
  const AcceptanceConfig cfg(200.0, 0.0);
  const Vector truth = rvrs::finite_diff(
      [&](const Vector& th) { return rvrs::quad_elbo(p.target, th, p.q, cfg, p.grid); }, p.theta);
  rvrs::Rng rng(14);
  MeanAccumulator acc(1);
  for (int i = 0; i < 1000; ++i) {
    acc.add(rvrs::theta_gradient_direct(p.target, p.theta,
                                        rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 2)));
  }
  EXPECT_NEAR(acc.mean()[0], truth[0], 1e-6);
}

TEST(ThetaFull, UnbiasedAgainstQuadratureFiniteDifferences) {
  Mismatch p;
  for (const double eps : {0.0, 0.05}) {
    const AcceptanceConfig cfg(0.0, eps);
    const Vector truth = rvrs::finite_diff(
        [&](const Vector& th) { return rvrs::quad_elbo(p.target, th, p.q, cfg, p.grid); }, p.theta);
    rvrs::Rng rng(15);
    MeanAccumulator acc(1);
    for (int i = 0; i < 100000; ++i) {
      acc.add(rvrs::theta_gradient_full(p.target, p.theta, cfg,
                                        rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 2)));
    }
    SCOPED_TRACE(eps);
    expect_within_se(acc, truth);
    // The direct term alone is biased here.
    EXPECT_GT(std::abs(1.0 - truth[0]), 1e-3);
  }
}

TEST(ThetaFull, EqualsDirectWhenAcceptanceIsOne) {
  Mismatch p;
  const AcceptanceConfig cfg(1000.0, 0.0);
  rvrs::Rng rng(16);
  for (int i = 0; i < 100; ++i) {
    const auto b = rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 3);
    EXPECT_EQ(rvrs::theta_gradient_full(p.target, p.theta, cfg, b), rvrs::theta_gradient_direct(p.target, p.theta, b));
  }
}

TEST(ThetaFull, ConstantAcceptanceCorrectionVanishes) {
  const auto target = rvrs::AnalyticGaussianTarget::standard(1, -1.0);
  const auto q = MeanFieldNormal::standard(1);
  const AcceptanceConfig cfg(0.0, 0.0);
  rvrs::Rng rng(17);
  MeanAccumulator acc(1);
  for (int i = 0; i < 100000; ++i) {
    const auto b = rvrs::rejection_sample(target, target.default_theta(), q, cfg, rng, 2);
    acc.add(rvrs::theta_gradient_full(target, target.default_theta(), cfg, b) -
            rvrs::theta_gradient_direct(target, target.default_theta(), b));
  }
  EXPECT_LE(std::abs(acc.mean()[0]), 4.0 * acc.std_err()[0] + 1e-12);
}

TEST(TGradient, Examples) {
  EXPECT_EQ(rvrs::t_gradient(batch_with_acceptance({0.3, 0.3}), 0.3), 0.0);
  EXPECT_EQ(rvrs::t_gradient(batch_with_acceptance({0.25, 0.25, 0.25}), 0.25), 0.0);
  EXPECT_GT(rvrs::t_gradient(batch_with_acceptance({0.6, 0.6}), 0.3), 0.0);
  EXPECT_LT(rvrs::t_gradient(batch_with_acceptance({0.1, 0.1}), 0.3), 0.0);
  EXPECT_EQ(rvrs::t_gradient_proposals(batch_with_acceptance({0.3, 0.3, 0.3}), 0.3), 0.0);
  EXPECT_GT(rvrs::t_gradient_proposals(batch_with_acceptance({0.6, 0.6}), 0.3), 0.0);
  EXPECT_THROW(rvrs::t_gradient(batch_with_acceptance({0.5}), 0.3), rvrs::BatchTooSmallError);
  EXPECT_THROW(rvrs::t_gradient(batch_with_acceptance({0.5, 0.5}), 1.0), rvrs::Error);
}

TEST(TGradient, ProposalEstimatorUnbiased) {
  Mismatch p;
  const double z_tgt = 0.3;
  for (const double T : {-1.0, 0.0, 1.5}) {
    const auto zr_at = [&](double t) { return rvrs::quad_Zr(p.target, p.theta, p.q, AcceptanceConfig(t, 1e-4), p.grid); };
    const double truth = (zr_at(T) - z_tgt) * (zr_at(T + 1e-5) - zr_at(T - 1e-5)) / 2e-5;
    const AcceptanceConfig cfg(T, 1e-4);
    rvrs::Rng rng(18);
    MeanAccumulator acc(1);
    for (int i = 0; i < 100000; ++i) {
      acc.add(Vector::Constant(1, rvrs::t_gradient_proposals(rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 2),
                                                             z_tgt)));
    }
    SCOPED_TRACE(T);
    expect_within_se(acc, Vector::Constant(1, truth));
  }
}

TEST(TGradient, AcceptedSampleEstimatorTargetsAcceptedMean) {
  // On accepted draws the estimator vanishes where E_r[a] = Z_tgt, not where Z_r = Z_tgt.
  Mismatch p;
  const AcceptanceConfig cfg(0.0, 0.0);
  const double zr = rvrs::quad_Zr(p.target, p.theta, p.q, cfg, p.grid);
  const double er_a = p.grid.integrate([&](const Vector& z) {
    const double a = rvrs::accept_prob(p.target, p.theta, p.q, cfg, z).a;
    return std::exp(p.q.log_density(z)) * a * a;
  }) / zr;
  ASSERT_GT(er_a - zr, 0.02);
  rvrs::Rng rng(19);
  MeanAccumulator at_er(1), at_zr(1);
  for (int i = 0; i < 100000; ++i) {
    const auto b = rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 2);
    at_er.add(Vector::Constant(1, rvrs::t_gradient(b, er_a)));
    at_zr.add(Vector::Constant(1, rvrs::t_gradient(b, zr)));
  }
  EXPECT_LT(std::abs(at_er.mean()[0]), 4.0 * at_er.std_err()[0]);
  EXPECT_GT(at_zr.mean()[0], 4.0 * at_zr.std_err()[0]);
}

TEST(Estimators, PermutationInvariant) {
  Mismatch p;
  const AcceptanceConfig cfg(0.2, 1e-4);
  rvrs::Rng rng(20);
  const auto b = rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 4);
  AcceptedBatch r;
  r.reserve(4);
  for (Eigen::Index s = 3; s >= 0; --s) {
    rvrs::Acceptance acc = rvrs::accept_prob(p.target, p.theta, p.q, cfg, b.z[s]);
    r.push({b.z[s], b.eps[s]}, b.log_p[s], b.log_q[s], acc, b.proposals_used[s]);
  }
  r.prefix_a.assign(b.prefix_a.rbegin(), b.prefix_a.rend());
  r.prefix_da_dT.assign(b.prefix_da_dT.rbegin(), b.prefix_da_dT.rend());
  EXPECT_TRUE(rvrs::rvrs_phi_gradient(p.target, p.theta, p.q, cfg, b)
                  .isApprox(rvrs::rvrs_phi_gradient(p.target, p.theta, p.q, cfg, r), 1e-13));
  EXPECT_TRUE(rvrs::vrs_phi_gradient(p.q, cfg, b).isApprox(rvrs::vrs_phi_gradient(p.q, cfg, r), 1e-13));
  EXPECT_TRUE(rvrs::theta_gradient_full(p.target, p.theta, cfg, b)
                  .isApprox(rvrs::theta_gradient_full(p.target, p.theta, cfg, r), 1e-13));
  EXPECT_NEAR(rvrs::t_gradient(b, 0.3), rvrs::t_gradient(r, 0.3), 1e-15);
  EXPECT_NEAR(rvrs::t_gradient_proposals(b, 0.3), rvrs::t_gradient_proposals(r, 0.3), 1e-15);
}

TEST(Estimators, BatchTooSmall) {
  Mismatch p;
  const AcceptanceConfig cfg(0.0, 0.0);
  rvrs::Rng rng(21);
  const auto b = rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 1);
  EXPECT_THROW(rvrs::rvrs_phi_gradient(p.target, p.theta, p.q, cfg, b), rvrs::BatchTooSmallError);
  EXPECT_THROW(rvrs::rvrs_phi_gradient_eps0(p.target, p.theta, p.q, b), rvrs::BatchTooSmallError);
  EXPECT_THROW(rvrs::vrs_phi_gradient(p.q, cfg, b), rvrs::BatchTooSmallError);
  EXPECT_THROW(rvrs::theta_gradient_full(p.target, p.theta, cfg, b), rvrs::BatchTooSmallError);
  EXPECT_THROW(rvrs::t_gradient_proposals(b, 0.3), rvrs::BatchTooSmallError);
}
