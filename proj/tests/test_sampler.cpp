#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>

#include "rvrs/oracle.hpp"
#include "rvrs/sampler.hpp"
#include "test_support.hpp"

using rvrs::AcceptanceConfig;
using rvrs::MeanFieldNormal;
using rvrs::Vector;
using testsupport::vec;

namespace {

// 1-D mismatch problem: target 0.2 + log N(z | 1, 0.6^2), proposal N(0, 1).
struct Mismatch {
  rvrs::AnalyticGaussianTarget target = rvrs::AnalyticGaussianTarget::diagonal(0.2, vec({1.0}), vec({0.6}));
  MeanFieldNormal q = MeanFieldNormal::standard(1);
  Vector theta = target.default_theta();
  rvrs::QuadratureGrid grid = rvrs::QuadratureGrid::around(q);
};

// log_Zp = -1 and q equal to the posterior: a is the constant sigmoid(-1).
struct ConstantAcceptance {
  rvrs::AnalyticGaussianTarget target = rvrs::AnalyticGaussianTarget::standard(1, -1.0);
  MeanFieldNormal q = MeanFieldNormal::standard(1);
  Vector theta = target.default_theta();
};

const double kSigmoidMinus1 = 1.0 / (1.0 + std::exp(1.0));

}  // namespace

TEST(AcceptProb, Examples) {
  const auto a0 = rvrs::acceptance(-1.3, -1.3, AcceptanceConfig(0.0, 0.0));
  EXPECT_DOUBLE_EQ(a0.a, 0.5);
  EXPECT_DOUBLE_EQ(rvrs::acceptance(0.0, 0.0, AcceptanceConfig(40.0, 0.0)).a, 1.0);
  const auto floor = rvrs::acceptance(-1e4, 0.0, AcceptanceConfig(0.0, 1e-4));
  EXPECT_DOUBLE_EQ(floor.a, 1e-4);
  EXPECT_NEAR(floor.log_a, std::log(1e-4), 1e-12);
}

TEST(AcceptProb, StableAtExtremes) {
  for (const double u : {-1e3, -50.0, -1.0, 0.0, 1.0, 50.0, 1e3}) {
    for (const double eps : {0.0, 1e-4, 0.3}) {
      const auto acc = rvrs::acceptance(u, 0.0, AcceptanceConfig(0.0, eps));
      EXPECT_TRUE(std::isfinite(acc.log_a));
      EXPECT_GE(acc.a, eps);
      EXPECT_LE(acc.a, 1.0);
      EXPECT_NEAR(acc.a, eps + (1.0 - eps) * acc.a_raw, 1e-15);
      if (acc.a > 1e-300) {
        EXPECT_NEAR(acc.log_a, std::log(acc.a), 1e-12 * std::max(1.0, std::abs(acc.log_a)));
      }
    }
  }
  EXPECT_NEAR(rvrs::acceptance(-1e3, 0.0, AcceptanceConfig(0.0, 0.0)).log_a, -1e3, 1e-9);
}

TEST(AcceptProb, ConfigValidation) {
  EXPECT_THROW(AcceptanceConfig(0.0, 1.0), rvrs::Error);
  EXPECT_THROW(AcceptanceConfig(0.0, -0.1), rvrs::Error);
  EXPECT_THROW(AcceptanceConfig(INFINITY, 0.0), rvrs::Error);
  EXPECT_DOUBLE_EQ(AcceptanceConfig(0.0, 0.2).zeta, 0.25);
}

TEST(RejectionSample, AlwaysAcceptWhenThresholdHuge) {
  Mismatch p;
  rvrs::Rng rng(1);
  const auto batch = rvrs::rejection_sample(p.target, p.theta, p.q, AcceptanceConfig(40.0, 0.0), rng, 50);
  EXPECT_EQ(batch.size(), 50);
  EXPECT_EQ(batch.total_proposals, 50);
  for (auto used : batch.proposals_used) EXPECT_EQ(used, 1);
}

TEST(RejectionSample, CachedValuesConsistent) {
  Mismatch p;
  rvrs::Rng rng(2);
  const AcceptanceConfig cfg(0.5, 1e-3);
  const auto batch = rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 20);
  long long used = 0;
  for (Eigen::Index s = 0; s < batch.size(); ++s) {
    const auto acc = rvrs::accept_prob(p.target, p.theta, p.q, cfg, batch.z[s]);
    EXPECT_DOUBLE_EQ(batch.a[s], acc.a);
    EXPECT_DOUBLE_EQ(batch.log_q[s], p.q.log_density(batch.z[s]));
    EXPECT_NEAR(batch.A[s], batch.log_p[s] - batch.log_q[s] - std::log(batch.a[s]), 1e-12);
    EXPECT_EQ(batch.z[s], p.q.transform(batch.eps[s]));
    EXPECT_GE(batch.proposals_used[s], 1);
    used += batch.proposals_used[s];
  }
  EXPECT_EQ(used, batch.total_proposals);
  EXPECT_EQ(batch.prefix_a.size(), 20u);
}

TEST(RejectionSample, BudgetExhausted) {
  Mismatch p;
  rvrs::Rng rng(3);
  try {
    rvrs::rejection_sample(p.target, p.theta, p.q, AcceptanceConfig(-60.0, 0.0), rng, 2, 1000);
    FAIL() << "expected BudgetExhaustedError";
  } catch (const rvrs::BudgetExhaustedError& e) {
    EXPECT_EQ(e.proposals_drawn(), 1000);
  }
  EXPECT_THROW(rvrs::rejection_sample(p.target, p.theta, p.q, AcceptanceConfig(0.0, 0.0), rng, 0),
               rvrs::BatchTooSmallError);
}

TEST(RejectionSample, MeanDrawCountForConstantAcceptance) {
  ConstantAcceptance p;
  rvrs::Rng rng(4);
  const auto batch = rvrs::rejection_sample(p.target, p.theta, p.q, AcceptanceConfig(0.0, 0.0), rng, 10000);
  const double mean = static_cast<double>(batch.total_proposals) / 10000.0;
  EXPECT_NEAR(mean, 1.0 / kSigmoidMinus1, 0.02 / kSigmoidMinus1);
  EXPECT_NEAR(1.0 / kSigmoidMinus1, 3.7182818284590455, 1e-12);
}

TEST(RejectionSample, DrawCountsAreGeometric) {
  Mismatch p;
  const AcceptanceConfig cfg(0.0, 0.0);
  const double zr = rvrs::quad_Zr(p.target, p.theta, p.q, cfg, p.grid);
  rvrs::Rng rng(5);
  const auto batch = rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 100000);
  double sum = 0.0, sum2 = 0.0;
  for (auto k : batch.proposals_used) {
    sum += static_cast<double>(k);
    sum2 += static_cast<double>(k) * static_cast<double>(k);
  }
  const double mean = sum / 1e5;
  const double var = sum2 / 1e5 - mean * mean;
  EXPECT_NEAR(mean, 1.0 / zr, 0.02 / zr);
  EXPECT_NEAR(var, (1.0 - zr) / (zr * zr), 0.05 * (1.0 - zr) / (zr * zr));
}

TEST(RejectionSample, HistogramMatchesQuadratureDensity) {
  Mismatch p;
  const AcceptanceConfig cfg(0.0, 0.0);
  const double zr = rvrs::quad_Zr(p.target, p.theta, p.q, cfg, p.grid);
  rvrs::Rng rng(6);
  const int n = 100000;
  const auto batch = rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, n);
  // 40 bins on [-2.5, 3], open-ended at both ends.
  const int bins = 40;
  const double lo = -2.5, hi = 3.0, width = (hi - lo) / bins;
  std::vector<double> observed(bins, 0.0);
  for (const auto& z : batch.z) {
    const int b = std::clamp(static_cast<int>(std::floor((z[0] - lo) / width)), 0, bins - 1);
    observed[b] += 1.0;
  }
  const auto r = [&](double z) {
    return std::exp(p.q.log_density(vec({z}))) * rvrs::accept_prob(p.target, p.theta, p.q, cfg, vec({z})).a / zr;
  };
  const auto mass = [&](double a, double b) {
    return rvrs::QuadratureGrid::interval(a, b, 401).integrate([&](const Vector& z) { return r(z[0]); });
  };
  // Merge neighbouring bins until each expects at least 5 counts.
  std::vector<double> exp_merged, obs_merged;
  double e_acc = 0.0, o_acc = 0.0;
  for (int b = 0; b < bins; ++b) {
    const double a = b == 0 ? -12.0 : lo + b * width;
    const double c = b == bins - 1 ? 12.0 : lo + (b + 1) * width;
    e_acc += n * mass(a, c);
    o_acc += observed[b];
    if (e_acc >= 5.0) {
      exp_merged.push_back(e_acc);
      obs_merged.push_back(o_acc);
      e_acc = o_acc = 0.0;
    }
  }
  exp_merged.back() += e_acc;
  obs_merged.back() += o_acc;
  ASSERT_GT(exp_merged.size(), 20u);
  double stat = 0.0;
  for (std::size_t b = 0; b < exp_merged.size(); ++b) {
    stat += (obs_merged[b] - exp_merged[b]) * (obs_merged[b] - exp_merged[b]) / exp_merged[b];
  }
  const boost::math::chi_squared dist(static_cast<double>(exp_merged.size() - 1));
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, stat)), 0.01) << "chi2 = " << stat;
}

TEST(RejectionSample, HugeThresholdReproducesProposal) {
  Mismatch p;
  rvrs::Rng rng(7), rng2(8);
  const auto batch = rvrs::rejection_sample(p.target, p.theta, p.q, AcceptanceConfig(40.0, 0.0), rng, 20000);
  std::vector<double> accepted, fresh;
  for (const auto& z : batch.z) accepted.push_back(z[0]);
  for (int i = 0; i < 20000; ++i) fresh.push_back(p.q.sample(rng2).z[0]);
  EXPECT_GT(testsupport::ks_two_sample_p(accepted, fresh), 0.01);
}

TEST(EstimateZr, ConstantAcceptanceIsExact) {
  ConstantAcceptance p;
  rvrs::Rng rng(9);
  const auto est = rvrs::estimate_Zr(p.target, p.theta, p.q, AcceptanceConfig(0.0, 0.0), rng, 1000);
  EXPECT_NEAR(est.mean, kSigmoidMinus1, 1e-14);
  EXPECT_LT(est.std_err, 1e-12);
  rvrs::Rng rng2(9);
  EXPECT_NEAR(rvrs::estimate_log_Zr(p.target, p.theta, p.q, AcceptanceConfig(0.0, 0.0), rng2, 1000),
              std::log(kSigmoidMinus1), 1e-13);
}

TEST(EstimateZr, FloorBoundsAcceptance) {
  Mismatch p;
  rvrs::Rng rng(10);
  const AcceptanceConfig cfg(-200.0, 0.05);
  const auto est = rvrs::estimate_Zr(p.target, p.theta, p.q, cfg, rng, 1000);
  EXPECT_GE(est.mean, 0.05);
  EXPECT_GE(rvrs::estimate_log_Zr(p.target, p.theta, p.q, cfg, rng, 1000), std::log(0.05));
}

TEST(EstimateZr, MatchesQuadrature) {
  Mismatch p;
  const AcceptanceConfig cfg(0.0, 0.0);
  const double truth = rvrs::quad_Zr(p.target, p.theta, p.q, cfg, p.grid);
  rvrs::Rng rng(11);
  const auto est = rvrs::estimate_Zr(p.target, p.theta, p.q, cfg, rng, 100000);
  EXPECT_LT(std::abs(est.mean - truth), 3.0 * est.std_err);
  rvrs::Rng rng2(12);
  EXPECT_NEAR(rvrs::estimate_log_Zr(p.target, p.theta, p.q, cfg, rng2), std::log(truth), 1e-3 * 5);
}

TEST(EstimateZr, RejectsTinyM) {
  Mismatch p;
  rvrs::Rng rng(13);
  EXPECT_THROW(rvrs::estimate_Zr(p.target, p.theta, p.q, AcceptanceConfig(0.0, 0.0), rng, 1), rvrs::Error);
}

TEST(ElboEstimate, ExactMatchLimit) {
  const auto target = rvrs::AnalyticGaussianTarget::standard(1, 0.0);
  const auto q = MeanFieldNormal::standard(1);
  rvrs::Rng rng(14);
  const AcceptanceConfig cfg(40.0, 0.0);
  const auto batch = rvrs::rejection_sample(target, target.default_theta(), q, cfg, rng, 100);
  const double log_zr = rvrs::estimate_log_Zr(target, target.default_theta(), q, cfg, rng, 1000);
  EXPECT_NEAR(rvrs::elbo_estimate(batch, log_zr), 0.0, 1e-6);
}

TEST(ElboEstimate, MatchesQuadrature) {
  Mismatch p;
  const AcceptanceConfig cfg(0.0, 0.0);
  const double truth = rvrs::quad_elbo(p.target, p.theta, p.q, cfg, p.grid);
  const double log_zr = std::log(rvrs::quad_Zr(p.target, p.theta, p.q, cfg, p.grid));
  rvrs::Rng rng(15);
  const auto batch = rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 10000);
  const double se = std::sqrt((batch.A.array() - batch.A.mean()).square().sum() / 9999.0 / 10000.0);
  EXPECT_LT(std::abs(rvrs::elbo_estimate(batch, log_zr) - truth), 3.0 * se);
}

TEST(ElboEstimate, ProposalWeightedFormMatchesQuadrature) {
  Mismatch p;
  for (const double T : {-2.0, 0.0, 2.0}) {
    const AcceptanceConfig cfg(T, 1e-4);
    const double truth = rvrs::quad_elbo(p.target, p.theta, p.q, cfg, p.grid);
    rvrs::Rng rng(16);
    const auto est = rvrs::estimate_elbo(p.target, p.theta, p.q, cfg, rng, 200000);
    EXPECT_NEAR(est.elbo, truth, 5e-3) << "T = " << T;
  }
}

TEST(ElboEstimate, EmptyBatch) {
  EXPECT_THROW(rvrs::elbo_estimate(rvrs::AcceptedBatch{}, 0.0), rvrs::BatchTooSmallError);
}

TEST(SamplerInvariants, ElboMonotoneInThreshold) {
  Mismatch p;
  double prev = -INFINITY;
  for (double T = 6.0; T >= -8.0; T -= 0.5) {
    const double e = rvrs::quad_elbo(p.target, p.theta, p.q, AcceptanceConfig(T, 0.0), p.grid);
    EXPECT_GE(e, prev - 1e-9) << "T = " << T;
    prev = e;
  }
}

TEST(SamplerInvariants, AcceptanceAlwaysAboveFloor) {
  Mismatch p;
  rvrs::Rng rng(17);
  const AcceptanceConfig cfg(-30.0, 0.01);
  const auto batch = rvrs::rejection_sample(p.target, p.theta, p.q, cfg, rng, 200);
  EXPECT_GE(batch.a.minCoeff(), 0.01);
  EXPECT_LE(batch.a.maxCoeff(), 1.0);
}
