// Copyright 2026 The rfgps Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rfgps.hpp"

namespace {

using rfgps::Gaussian;
using rfgps::LinearGaussianDynamics;
using rfgps::LinearGaussianPolicy;
using rfgps::Mat;
using rfgps::Rng;
using rfgps::Vec;

LinearGaussianDynamics zero_noise(const oracle::RandomLinearSystem& s) {
  const auto dx = s.fx.front().rows();
  return oracle::to_dynamics(s, Mat::Zero(dx, dx));
}

TEST(Marginals, DeterministicChainFollowsRecursion) {
  Rng rng(1);
  const int dx = 3, du = 2, horizon = 6;
  const auto sys = oracle::random_system(dx, du, horizon, rng);
  const auto dyn = zero_noise(sys);
  LinearGaussianPolicy pol = LinearGaussianPolicy::constant(
      horizon, Mat::Zero(du, dx), Vec::Zero(du), Mat::Zero(du, du));
  for (auto& k : pol.k) k = oracle::random_vector(du, rng);
  const Gaussian init{oracle::random_vector(dx, rng), Mat::Zero(dx, dx)};
  const auto marg = rfgps::compute_marginals(init, dyn, pol);
  Vec x = init.mean;
  for (int t = 0; t < horizon; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    EXPECT_NEAR((marg.state_mean(t) - x).norm(), 0.0, 1e-12);
    EXPECT_NEAR((marg.mean[ts].tail(du) - pol.k[ts]).norm(), 0.0, 1e-12);
    EXPECT_EQ(marg.cov[ts].norm(), 0.0);
    x = sys.fx[ts] * x + sys.fu[ts] * pol.k[ts] + sys.fc[ts];
  }
  EXPECT_NEAR((marg.final_state.mean - x).norm(), 0.0, 1e-12);
  EXPECT_EQ(marg.final_state.cov.norm(), 0.0);
}

TEST(Marginals, IdentityFeedbackJointCovariance) {
  const int d = 2;
  LinearGaussianDynamics dyn;
  dyn.fx = {Mat::Identity(d, d)};
  dyn.fu = {Mat::Zero(d, d)};
  dyn.fc = {Vec::Zero(d)};
  dyn.cov = {Mat::Zero(d, d)};
  const auto pol = LinearGaussianPolicy::constant(1, Mat::Identity(d, d),
                                                  Vec::Zero(d), Mat::Zero(d, d));
  const auto marg =
      rfgps::compute_marginals({Vec::Zero(d), Mat::Identity(d, d)}, dyn, pol);
  Mat expected(2 * d, 2 * d);
  expected << Mat::Identity(d, d), Mat::Identity(d, d), Mat::Identity(d, d),
      Mat::Identity(d, d);
  EXPECT_NEAR((marg.cov[0] - expected).norm(), 0.0, 1e-15);
}

TEST(Marginals, MatchMonteCarlo) {
  Rng rng(3);
  const int dx = 2, du = 1, horizon = 4;
  const auto ch = oracle::random_chain(dx, du, horizon, rng);
  const auto marg = rfgps::compute_marginals(ch.init, ch.dyn, ch.pol);
  const int n = 100000;
  std::vector<Mat> z(static_cast<std::size_t>(horizon), Mat(n, dx + du));
  Mat final_x(n, dx);
  const oracle::ChainSampler sampler(ch.init, ch.dyn, ch.pol);
  for (int i = 0; i < n; ++i) {
    final_x.row(i) = sampler.run(rng, [&](int t, const Vec& x, const Vec& u) {
      z[static_cast<std::size_t>(t)].row(i) << x.transpose(), u.transpose();
    }).transpose();
  }
  auto check = [&](const Mat& data, const Vec& mean, const Mat& cov) {
    const Vec m = data.colwise().mean().transpose();
    const Mat c = data.rowwise() - m.transpose();
    for (int a = 0; a < data.cols(); ++a) {
      const double se = std::sqrt(cov(a, a) / n);
      EXPECT_LT(std::abs(m[a] - mean[a]), 3.0 * se);
      for (int b = 0; b <= a; ++b) {
        // Standard error of the sample covariance from the per-sample
        // products.
        const Eigen::ArrayXd prod = c.col(a).array() * c.col(b).array();
        const double est = prod.mean();
        const double se_c =
            std::sqrt((prod - est).square().sum() / (n - 1) / n);
        EXPECT_LT(std::abs(est - cov(a, b)), 3.0 * se_c + 1e-12);
      }
    }
  };
  for (int t = 0; t < horizon; ++t) {
    check(z[static_cast<std::size_t>(t)], marg.mean[static_cast<std::size_t>(t)],
          marg.cov[static_cast<std::size_t>(t)]);
  }
  check(final_x, marg.final_state.mean, marg.final_state.cov);
}

TEST(Marginals, CovariancesStaySymmetricPsd) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ch = oracle::random_chain(3, 2, 15, rng);
    const auto marg = rfgps::compute_marginals(ch.init, ch.dyn, ch.pol);
    for (const Mat& c : marg.cov) {
      EXPECT_EQ((c - c.transpose()).norm(), 0.0);
      EXPECT_GE(rfgps::min_eigenvalue(c), -1e-9);
    }
  }
}

TEST(Marginals, RejectsMismatchedHorizons) {
  Rng rng(5);
  auto ch = oracle::random_chain(2, 1, 4, rng);
  ch.pol.K.pop_back();
  ch.pol.k.pop_back();
  ch.pol.cov.pop_back();
  EXPECT_THROW(rfgps::compute_marginals(ch.init, ch.dyn, ch.pol),
               rfgps::DimensionError);
}

// Single-step cost 1/2 z'Hz + g'z + c around z_hat = 0.
rfgps::QuadCostTerm single_step_cost(const Mat& hess, const Vec& grad,
                                     double value, int dx) {
  rfgps::QuadCostStep s;
  s.hess = hess;
  s.grad = grad;
  s.value = value;
  s.x_hat = Vec::Zero(dx);
  s.u_hat = Vec::Zero(grad.size() - dx);
  return {{s}};
}

TEST(ExpectedCost, ZeroCovarianceEvaluatesAtMean) {
  Rng rng(6);
  const auto cost = oracle::random_cost(2, 1, 3, rng);
  rfgps::GaussianMarginals marg;
  marg.dx = 2;
  marg.du = 1;
  double direct = 0.0;
  for (int t = 0; t < 3; ++t) {
    const Vec z = oracle::random_vector(3, rng);
    marg.mean.push_back(z);
    marg.cov.push_back(Mat::Zero(3, 3));
    direct += cost.steps[static_cast<std::size_t>(t)].evaluate(z.head(2), z.tail(1));
  }
  EXPECT_NEAR(rfgps::expected_quadratic_cost(marg, cost), direct, 1e-12);
}

TEST(ExpectedCost, IdentityFormUnderStandardNormal) {
  const int d = 4;
  // E[z'z] with z ~ N(0, I): the cost 1/2 z'(2I)z.
  const auto cost = single_step_cost(2.0 * Mat::Identity(d, d), Vec::Zero(d), 0.0, 2);
  rfgps::GaussianMarginals marg;
  marg.dx = 2;
  marg.du = 2;
  marg.mean = {Vec::Zero(d)};
  marg.cov = {Mat::Identity(d, d)};
  EXPECT_NEAR(rfgps::expected_quadratic_cost(marg, cost), d, 1e-14);
}

TEST(ExpectedCost, MatchesMonteCarlo) {
  const auto r = oracle::mc_expected_cost(11, 1000000);
  EXPECT_TRUE(r.within(3.0)) << r.closed << " vs " << r.mc << " +- " << r.se;
}

TEST(ExpectedCost, IsLinearInTheCostTerm) {
  Rng rng(8);
  const auto ch = oracle::random_chain(2, 2, 5, rng);
  const auto marg = rfgps::compute_marginals(ch.init, ch.dyn, ch.pol);
  const auto cost = oracle::random_cost(2, 2, 5, rng);
  auto doubled = cost;
  for (auto& s : doubled.steps) {
    s.hess *= 2.0;
    s.grad *= 2.0;
    s.value *= 2.0;
  }
  const double a = rfgps::expected_quadratic_cost(marg, cost);
  const double b = rfgps::expected_quadratic_cost(marg, doubled);
  EXPECT_NEAR(b, 2.0 * a, 1e-12 * std::abs(a));
}

TEST(PolicyKl, IdenticalPoliciesGiveZero) {
  Rng rng(9);
  const auto ch = oracle::random_chain(3, 2, 6, rng);
  const auto marg = rfgps::compute_marginals(ch.init, ch.dyn, ch.pol);
  const auto kl = rfgps::policy_kl(ch.pol, ch.pol, marg);
  EXPECT_NEAR(kl.total, 0.0, 1e-12);
  for (int t = 0; t < 6; ++t) EXPECT_NEAR(kl.per_step[t], 0.0, 1e-12);
}

TEST(PolicyKl, OffsetShiftWithUnitCovariance) {
  Rng rng(10);
  const int dx = 3, du = 2, horizon = 5;
  auto ch = oracle::random_chain(dx, du, horizon, rng);
  for (auto& c : ch.pol.cov) c = Mat::Identity(du, du);
  auto pbar = ch.pol;
  const Vec delta = oracle::random_vector(du, rng);
  for (auto& k : pbar.k) k += delta;
  const auto marg = rfgps::compute_marginals(ch.init, ch.dyn, ch.pol);
  const auto kl = rfgps::policy_kl(ch.pol, pbar, marg);
  for (int t = 0; t < horizon; ++t) {
    EXPECT_NEAR(kl.per_step[t], 0.5 * delta.squaredNorm(), 1e-12);
  }
  EXPECT_NEAR(kl.total, horizon * 0.5 * delta.squaredNorm(), 1e-11);
}

TEST(PolicyKl, MatchesSampledEstimate) {
  const auto r = oracle::mc_policy_kl(12, 100000);
  EXPECT_TRUE(r.within(3.0)) << r.closed << " vs " << r.mc << " +- " << r.se;
}

TEST(PolicyKl, AlwaysNonNegative) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ch = oracle::random_chain(2, 2, 4, rng);
    const auto pbar = oracle::random_policy(2, 2, 4, rng);
    const auto kl = rfgps::policy_kl(
        ch.pol, pbar, rfgps::compute_marginals(ch.init, ch.dyn, ch.pol));
    EXPECT_GE(kl.per_step.minCoeff(), 0.0);
    EXPECT_GT(kl.total, 0.0);
  }
}

TEST(PolicyKl, RejectsSingularReferenceCovariance) {
  Rng rng(14);
  const auto ch = oracle::random_chain(2, 2, 3, rng);
  auto pbar = ch.pol;
  pbar.cov[1] = Mat::Zero(2, 2);
  EXPECT_THROW(rfgps::policy_kl(ch.pol, pbar,
                                rfgps::compute_marginals(ch.init, ch.dyn, ch.pol)),
               rfgps::NumericalError);
}

rfgps::ClusterModel unit_model(int dx, int du, int horizon) {
  rfgps::ClusterModel m;
  m.init = {Vec::Zero(dx), Mat::Identity(dx, dx)};
  m.dynamics.fx.assign(static_cast<std::size_t>(horizon), Mat::Identity(dx, dx));
  m.dynamics.fu.assign(static_cast<std::size_t>(horizon), Mat::Zero(dx, du));
  m.dynamics.fc.assign(static_cast<std::size_t>(horizon), Vec::Zero(dx));
  m.dynamics.cov.assign(static_cast<std::size_t>(horizon), Mat::Identity(dx, dx));
  m.policy_lin = LinearGaussianPolicy::constant(horizon, Mat::Zero(du, dx),
                                                Vec::Zero(du), Mat::Identity(du, du));
  return m;
}

rfgps::Trajectory constant_trajectory(const Vec& x, int du, int horizon) {
  rfgps::Trajectory tau;
  tau.states = x.transpose().replicate(horizon + 1, 1);
  tau.actions = Mat::Zero(horizon, du);
  tau.costs = Vec::Zero(horizon);
  return tau;
}

TEST(TrajLogDensity, ZeroResidualsGiveGaussianNormalizer) {
  const int dx = 3, du = 2, horizon = 4;
  const auto m = unit_model(dx, du, horizon);
  const auto tau = constant_trajectory(Vec::Zero(dx), du, horizon);
  const double d_total = dx + horizon * (du + dx);
  EXPECT_NEAR(rfgps::traj_log_density(m, tau, 0.0),
              -0.5 * d_total * std::log(2.0 * M_PI), 1e-12);
}

TEST(TrajLogDensity, SingleResidualShiftsByHalfSquaredNorm) {
  const int dx = 2, du = 2, horizon = 3;
  const auto m = unit_model(dx, du, horizon);
  auto tau = constant_trajectory(Vec::Zero(dx), du, horizon);
  const double base = rfgps::traj_log_density(m, tau, 0.0);
  Vec r(du);
  r << 0.3, -1.2;
  tau.actions.row(1) = r.transpose();  // residual in one policy factor only
  EXPECT_NEAR(rfgps::traj_log_density(m, tau, 0.0), base - 0.5 * r.squaredNorm(),
              1e-12);
}

rfgps::ClusterModel random_model(int dx, int du, int horizon, Rng& rng) {
  const auto ch = oracle::random_chain(dx, du, horizon, rng);
  rfgps::ClusterModel m;
  m.init = ch.init;
  m.dynamics = ch.dyn;
  m.policy_lin = ch.pol;
  return m;
}

TEST(TrajLogDensity, EqualsDenseJointGaussian) {
  Rng rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_model(2, 2, 4, rng);
    const auto joint = oracle::stacked_trajectory_gaussian(m);
    const oracle::ChainSampler sampler(m.init, m.dynamics, m.policy_lin);
    rfgps::Trajectory tau;
    tau.states.resize(5, 2);
    tau.actions.resize(4, 2);
    tau.costs = Vec::Zero(4);
    const Vec last = sampler.run(rng, [&](int t, const Vec& x, const Vec& u) {
      tau.states.row(t) = x.transpose();
      tau.actions.row(t) = u.transpose();
    });
    tau.states.row(4) = last.transpose();
    const double dense =
        oracle::dense_logpdf(oracle::stack_trajectory(tau), joint.mean, joint.cov);
    EXPECT_NEAR(rfgps::traj_log_density(m, tau, 0.0), dense, 1e-8);
  }
}

TEST(TrajLogDensity, IsOrderFreeSumOfFactors) {
  Rng rng(16);
  const auto m = random_model(2, 1, 5, rng);
  const oracle::ChainSampler sampler(m.init, m.dynamics, m.policy_lin);
  rfgps::Trajectory tau;
  tau.states.resize(6, 2);
  tau.actions.resize(5, 1);
  tau.costs = Vec::Zero(5);
  tau.states.row(5) = sampler.run(rng, [&](int t, const Vec& x, const Vec& u) {
    tau.states.row(t) = x.transpose();
    tau.actions.row(t) = u.transpose();
  }).transpose();
  const double floor = 1e-6;
  auto reg = [&](const Mat& c) { return Mat(c + floor * Mat::Identity(c.rows(), c.cols())); };
  // Accumulate factors from the last step backwards.
  double backwards = 0.0;
  for (int t = 4; t >= 0; --t) {
    const auto ts = static_cast<std::size_t>(t);
    const Vec x = tau.states.row(t).transpose();
    const Vec u = tau.actions.row(t).transpose();
    const Vec xn = tau.states.row(t + 1).transpose();
    backwards += oracle::dense_logpdf(
        xn, m.dynamics.fx[ts] * x + m.dynamics.fu[ts] * u + m.dynamics.fc[ts],
        reg(m.dynamics.cov[ts]));
    backwards += oracle::dense_logpdf(u, m.policy_lin.mean_action(t, x),
                                      reg(m.policy_lin.cov[ts]));
  }
  backwards += oracle::dense_logpdf(tau.states.row(0).transpose(), m.init.mean,
                                    reg(m.init.cov));
  EXPECT_NEAR(rfgps::traj_log_density(m, tau, floor), backwards, 1e-9);
}

TEST(TrajLogDensity, FloorKeepsSingularCovariancesFinite) {
  auto m = unit_model(2, 1, 3);
  for (auto& c : m.dynamics.cov) c.setZero();
  m.init.cov.setZero();
  const auto tau = constant_trajectory(Vec::Zero(2), 1, 3);
  EXPECT_TRUE(std::isfinite(rfgps::traj_log_density(m, tau)));
}

}  // namespace
