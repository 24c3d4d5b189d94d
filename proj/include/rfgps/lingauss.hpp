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

// Time-varying linear-Gaussian trajectory models: dynamics, controllers,
// forward marginals, expected quadratic cost, expected KL between
// controllers and trajectory log-densities.

#pragma once

#include <utility>
#include <vector>

#include "rfgps/common.hpp"

namespace rfgps {

/// Second-order expansion of the cost at one time step:
///   c(z) ~= value + grad'(z - z_hat) + 1/2 (z - z_hat)' hess (z - z_hat)
/// with z = (x, u).
struct QuadCostStep {
  Mat hess;  // (dx+du)^2
  Vec grad;  // dx+du
  double value = 0.0;
  Vec x_hat;
  Vec u_hat;

  [[nodiscard]] int dx() const { return static_cast<int>(x_hat.size()); }
  [[nodiscard]] int du() const { return static_cast<int>(u_hat.size()); }

  [[nodiscard]] Mat cxx() const { return hess.topLeftCorner(dx(), dx()); }
  [[nodiscard]] Mat cuu() const { return hess.bottomRightCorner(du(), du()); }
  [[nodiscard]] Mat cux() const { return hess.bottomLeftCorner(du(), dx()); }
  [[nodiscard]] Vec cx() const { return grad.head(dx()); }
  [[nodiscard]] Vec cu() const { return grad.tail(du()); }

  [[nodiscard]] Vec z_hat() const {
    Vec z(dx() + du());
    z << x_hat, u_hat;
    return z;
  }

  [[nodiscard]] double evaluate(const Vec& x, const Vec& u) const {
    Vec d(dx() + du());
    d << x - x_hat, u - u_hat;
    return value + grad.dot(d) + 0.5 * d.dot(hess * d);
  }

  /// The same quadratic written in absolute coordinates:
  ///   1/2 z' hess z + linear' z + constant.
  [[nodiscard]] Vec linear() const { return grad - hess * z_hat(); }
  [[nodiscard]] double constant() const {
    const Vec z = z_hat();
    return value - grad.dot(z) + 0.5 * z.dot(hess * z);
  }
};

struct QuadCostTerm {
  std::vector<QuadCostStep> steps;

  [[nodiscard]] int horizon() const { return static_cast<int>(steps.size()); }
};

/// x_{t+1} ~ N(fx x_t + fu u_t + fc, cov) for t = 0..T-1.
struct LinearGaussianDynamics {
  std::vector<Mat> fx;
  std::vector<Mat> fu;
  std::vector<Vec> fc;
  std::vector<Mat> cov;

  [[nodiscard]] int horizon() const { return static_cast<int>(fx.size()); }
  [[nodiscard]] int dx() const {
    return fx.empty() ? 0 : static_cast<int>(fx.front().rows());
  }
  [[nodiscard]] int du() const {
    return fu.empty() ? 0 : static_cast<int>(fu.front().cols());
  }
};

/// u_t ~ N(K x_t + k, cov). Used both for local controllers and for
/// linearizations of the global policy.
struct LinearGaussianPolicy {
  std::vector<Mat> K;
  std::vector<Vec> k;
  std::vector<Mat> cov;

  [[nodiscard]] int horizon() const { return static_cast<int>(K.size()); }
  [[nodiscard]] int du() const {
    return K.empty() ? 0 : static_cast<int>(K.front().rows());
  }
  [[nodiscard]] int dx() const {
    return K.empty() ? 0 : static_cast<int>(K.front().cols());
  }

  [[nodiscard]] Vec mean_action(int t, const Vec& x) const {
    return K[static_cast<std::size_t>(t)] * x + k[static_cast<std::size_t>(t)];
  }

  static LinearGaussianPolicy constant(int horizon, const Mat& gain,
                                       const Vec& offset, const Mat& cov) {
    LinearGaussianPolicy p;
    p.K.assign(static_cast<std::size_t>(horizon), gain);
    p.k.assign(static_cast<std::size_t>(horizon), offset);
    p.cov.assign(static_cast<std::size_t>(horizon), cov);
    return p;
  }
};

/// Per-step joint Gaussian over (x_t, u_t) plus the state after the last
/// step.
struct GaussianMarginals {
  std::vector<Vec> mean;  // dx+du
  std::vector<Mat> cov;
  Gaussian final_state;
  int dx = 0;
  int du = 0;

  [[nodiscard]] int horizon() const { return static_cast<int>(mean.size()); }
  [[nodiscard]] Vec state_mean(int t) const {
    return mean[static_cast<std::size_t>(t)].head(dx);
  }
  [[nodiscard]] Mat state_cov(int t) const {
    return cov[static_cast<std::size_t>(t)].topLeftCorner(dx, dx);
  }
};

/// Parameters of one Gaussian trajectory distribution: initial state,
/// dynamics, policy linearization and mixture mass.
struct ClusterModel {
  Gaussian init;
  LinearGaussianDynamics dynamics;
  LinearGaussianPolicy policy_lin;
  double mass = 1.0;
};

namespace detail {

inline void check_horizons(const LinearGaussianDynamics& dyn,
                           const LinearGaussianPolicy& pol) {
  if (dyn.horizon() != pol.horizon()) {
    throw DimensionError("dynamics and policy horizons differ");
  }
  if (dyn.horizon() > 0) {
    require_dim(pol.dx(), dyn.dx(), "policy state dimension");
    require_dim(pol.du(), dyn.du(), "policy action dimension");
  }
}

// Symmetrizes a propagated covariance; a large asymmetry means the
// recursion itself is broken.
inline Mat checked_symmetric(const Mat& m, std::string_view where) {
  constexpr double kAsymmetryTolerance = 1e-8;
  if (!m.allFinite()) {
    throw NumericalError(std::string(where) + ": non-finite covariance");
  }
  if (relative_asymmetry(m) > kAsymmetryTolerance) {
    throw NumericalError(std::string(where) + ": covariance lost symmetry");
  }
  return symmetrize(m);
}

}  // namespace detail

/// Exact forward propagation of means and covariances through
/// p(x_1) prod_t pi(u_t|x_t) p(x_{t+1}|x_t,u_t).
inline GaussianMarginals compute_marginals(const Gaussian& init,
                                           const LinearGaussianDynamics& dyn,
                                           const LinearGaussianPolicy& pol) {
  detail::check_horizons(dyn, pol);
  const int horizon = dyn.horizon();
  const int dx = static_cast<int>(init.dim());
  const int du = pol.du();
  if (horizon > 0) require_dim(dx, dyn.dx(), "initial state dimension");

  GaussianMarginals out;
  out.dx = dx;
  out.du = du;
  out.mean.reserve(static_cast<std::size_t>(horizon));
  out.cov.reserve(static_cast<std::size_t>(horizon));

  Vec mx = init.mean;
  Mat sx = detail::checked_symmetric(init.cov, "compute_marginals");
  for (int t = 0; t < horizon; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    const Mat& gain = pol.K[ts];
    Vec mz(dx + du);
    mz << mx, gain * mx + pol.k[ts];
    Mat sz(dx + du, dx + du);
    const Mat sxk = sx * gain.transpose();
    sz.topLeftCorner(dx, dx) = sx;
    sz.topRightCorner(dx, du) = sxk;
    sz.bottomLeftCorner(du, dx) = sxk.transpose();
    sz.bottomRightCorner(du, du) = gain * sxk + pol.cov[ts];
    sz = detail::checked_symmetric(sz, "compute_marginals");

    Mat f(dx, dx + du);
    f << dyn.fx[ts], dyn.fu[ts];
    mx = f * mz + dyn.fc[ts];
    sx = detail::checked_symmetric(f * sz * f.transpose() + dyn.cov[ts],
                                   "compute_marginals");
    out.mean.push_back(std::move(mz));
    out.cov.push_back(std::move(sz));
  }
  out.final_state = Gaussian{mx, sx};
  return out;
}

/// E[z'Az + b'z + c] for z ~ N(mean, cov).
inline double expected_quadratic_form(const Mat& a, const Vec& b, double c,
                                      const Vec& mean, const Mat& cov) {
  return (a * cov).trace() + mean.dot(a * mean) + b.dot(mean) + c;
}

/// Sum over steps of the expected expanded cost under the marginals.
inline double expected_quadratic_cost(const GaussianMarginals& marg,
                                      const QuadCostTerm& cost) {
  if (marg.horizon() != cost.horizon()) {
    throw DimensionError("expected_quadratic_cost: horizon mismatch");
  }
  double total = 0.0;
  for (int t = 0; t < marg.horizon(); ++t) {
    const auto ts = static_cast<std::size_t>(t);
    const QuadCostStep& q = cost.steps[ts];
    require_dim(q.hess.rows(), marg.mean[ts].size(), "cost dimension");
    const Vec d = marg.mean[ts] - q.z_hat();
    total += expected_quadratic_form(0.5 * q.hess, q.grad, q.value, d,
                                     marg.cov[ts]);
  }
  return total;
}

struct PolicyKl {
  double total = 0.0;
  Vec per_step;
};

/// E_{x_t}[KL(q(u|x_t) || pbar(u|x_t))] per step under the state marginals
/// in `marg`, summed over the horizon.
inline PolicyKl policy_kl(const LinearGaussianPolicy& q,
                          const LinearGaussianPolicy& pbar,
                          const GaussianMarginals& marg) {
  if (q.horizon() != pbar.horizon() || q.horizon() != marg.horizon()) {
    throw DimensionError("policy_kl: horizon mismatch");
  }
  const int horizon = q.horizon();
  PolicyKl out;
  out.per_step = Vec::Zero(horizon);
  for (int t = 0; t < horizon; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    const int du = static_cast<int>(q.k[ts].size());
    Eigen::LLT<Mat> llt_p(pbar.cov[ts]);
    if (llt_p.info() != Eigen::Success) {
      throw NumericalError("policy_kl: reference covariance not invertible");
    }
    const Mat prec_p = llt_p.solve(Mat::Identity(du, du));
    const double logdet_p =
        2.0 * llt_p.matrixLLT().diagonal().array().log().sum();
    const double logdet_q = log_det_spd(q.cov[ts]);

    const Mat dk = q.K[ts] - pbar.K[ts];
    const Vec mx = marg.state_mean(t);
    const Mat sx = marg.state_cov(t);
    const Vec dmu = dk * mx + (q.k[ts] - pbar.k[ts]);
    const double mean_term =
        dmu.dot(prec_p * dmu) + (dk.transpose() * prec_p * dk * sx).trace();
    const double kl = 0.5 * ((prec_p * q.cov[ts]).trace() - du + logdet_p -
                             logdet_q + mean_term);
    out.per_step[t] = std::max(kl, 0.0);
  }
  out.total = out.per_step.sum();
  return out;
}

/// Log-density of whole trajectories under one ClusterModel. Cholesky
/// factors are computed once so the same model can score many
/// trajectories.
class TrajectoryDensity {
 public:
  explicit TrajectoryDensity(const ClusterModel& model,
                             double floor = kDefaultCovFloor)
      : model_(&model) {
    const int horizon = model.dynamics.horizon();
    if (model.policy_lin.horizon() != horizon) {
      throw DimensionError("TrajectoryDensity: horizon mismatch");
    }
    init_ = factor(model.init.cov, floor);
    pol_.reserve(static_cast<std::size_t>(horizon));
    dyn_.reserve(static_cast<std::size_t>(horizon));
    for (int t = 0; t < horizon; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      pol_.push_back(factor(model.policy_lin.cov[ts], floor));
      dyn_.push_back(factor(model.dynamics.cov[ts], floor));
    }
  }

  [[nodiscard]] double log_density(const Trajectory& tau) const {
    const ClusterModel& m = *model_;
    const int horizon = m.dynamics.horizon();
    if (tau.horizon() != horizon) {
      throw DimensionError("traj_log_density: horizon mismatch");
    }
    double lp = gaussian_logpdf(tau.states.row(0).transpose() - m.init.mean,
                                init_);
    for (int t = 0; t < horizon; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      const Vec x = tau.states.row(t).transpose();
      const Vec u = tau.actions.row(t).transpose();
      const Vec xn = tau.states.row(t + 1).transpose();
      lp += gaussian_logpdf(u - m.policy_lin.mean_action(t, x), pol_[ts]);
      lp += gaussian_logpdf(
          xn - (m.dynamics.fx[ts] * x + m.dynamics.fu[ts] * u +
                m.dynamics.fc[ts]),
          dyn_[ts]);
    }
    return lp;
  }

 private:
  static Eigen::LLT<Mat> factor(const Mat& cov, double floor) {
    Eigen::LLT<Mat> llt(symmetrize(cov) +
                        floor * Mat::Identity(cov.rows(), cov.cols()));
    if (llt.info() != Eigen::Success) {
      throw NumericalError("TrajectoryDensity: covariance not positive definite");
    }
    return llt;
  }

  const ClusterModel* model_;
  Eigen::LLT<Mat> init_;
  std::vector<Eigen::LLT<Mat>> pol_;
  std::vector<Eigen::LLT<Mat>> dyn_;
};

/// log p_k(tau) = log p(x_1) + sum_t [log pbar(u_t|x_t) +
/// log p(x_{t+1}|x_t,u_t)], each covariance raised by floor * I.
inline double traj_log_density(const ClusterModel& model,
                               const Trajectory& tau,
                               double floor = kDefaultCovFloor) {
  return TrajectoryDensity(model, floor).log_density(tau);
}

}  // namespace rfgps
