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

// Time-varying linear-Gaussian regression for dynamics and for
// linearizations of the global policy, with an optional GMM prior.

#pragma once

#include <optional>
#include <vector>

#include "rfgps/common.hpp"
#include "rfgps/gmm.hpp"
#include "rfgps/lingauss.hpp"

namespace rfgps {

struct FitOptions {
  double cov_floor = kDefaultCovFloor;
  // Ridge added to the input covariance: ridge_scale * tr(Sxx) / dim.
  double ridge_scale = 1e-6;
  // Pseudo-count n0 of the prior when one is supplied.
  double prior_strength = 1.0;
  // Policy fits regress on the recorded policy means instead of the applied
  // actions.
  bool policy_targets_are_means = false;
  // Added to the fitted policy covariance (e.g. the known exploration noise
  // of the policy that produced the means). Empty means none.
  Mat policy_noise_cov;
};

struct FitDiagnostics {
  std::vector<int> rank_deficient_steps;
};

/// Trajectories assigned to one cluster or condition.
class SampleSet {
 public:
  SampleSet() = default;
  explicit SampleSet(std::vector<const Trajectory*> members)
      : members_(std::move(members)) {
    for (const auto* m : members_) {
      if (m->horizon() != members_.front()->horizon()) {
        throw DimensionError("SampleSet: members must share a horizon");
      }
    }
  }

  static SampleSet subset(const std::vector<Trajectory>& all,
                          const std::vector<int>& indices) {
    std::vector<const Trajectory*> m;
    m.reserve(indices.size());
    for (int i : indices) m.push_back(&all.at(static_cast<std::size_t>(i)));
    return SampleSet(std::move(m));
  }

  static SampleSet all_of(const std::vector<Trajectory>& all) {
    std::vector<const Trajectory*> m;
    for (const auto& t : all) m.push_back(&t);
    return SampleSet(std::move(m));
  }

  [[nodiscard]] int size() const { return static_cast<int>(members_.size()); }
  [[nodiscard]] bool empty() const { return members_.empty(); }
  [[nodiscard]] int horizon() const {
    return empty() ? 0 : members_.front()->horizon();
  }
  [[nodiscard]] int dx() const {
    return empty() ? 0 : members_.front()->state_dim();
  }
  [[nodiscard]] int du() const {
    return empty() ? 0 : members_.front()->action_dim();
  }
  [[nodiscard]] const Trajectory& operator[](int i) const {
    return *members_[static_cast<std::size_t>(i)];
  }

  /// Rows (x_t, u_t, x_{t+1}) for one time step.
  [[nodiscard]] Mat dynamics_tuples(int t) const {
    const int dx_ = dx();
    const int du_ = du();
    Mat out(size(), 2 * dx_ + du_);
    for (int i = 0; i < size(); ++i) {
      const Trajectory& tr = (*this)[i];
      out.row(i) << tr.states.row(t), tr.actions.row(t), tr.states.row(t + 1);
    }
    return out;
  }

  /// Rows (x_t, u_t) for one time step, with u_t either the applied action or
  /// the recorded policy mean.
  [[nodiscard]] Mat policy_tuples(int t, bool use_means) const {
    Mat out(size(), dx() + du());
    for (int i = 0; i < size(); ++i) {
      const Trajectory& tr = (*this)[i];
      const bool means = use_means && tr.policy_means.rows() == tr.horizon();
      out.row(i) << tr.states.row(t),
          (means ? tr.policy_means.row(t) : tr.actions.row(t));
    }
    return out;
  }

  /// All time steps stacked, for fitting a prior.
  [[nodiscard]] Mat pooled_dynamics_tuples() const {
    Mat out(size() * horizon(), 2 * dx() + du());
    for (int t = 0; t < horizon(); ++t) {
      out.middleRows(static_cast<Eigen::Index>(t) * size(), size()) =
          dynamics_tuples(t);
    }
    return out;
  }
  [[nodiscard]] Mat pooled_policy_tuples(bool use_means) const {
    Mat out(size() * horizon(), dx() + du());
    for (int t = 0; t < horizon(); ++t) {
      out.middleRows(static_cast<Eigen::Index>(t) * size(), size()) =
          policy_tuples(t, use_means);
    }
    return out;
  }

 private:
  std::vector<const Trajectory*> members_;
};

struct LinearFit {
  Mat gain;    // outputs x inputs
  Vec offset;  // outputs
  Mat cov;     // outputs x outputs, includes the floor
  bool rank_deficient = false;
};

/// Regresses the trailing `n_out` columns of `tuples` on the leading columns.
///
/// The empirical joint moments are optionally blended with prior moments
/// (mean mu0, scatter phi, strength n0) before conditioning:
///   S = (N S_emp + n0 phi + N n0 / (N + n0) (m - mu0)(m - mu0)') / (N + n0)
/// and the conditional of S gives gain, offset and residual covariance.
inline LinearFit fit_linear_gaussian(const Mat& tuples, int n_out,
                                     const Gaussian* prior, double n0,
                                     const FitOptions& opts) {
  const auto n = static_cast<double>(tuples.rows());
  const auto dim = tuples.cols();
  const auto n_in = dim - n_out;
  if (tuples.rows() < 1) throw std::invalid_argument("regression: no data");

  const Vec mean = tuples.colwise().mean().transpose();
  Mat sigma = detail::sample_covariance(tuples, mean);
  if (prior != nullptr && n0 > 0.0) {
    require_dim(prior->dim(), dim, "prior dimension");
    const Vec d = mean - prior->mean;
    sigma = symmetrize((n * sigma + n0 * prior->cov +
                        (n * n0 / (n + n0)) * d * d.transpose()) /
                       (n + n0));
  }

  const Mat sxx = sigma.topLeftCorner(n_in, n_in);
  const Mat syx = sigma.bottomLeftCorner(n_out, n_in);
  const Mat syy = sigma.bottomRightCorner(n_out, n_out);
  const double scale = sxx.trace() / static_cast<double>(std::max<Eigen::Index>(n_in, 1));
  const double ridge = opts.ridge_scale * (scale > 0.0 ? scale : 1.0);

  LinearFit fit;
  fit.rank_deficient =
      n_in > 0 && (tuples.rows() <= n_in ||
                   min_eigenvalue(sxx) <= 1e-10 * std::max(scale, 1e-300));
  const Mat reg = sxx + ridge * Mat::Identity(n_in, n_in);
  fit.gain = reg.ldlt().solve(syx.transpose()).transpose();
  fit.offset = mean.tail(n_out) - fit.gain * mean.head(n_in);
  // Residual covariance of the fitted coefficients under S.
  Mat resid = syy - fit.gain * syx.transpose() - syx * fit.gain.transpose() +
              fit.gain * sxx * fit.gain.transpose();
  fit.cov = clamp_eigenvalues(resid, 0.0) +
            opts.cov_floor * Mat::Identity(n_out, n_out);
  return fit;
}

namespace detail {

inline std::optional<Gaussian> prior_moments(const GmmPrior* prior,
                                             const Mat& tuples) {
  if (prior == nullptr) return std::nullopt;
  return prior->moments_at(tuples.colwise().mean().transpose());
}

}  // namespace detail

/// Per-step regression of x_{t+1} on (x_t, u_t).
inline LinearGaussianDynamics fit_dynamics(const SampleSet& data,
                                           const GmmPrior* prior = nullptr,
                                           const FitOptions& opts = {},
                                           FitDiagnostics* diag = nullptr) {
  if (data.empty()) throw std::invalid_argument("fit_dynamics: empty set");
  const int horizon = data.horizon();
  const int dx = data.dx();
  LinearGaussianDynamics dyn;
  for (int t = 0; t < horizon; ++t) {
    const Mat tuples = data.dynamics_tuples(t);
    const auto pm = detail::prior_moments(prior, tuples);
    const LinearFit fit = fit_linear_gaussian(
        tuples, dx, pm ? &*pm : nullptr, opts.prior_strength, opts);
    if (fit.rank_deficient && diag != nullptr) {
      diag->rank_deficient_steps.push_back(t);
    }
    dyn.fx.push_back(fit.gain.leftCols(dx));
    dyn.fu.push_back(fit.gain.rightCols(data.du()));
    dyn.fc.push_back(fit.offset);
    dyn.cov.push_back(fit.cov);
  }
  return dyn;
}

/// Per-step regression of u_t on x_t: a linear-Gaussian approximation of
/// whatever policy generated the data.
inline LinearGaussianPolicy fit_policy_linearization(
    const SampleSet& data, const GmmPrior* prior = nullptr,
    const FitOptions& opts = {}, FitDiagnostics* diag = nullptr) {
  if (data.empty()) {
    throw std::invalid_argument("fit_policy_linearization: empty set");
  }
  const int horizon = data.horizon();
  const int du = data.du();
  const bool has_noise = opts.policy_noise_cov.size() > 0;
  if (has_noise) require_dim(opts.policy_noise_cov.rows(), du, "policy noise");
  LinearGaussianPolicy pol;
  for (int t = 0; t < horizon; ++t) {
    const Mat tuples = data.policy_tuples(t, opts.policy_targets_are_means);
    const auto pm = detail::prior_moments(prior, tuples);
    LinearFit fit = fit_linear_gaussian(tuples, du, pm ? &*pm : nullptr,
                                        opts.prior_strength, opts);
    if (fit.rank_deficient && diag != nullptr) {
      diag->rank_deficient_steps.push_back(t);
    }
    if (has_noise) fit.cov = symmetrize(fit.cov + opts.policy_noise_cov);
    pol.K.push_back(fit.gain);
    pol.k.push_back(fit.offset);
    pol.cov.push_back(fit.cov);
  }
  return pol;
}

}  // namespace rfgps
