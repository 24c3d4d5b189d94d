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

// Local policy optimization: KL-constrained LQR against a linearization of
// the global policy, and the shared step-size rule.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rfgps/common.hpp"
#include "rfgps/env.hpp"
#include "rfgps/lingauss.hpp"
#include "rfgps/traj_cluster.hpp"

namespace rfgps {

/// Expands the cost around every (x_t, u_t) of `tau`. The c_uu block is
/// eigenvalue-clamped at 1e-6 * (1 + |max eigenvalue|) so it is always
/// positive definite.
inline QuadCostTerm quadratize_around_sample(const EnvSpec& spec,
                                             const Trajectory& tau) {
  if (tau.horizon() != spec.horizon) {
    throw DimensionError("quadratize_around_sample: horizon mismatch");
  }
  const int du = spec.action_dim();
  QuadCostTerm out;
  out.steps.reserve(static_cast<std::size_t>(spec.horizon));
  for (int t = 0; t < spec.horizon; ++t) {
    QuadCostStep q = cost_eval(spec, tau.states.row(t).transpose(),
                               tau.actions.row(t).transpose())
                         .second;
    const Mat cuu = q.hess.bottomRightCorner(du, du);
    Eigen::SelfAdjointEigenSolver<Mat> es(cuu, Eigen::EigenvaluesOnly);
    const double delta =
        1e-6 * (1.0 + es.eigenvalues().cwiseAbs().maxCoeff());
    q.hess.bottomRightCorner(du, du) = clamp_eigenvalues(cuu, delta);
    if (!q.hess.allFinite() || !q.grad.allFinite()) {
      throw NumericalError("quadratize_around_sample: non-finite derivatives");
    }
    out.steps.push_back(std::move(q));
  }
  return out;
}

/// Averages several expansions in absolute coordinates and re-expresses the
/// result around the mean expansion point.
inline QuadCostTerm average_cost_terms(const std::vector<QuadCostTerm>& terms) {
  if (terms.empty()) throw std::invalid_argument("average_cost_terms: empty");
  const int horizon = terms.front().horizon();
  const double n = static_cast<double>(terms.size());
  QuadCostTerm out;
  for (int t = 0; t < horizon; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    const QuadCostStep& first = terms.front().steps[ts];
    Mat h = Mat::Zero(first.hess.rows(), first.hess.cols());
    Vec lin = Vec::Zero(first.grad.size());
    Vec z = Vec::Zero(first.grad.size());
    double c = 0.0;
    for (const auto& term : terms) {
      const QuadCostStep& s = term.steps[ts];
      h += s.hess;
      lin += s.linear();
      c += s.constant();
      z += s.z_hat();
    }
    h /= n;
    lin /= n;
    c /= n;
    z /= n;
    QuadCostStep q;
    q.hess = h;
    q.x_hat = z.head(first.dx());
    q.u_hat = z.tail(first.du());
    q.value = 0.5 * z.dot(h * z) + lin.dot(z) + c;
    q.grad = h * z + lin;
    out.steps.push_back(std::move(q));
  }
  return out;
}

struct BackwardPassResult {
  LinearGaussianPolicy policy;
  double eta = 0.0;  // may exceed the requested value after PD retries
  int retries = 0;
};

namespace detail {

// One sweep for a fixed eta; returns nullopt when Q_uu is not positive
// definite at some step.
inline std::optional<LinearGaussianPolicy> backward_sweep(
    const LinearGaussianDynamics& dyn, const QuadCostTerm& cost,
    const LinearGaussianPolicy& pbar, double eta) {
  const int horizon = dyn.horizon();
  const int dx = dyn.dx();
  const int du = dyn.du();
  const int n = dx + du;
  LinearGaussianPolicy out;
  out.K.resize(static_cast<std::size_t>(horizon));
  out.k.resize(static_cast<std::size_t>(horizon));
  out.cov.resize(static_cast<std::size_t>(horizon));

  Mat vxx = Mat::Zero(dx, dx);
  Vec vx = Vec::Zero(dx);
  for (int t = horizon - 1; t >= 0; --t) {
    const auto ts = static_cast<std::size_t>(t);
    const QuadCostStep& c = cost.steps[ts];

    // Surrogate cost c/eta - log pbar(u|x), up to a constant.
    Mat cm = c.hess / eta;
    Vec cv = c.linear() / eta;
    Eigen::LLT<Mat> llt_p(pbar.cov[ts]);
    if (llt_p.info() != Eigen::Success) {
      throw NumericalError("kl_backward_pass: reference covariance not PD");
    }
    const Mat prec = llt_p.solve(Mat::Identity(du, du));
    const Mat& kp = pbar.K[ts];
    const Vec& kk = pbar.k[ts];
    const Mat pk = prec * kp;
    cm.topLeftCorner(dx, dx) += kp.transpose() * pk;
    cm.topRightCorner(dx, du) -= pk.transpose();
    cm.bottomLeftCorner(du, dx) -= pk;
    cm.bottomRightCorner(du, du) += prec;
    cv.head(dx) += pk.transpose() * kk;
    cv.tail(du) -= prec * kk;

    Mat f(dx, n);
    f << dyn.fx[ts], dyn.fu[ts];
    const Mat q = symmetrize(cm + f.transpose() * vxx * f);
    const Vec qv = cv + f.transpose() * (vxx * dyn.fc[ts] + vx);

    const Mat quu = q.bottomRightCorner(du, du);
    const Mat qux = q.bottomLeftCorner(du, dx);
    Eigen::LLT<Mat> llt(quu);
    if (llt.info() != Eigen::Success || !quu.allFinite()) return std::nullopt;

    out.K[ts] = -llt.solve(qux);
    out.k[ts] = -llt.solve(qv.tail(du));
    out.cov[ts] = symmetrize(llt.solve(Mat::Identity(du, du)));

    vxx = symmetrize(q.topLeftCorner(dx, dx) + qux.transpose() * out.K[ts]);
    vx = qv.head(dx) + qux.transpose() * out.k[ts];
  }
  return out;
}

}  // namespace detail

/// LQR backward pass on the per-step surrogate c_t/eta - log pbar_t(u|x).
///
/// Returns K_t = -Quu^-1 Qux, k_t = -Quu^-1 qu and C_t = Quu^-1. When Quu is
/// not positive definite eta is doubled and the pass retried, up to 10 times.
inline BackwardPassResult kl_backward_pass(const LinearGaussianDynamics& dyn,
                                           const QuadCostTerm& cost,
                                           const LinearGaussianPolicy& pbar,
                                           double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("kl_backward_pass: eta <= 0");
  detail::check_horizons(dyn, pbar);
  if (cost.horizon() != dyn.horizon()) {
    throw DimensionError("kl_backward_pass: cost horizon mismatch");
  }
  constexpr int kMaxRetries = 10;
  BackwardPassResult res;
  res.eta = eta;
  for (res.retries = 0; res.retries <= kMaxRetries; ++res.retries) {
    if (auto pol = detail::backward_sweep(dyn, cost, pbar, res.eta)) {
      res.policy = std::move(*pol);
      return res;
    }
    if (res.retries < kMaxRetries) res.eta *= 2.0;
  }
  throw NumericalError("kl_backward_pass: Q_uu not positive definite after " +
                       std::to_string(kMaxRetries) + " eta increases");
}

struct LocalPolicyResult {
  LinearGaussianPolicy policy;
  double eta = 0.0;
  double kl_total = 0.0;
  double expected_cost = 0.0;         // E_q[cost] under the fitted dynamics
  double baseline_cost = 0.0;         // E_pbar[cost] under the same model
  double expected_improvement = 0.0;  // baseline_cost - expected_cost
  bool constraint_active = true;
  int evaluations = 0;
  bool ok = true;
  std::string error;
};

struct DualSearchOptions {
  double initial_eta = 1.0;
  double min_eta = 1e-12;
  double max_eta = 1e20;
  double lower_fraction = 0.9;  // accept KL in [lower_fraction * eps, eps]
  int max_evaluations = 50;
};

/// Finds eta so that the optimized policy's expected KL to pbar (under its
/// own marginals and the given dynamics) lies in [0.9 eps, eps], by
/// bracketing and safeguarded interpolation on log eta.
inline LocalPolicyResult solve_local_policy(const LinearGaussianDynamics& dyn,
                                            const QuadCostTerm& cost,
                                            const LinearGaussianPolicy& pbar,
                                            const Gaussian& init,
                                            double epsilon,
                                            const DualSearchOptions& opts = {}) {
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("solve_local_policy: epsilon must be > 0");
  }
  struct Eval {
    BackwardPassResult bp;
    double kl = 0.0;
    GaussianMarginals marg;
  };
  int evaluations = 0;
  auto evaluate = [&](double eta) {
    ++evaluations;
    Eval e;
    e.bp = kl_backward_pass(dyn, cost, pbar, eta);
    e.marg = compute_marginals(init, dyn, e.bp.policy);
    e.kl = policy_kl(e.bp.policy, pbar, e.marg).total;
    return e;
  };
  auto finish = [&](Eval&& e, bool active) {
    LocalPolicyResult r;
    r.eta = e.bp.eta;
    r.kl_total = e.kl;
    r.expected_cost = expected_quadratic_cost(e.marg, cost);
    r.baseline_cost =
        expected_quadratic_cost(compute_marginals(init, dyn, pbar), cost);
    r.expected_improvement = r.baseline_cost - r.expected_cost;
    r.constraint_active = active;
    r.evaluations = evaluations;
    r.policy = std::move(e.bp.policy);
    return r;
  };
  const double lower = opts.lower_fraction * epsilon;
  auto accepted = [&](const Eval& e) { return e.kl <= epsilon && e.kl >= lower; };

  Eval cur = evaluate(opts.initial_eta);
  if (accepted(cur)) return finish(std::move(cur), true);

  // Bracket: `lo` violates the constraint (small eta), `hi` satisfies it.
  std::optional<Eval> lo;
  std::optional<Eval> hi;
  if (cur.kl > epsilon) {
    lo = std::move(cur);
    double eta = lo->bp.eta;
    while (!hi) {
      if (evaluations >= opts.max_evaluations || eta >= opts.max_eta) {
        throw NumericalError("solve_local_policy: bracket not found");
      }
      eta *= 10.0;
      Eval e = evaluate(eta);
      if (accepted(e)) return finish(std::move(e), true);
      if (e.kl <= epsilon) {
        hi = std::move(e);
      } else {
        lo = std::move(e);
        eta = lo->bp.eta;
      }
    }
  } else {
    hi = std::move(cur);
    double eta = hi->bp.eta;
    while (!lo) {
      if (eta / 10.0 < opts.min_eta) {
        // Even the least constrained solution stays inside the budget.
        return finish(std::move(*hi), false);
      }
      if (evaluations >= opts.max_evaluations) {
        throw NumericalError("solve_local_policy: bracket not found");
      }
      eta /= 10.0;
      Eval e = evaluate(eta);
      if (accepted(e)) return finish(std::move(e), true);
      if (e.kl > epsilon) {
        lo = std::move(e);
      } else {
        hi = std::move(e);
        eta = hi->bp.eta;
      }
    }
  }

  // Interpolate log KL linearly in log eta toward the middle of the accepted
  // band, safeguarded to stay inside the bracket.
  const double goal = std::log(0.5 * (lower + epsilon));
  while (evaluations < opts.max_evaluations) {
    const double a = std::log(lo->bp.eta);
    const double b = std::log(hi->bp.eta);
    const double fa = std::log(std::max(lo->kl, 1e-300));
    const double fb = std::log(std::max(hi->kl, 1e-300));
    double x = 0.5 * (a + b);
    if (std::isfinite(fa) && std::isfinite(fb) && fa != fb) {
      const double s = a + (goal - fa) * (b - a) / (fb - fa);
      const double lo_guard = a + 0.05 * (b - a);
      const double hi_guard = b - 0.05 * (b - a);
      if (std::isfinite(s)) x = std::clamp(s, lo_guard, hi_guard);
    }
    Eval e = evaluate(std::exp(x));
    if (accepted(e)) return finish(std::move(e), true);
    if (e.kl > epsilon) {
      lo = std::move(e);
    } else {
      hi = std::move(e);
    }
    if (b - a < 1e-12) break;
  }
  // Out of budget: return the feasible end of the bracket.
  return finish(std::move(*hi), true);
}

struct LocalPolicyOptions {
  DualSearchOptions dual;
  int threads = 1;
};

/// One KL-constrained local policy per sample: cost expanded around that
/// sample, dynamics and pbar from its cluster, initial state at the
/// sample's x_1 with the cluster's initial covariance.
///
/// Failures are recorded per sample (ok = false). More than half failing
/// aborts the iteration.
inline std::vector<LocalPolicyResult> update_all_local_policies(
    const std::vector<Trajectory>& trajs, const Assignment& assign,
    const std::vector<ClusterModel>& models, const EnvSpec& spec, double eps,
    const LocalPolicyOptions& opts = {}) {
  const int m = static_cast<int>(trajs.size());
  if (static_cast<int>(assign.labels.size()) != m) {
    throw DimensionError("update_all_local_policies: assignment size");
  }
  std::vector<LocalPolicyResult> out(static_cast<std::size_t>(m));
  parallel_for(m, opts.threads, [&](int i) {
    const auto is = static_cast<std::size_t>(i);
    LocalPolicyResult& r = out[is];
    try {
      const ClusterModel& model =
          models.at(static_cast<std::size_t>(assign.labels[is]));
      const QuadCostTerm cost = quadratize_around_sample(spec, trajs[is]);
      const Gaussian init{trajs[is].states.row(0).transpose(), model.init.cov};
      r = solve_local_policy(model.dynamics, cost, model.policy_lin, init, eps,
                             opts.dual);
    } catch (const std::exception& e) {
      r = LocalPolicyResult{};
      r.ok = false;
      r.error = e.what();
    }
  });
  int failed = 0;
  for (const auto& r : out) failed += r.ok ? 0 : 1;
  if (2 * failed > m) {
    throw NumericalError("update_all_local_policies: " + std::to_string(failed) +
                         " of " + std::to_string(m) + " local solves failed");
  }
  return out;
}

struct StepState {
  double epsilon = 1.0;
  double eps_min = 1e-4;
  double eps_max = 10.0;
  std::optional<double> prev_expected_improvement;
  // Cost of the global policy at the previous iteration (mean sampled cost,
  // or expected cost under the fitted models).
  std::optional<double> prev_global_cost;
};

/// eps' = eps * dJ_expected / (2 (dJ_expected - dJ_actual)), clamped to
/// [eps_min, eps_max]. When the actual improvement matches or beats the
/// prediction the formula is singular or negative and eps doubles instead.
inline StepState adjust_step_size(const StepState& step, double actual_dj,
                                  double expected_dj) {
  StepState next = step;
  const double denom = expected_dj - actual_dj;
  double eps = 0.0;
  if (denom <= 0.0) {
    eps = std::min(2.0 * step.epsilon, step.eps_max);
  } else {
    // Ratio first, so dJ = dJbar/2 gives exactly eps and dJ = 0 exactly eps/2.
    eps = step.epsilon * (expected_dj / (2.0 * denom));
  }
  if (!std::isfinite(eps)) eps = step.epsilon;
  next.epsilon = std::clamp(eps, step.eps_min, step.eps_max);
  return next;
}

}  // namespace rfgps
