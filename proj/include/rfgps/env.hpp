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

// Stochastic toy reaching environments with analytic quadratic-distance
// costs.
//
// State layout is (physical state, target). The target is constant within
// an episode and is part of the state so that both the local models and the
// global policy observe it.
//
//   double_integrator_reacher: physical = (position[p], velocity[p]), du = p
//   two_link_arm_reacher:      physical = (q1, q2, dq1, dq2), du = 2

#pragma once

#include <algorithm>
#include <string>
#include <type_traits>
#include <utility>

#include "rfgps/common.hpp"
#include "rfgps/lingauss.hpp"

namespace rfgps {

enum class EnvKind { kDoubleIntegratorReacher, kTwoLinkArmReacher };
enum class TargetMode { kFixed, kRandomPerEpisode };
enum class InitDistKind { kGaussian, kUniformBox };

inline std::string to_string(EnvKind k) {
  return k == EnvKind::kDoubleIntegratorReacher ? "double_integrator_reacher"
                                                : "two_link_arm_reacher";
}
inline std::string to_string(TargetMode m) {
  return m == TargetMode::kFixed ? "fixed" : "random_per_episode";
}
inline std::string to_string(InitDistKind k) {
  return k == InitDistKind::kGaussian ? "gaussian" : "uniform_box";
}

/// Distribution over the physical part of the initial state. For kGaussian
/// `a` is the mean and `b` the per-dimension standard deviation; for
/// kUniformBox they are the lower and upper corners.
struct InitStateDist {
  InitDistKind kind = InitDistKind::kUniformBox;
  Vec a;
  Vec b;
};

struct ArmParams {
  double l1 = 1.0;
  double l2 = 1.0;
  double m1 = 1.0;
  double m2 = 1.0;
  double damping = 0.0;
};

struct EnvSpec {
  EnvKind kind = EnvKind::kDoubleIntegratorReacher;
  int pos_dim = 2;  // double integrator only
  int horizon = 20;
  double dt = 0.1;
  Vec process_noise_std;  // one entry per state dimension
  InitStateDist init;
  TargetMode target_mode = TargetMode::kFixed;
  Vec fixed_target;
  Vec target_low;
  Vec target_high;
  double action_cost_weight = 1e-2;
  double action_bound = std::numeric_limits<double>::infinity();
  ArmParams arm;

  [[nodiscard]] int physical_dim() const {
    return kind == EnvKind::kDoubleIntegratorReacher ? 2 * pos_dim : 4;
  }
  [[nodiscard]] int target_dim() const {
    return kind == EnvKind::kDoubleIntegratorReacher ? pos_dim : 2;
  }
  [[nodiscard]] int state_dim() const { return physical_dim() + target_dim(); }
  [[nodiscard]] int action_dim() const {
    return kind == EnvKind::kDoubleIntegratorReacher ? pos_dim : 2;
  }

  void validate() const {
    if (pos_dim < 1 || horizon < 1) {
      throw std::invalid_argument("EnvSpec: dimensions and horizon must be >= 1");
    }
    if (!(dt > 0.0)) throw std::invalid_argument("EnvSpec: dt must be > 0");
    if (!(action_cost_weight >= 0.0)) {
      throw std::invalid_argument("EnvSpec: action_cost_weight must be >= 0");
    }
    if (!(action_bound > 0.0)) {
      throw std::invalid_argument("EnvSpec: action_bound must be > 0");
    }
    require_dim(process_noise_std.size(), state_dim(), "process_noise_std");
    if ((process_noise_std.array() < 0.0).any()) {
      throw std::invalid_argument("EnvSpec: negative noise std");
    }
    require_dim(init.a.size(), physical_dim(), "init distribution");
    require_dim(init.b.size(), physical_dim(), "init distribution");
    if (target_mode == TargetMode::kFixed) {
      require_dim(fixed_target.size(), target_dim(), "fixed_target");
    } else {
      require_dim(target_low.size(), target_dim(), "target_low");
      require_dim(target_high.size(), target_dim(), "target_high");
    }
  }

  /// Double-integrator reacher with a fixed target and no noise. Handy
  /// starting point for tests and configs.
  static EnvSpec double_integrator(int pos_dim, int horizon, double dt) {
    EnvSpec s;
    s.kind = EnvKind::kDoubleIntegratorReacher;
    s.pos_dim = pos_dim;
    s.horizon = horizon;
    s.dt = dt;
    s.process_noise_std = Vec::Zero(s.state_dim());
    s.init.kind = InitDistKind::kUniformBox;
    s.init.a = Vec::Zero(s.physical_dim());
    s.init.b = Vec::Zero(s.physical_dim());
    s.fixed_target = Vec::Zero(pos_dim);
    s.target_low = -Vec::Ones(pos_dim);
    s.target_high = Vec::Ones(pos_dim);
    return s;
  }

  static EnvSpec two_link_arm(int horizon, double dt) {
    EnvSpec s;
    s.kind = EnvKind::kTwoLinkArmReacher;
    s.horizon = horizon;
    s.dt = dt;
    s.process_noise_std = Vec::Zero(s.state_dim());
    s.init.kind = InitDistKind::kUniformBox;
    s.init.a = Vec::Zero(4);
    s.init.b = Vec::Zero(4);
    s.fixed_target = Vec::Constant(2, 1.0);
    s.target_low = -Vec::Ones(2);
    s.target_high = Vec::Ones(2);
    return s;
  }
};

namespace detail {

inline void check_state_action(const EnvSpec& spec, const Vec& x,
                               const Vec& u) {
  require_dim(x.size(), spec.state_dim(), "state");
  require_dim(u.size(), spec.action_dim(), "action");
  if (!x.allFinite() || !u.allFinite()) {
    throw std::invalid_argument("non-finite state or action");
  }
}

struct ArmMassMatrix {
  Eigen::Matrix2d m;
  Eigen::Vector2d bias;  // Coriolis/centrifugal plus damping
};

inline ArmMassMatrix arm_terms(const ArmParams& p, const Vec& x) {
  const double q2 = x[1];
  const double dq1 = x[2];
  const double dq2 = x[3];
  const double a = (p.m1 + p.m2) * p.l1 * p.l1;
  const double b = p.m2 * p.l2 * p.l2;
  const double c = p.m2 * p.l1 * p.l2;
  const double h = c * std::sin(q2);
  ArmMassMatrix out;
  out.m << a + b + 2.0 * c * std::cos(q2), b + c * std::cos(q2),
      b + c * std::cos(q2), b;
  out.bias << -h * (2.0 * dq1 * dq2 + dq2 * dq2) + p.damping * dq1,
      h * dq1 * dq1 + p.damping * dq2;
  return out;
}

}  // namespace detail

inline Vec clamp_action(const EnvSpec& spec, const Vec& u) {
  return u.cwiseMax(-spec.action_bound).cwiseMin(spec.action_bound);
}

/// Deterministic part of the transition. `u` is used as given.
inline Vec step_mean(const EnvSpec& spec, const Vec& x, const Vec& u) {
  Vec xn = x;
  const double dt = spec.dt;
  if (spec.kind == EnvKind::kDoubleIntegratorReacher) {
    const int p = spec.pos_dim;
    xn.segment(0, p) = x.segment(0, p) + dt * x.segment(p, p) + 0.5 * dt * dt * u;
    xn.segment(p, p) = x.segment(p, p) + dt * u;
  } else {
    // Semi-implicit Euler: velocities first, then positions with the new
    // velocities.
    const auto terms = detail::arm_terms(spec.arm, x);
    const Eigen::Vector2d tau(u[0], u[1]);
    const Eigen::Vector2d qdd = terms.m.ldlt().solve(tau - terms.bias);
    xn[2] = x[2] + dt * qdd[0];
    xn[3] = x[3] + dt * qdd[1];
    xn[0] = x[0] + dt * xn[2];
    xn[1] = x[1] + dt * xn[3];
  }
  return xn;
}

/// One stochastic transition. The action is clamped to the configured
/// bounds before integration.
inline Vec step_env(const EnvSpec& spec, const Vec& x, const Vec& u, Rng& rng) {
  detail::check_state_action(spec, x, u);
  Vec xn = step_mean(spec, x, clamp_action(spec, u));
  std::normal_distribution<double> nd(0.0, 1.0);
  for (Eigen::Index i = 0; i < xn.size(); ++i) {
    const double s = spec.process_noise_std[i];
    if (s > 0.0) xn[i] += s * nd(rng);
  }
  return xn;
}

/// Position of the end effector (the double integrator's position).
inline Vec end_effector(const EnvSpec& spec, const Vec& x) {
  if (spec.kind == EnvKind::kDoubleIntegratorReacher) {
    return x.head(spec.pos_dim);
  }
  const auto& a = spec.arm;
  Vec ee(2);
  ee << a.l1 * std::cos(x[0]) + a.l2 * std::cos(x[0] + x[1]),
      a.l1 * std::sin(x[0]) + a.l2 * std::sin(x[0] + x[1]);
  return ee;
}

inline Vec target_of(const EnvSpec& spec, const Vec& x) {
  return x.tail(spec.target_dim());
}

inline double distance_to_target(const EnvSpec& spec, const Vec& x) {
  return (end_effector(spec, x) - target_of(spec, x)).norm();
}

/// c(x,u) = |ee(x) - target|^2 + w_u |u|^2 together with its exact
/// second-order expansion at (x, u).
inline std::pair<double, QuadCostStep> cost_eval(const EnvSpec& spec,
                                                 const Vec& x, const Vec& u) {
  detail::check_state_action(spec, x, u);
  const int dx = spec.state_dim();
  const int du = spec.action_dim();
  const int nt = spec.target_dim();
  const double wu = spec.action_cost_weight;

  const Vec r = end_effector(spec, x) - target_of(spec, x);
  // jac = d r / d x, nt x dx
  Mat jac = Mat::Zero(nt, dx);
  jac.rightCols(nt) = -Mat::Identity(nt, nt);
  Mat hxx = Mat::Zero(dx, dx);
  if (spec.kind == EnvKind::kDoubleIntegratorReacher) {
    jac.leftCols(nt) = Mat::Identity(nt, nt);
  } else {
    const auto& a = spec.arm;
    const double s1 = std::sin(x[0]);
    const double c1 = std::cos(x[0]);
    const double s12 = std::sin(x[0] + x[1]);
    const double c12 = std::cos(x[0] + x[1]);
    jac(0, 0) = -a.l1 * s1 - a.l2 * s12;
    jac(0, 1) = -a.l2 * s12;
    jac(1, 0) = a.l1 * c1 + a.l2 * c12;
    jac(1, 1) = a.l2 * c12;
    // Curvature of the forward kinematics weighted by the residual.
    Eigen::Matrix2d hx;
    hx << -a.l1 * c1 - a.l2 * c12, -a.l2 * c12, -a.l2 * c12, -a.l2 * c12;
    Eigen::Matrix2d hy;
    hy << -a.l1 * s1 - a.l2 * s12, -a.l2 * s12, -a.l2 * s12, -a.l2 * s12;
    hxx.topLeftCorner(2, 2) = 2.0 * (r[0] * hx + r[1] * hy);
  }
  hxx += 2.0 * jac.transpose() * jac;

  QuadCostStep q;
  q.x_hat = x;
  q.u_hat = u;
  q.value = r.squaredNorm() + wu * u.squaredNorm();
  q.grad.resize(dx + du);
  q.grad << 2.0 * jac.transpose() * r, 2.0 * wu * u;
  q.hess = Mat::Zero(dx + du, dx + du);
  q.hess.topLeftCorner(dx, dx) = symmetrize(hxx);
  q.hess.bottomRightCorner(du, du) = 2.0 * wu * Mat::Identity(du, du);
  return {q.value, std::move(q)};
}

inline double cost_value(const EnvSpec& spec, const Vec& x, const Vec& u) {
  const Vec r = end_effector(spec, x) - target_of(spec, x);
  return r.squaredNorm() + spec.action_cost_weight * u.squaredNorm();
}

/// Draws x_1: physical part from the init distribution, target from the
/// target mode.
inline Vec sample_initial_state(const EnvSpec& spec, Rng& rng) {
  const int np = spec.physical_dim();
  Vec x(spec.state_dim());
  for (int i = 0; i < np; ++i) {
    if (spec.init.kind == InitDistKind::kGaussian) {
      std::normal_distribution<double> nd(0.0, 1.0);
      x[i] = spec.init.b[i] > 0.0 ? spec.init.a[i] + spec.init.b[i] * nd(rng)
                                  : spec.init.a[i];
    } else {
      const double lo = spec.init.a[i];
      const double hi = spec.init.b[i];
      std::uniform_real_distribution<double> ud(0.0, 1.0);
      x[i] = hi > lo ? lo + (hi - lo) * ud(rng) : lo;
    }
  }
  if (spec.target_mode == TargetMode::kFixed) {
    x.tail(spec.target_dim()) = spec.fixed_target;
  } else {
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int i = 0; i < spec.target_dim(); ++i) {
      const double lo = spec.target_low[i];
      const double hi = spec.target_high[i];
      x[np + i] = hi > lo ? lo + (hi - lo) * ud(rng) : lo;
    }
  }
  return x;
}

/// What a sampling policy returns: the action to apply and the
/// deterministic mean it was drawn around.
struct ActionDraw {
  Vec action;
  Vec mean;
};

/// Executes T steps from x1. `policy(x, t, rng)` returns either an action
/// vector or an ActionDraw.
template <class Policy>
Trajectory rollout_from(const EnvSpec& spec, const Vec& x1, Policy&& policy,
                        std::uint64_t seed) {
  const int horizon = spec.horizon;
  const int dx = spec.state_dim();
  const int du = spec.action_dim();
  require_dim(x1.size(), dx, "initial state");

  Rng rng(seed);
  Trajectory tau;
  tau.seed = seed;
  tau.states.resize(horizon + 1, dx);
  tau.actions.resize(horizon, du);
  tau.policy_means.resize(horizon, du);
  tau.costs.resize(horizon);
  tau.states.row(0) = x1.transpose();

  Vec x = x1;
  for (int t = 0; t < horizon; ++t) {
    Vec mean;
    Vec u;
    using Result = std::invoke_result_t<Policy&, const Vec&, int, Rng&>;
    if constexpr (std::is_same_v<std::decay_t<Result>, ActionDraw>) {
      ActionDraw d = policy(x, t, rng);
      u = std::move(d.action);
      mean = std::move(d.mean);
    } else {
      u = policy(x, t, rng);
      mean = u;
    }
    require_dim(u.size(), du, "policy action");
    if (!u.allFinite()) {
      throw NumericalError("rollout: policy produced a non-finite action at t=" +
                           std::to_string(t));
    }
    u = clamp_action(spec, u);
    tau.actions.row(t) = u.transpose();
    tau.policy_means.row(t) = mean.transpose();
    tau.costs[t] = cost_value(spec, x, u);
    x = step_env(spec, x, u, rng);
    if (!x.allFinite()) {
      throw NumericalError("rollout: non-finite state at t=" +
                           std::to_string(t + 1));
    }
    tau.states.row(t + 1) = x.transpose();
  }
  return tau;
}

/// Draws x1 from the environment's initial distribution, then rolls out.
template <class Policy>
Trajectory rollout(const EnvSpec& spec, Policy&& policy, std::uint64_t seed) {
  // The initial state gets its own stream so that forcing x1 (deterministic
  // resets) leaves the transition noise sequence unchanged.
  Rng init_rng(derive_seed(seed, "init"));
  const Vec x1 = sample_initial_state(spec, init_rng);
  return rollout_from(spec, x1, std::forward<Policy>(policy), seed);
}

}  // namespace rfgps
