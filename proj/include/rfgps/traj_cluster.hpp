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

// Hard-EM clustering of rollouts into Gaussian trajectory distributions.
//
// Each cluster is a ClusterModel: initial-state Gaussian, time-varying
// linear-Gaussian dynamics and policy linearization, and a mixture mass.
// The E-step assigns every trajectory to argmax_k log P(k) + log p_k(tau);
// the M-step refits each cluster's model on its members.

#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "rfgps/common.hpp"
#include "rfgps/dyn_fit.hpp"
#include "rfgps/lingauss.hpp"

namespace rfgps {

struct Assignment {
  std::vector<int> labels;  // cluster per trajectory
  int n_clusters = 0;
  int iterations = 0;
  bool converged = false;
  Vec best_scores;  // log P(k) + log p_k(tau) of the assigned cluster
  Mat scores;       // M x K, empty before the first E-step

  [[nodiscard]] std::vector<int> counts() const {
    std::vector<int> c(static_cast<std::size_t>(n_clusters), 0);
    for (int l : labels) ++c[static_cast<std::size_t>(l)];
    return c;
  }
  [[nodiscard]] std::vector<int> members(int k) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == k) out.push_back(static_cast<int>(i));
    }
    return out;
  }
};

/// Fitting settings shared by every cluster. Priors are fit once per outer
/// iteration by the caller and only borrowed here.
struct ClusterFitConfig {
  FitOptions fit;
  const GmmPrior* dynamics_prior = nullptr;
  const GmmPrior* policy_prior = nullptr;
  int threads = 1;
};

/// Smallest cluster size enforced at initialization and after each E-step.
inline int min_cluster_occupancy(int m, int k) {
  return std::min(std::max(2, m / (2 * k)), m / k);
}

/// Uniform random labels, redrawn until every cluster holds at least
/// min_cluster_occupancy(M, K) members.
inline Assignment init_assignments(int m, int k, Rng& rng) {
  if (k < 1) throw std::invalid_argument("init_assignments: K must be >= 1");
  if (m < k) throw std::invalid_argument("init_assignments: M < K");
  const int min_occ = min_cluster_occupancy(m, k);
  Assignment a;
  a.n_clusters = k;
  a.labels.assign(static_cast<std::size_t>(m), 0);
  std::uniform_int_distribution<int> pick(0, k - 1);
  constexpr int kMaxRedraws = 1000;
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    for (auto& l : a.labels) l = pick(rng);
    const auto c = a.counts();
    if (*std::min_element(c.begin(), c.end()) >= min_occ) return a;
  }
  // Tight constraints (e.g. M == 2K) rarely pass rejection; deal min_occ
  // slots per cluster over a random permutation and draw the rest.
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int i = 0; i < m; ++i) {
    a.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
        i < min_occ * k ? i % k : pick(rng);
  }
  return a;
}

namespace detail {

inline Gaussian fit_initial_gaussian(const SampleSet& set, double floor) {
  const int dx = set.dx();
  Mat x1(set.size(), dx);
  for (int i = 0; i < set.size(); ++i) x1.row(i) = set[i].states.row(0);
  Gaussian g;
  g.mean = x1.colwise().mean().transpose();
  g.cov = sample_covariance(x1, g.mean) + floor * Mat::Identity(dx, dx);
  return g;
}

// Moves the worst-explained trajectory (lowest best score) out of any
// cluster that can spare one into `target`.
inline bool steal_outlier(Assignment& a, int target, int min_keep) {
  const auto counts = a.counts();
  int best = -1;
  double lowest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const int from = a.labels[i];
    if (from == target || counts[static_cast<std::size_t>(from)] <= min_keep) {
      continue;
    }
    const double s = a.best_scores.size() == static_cast<Eigen::Index>(a.labels.size())
                         ? a.best_scores[static_cast<Eigen::Index>(i)]
                         : 0.0;
    if (best < 0 || s < lowest) {
      best = static_cast<int>(i);
      lowest = s;
    }
  }
  if (best < 0) return false;
  a.labels[static_cast<std::size_t>(best)] = target;
  return true;
}

}  // namespace detail

/// Reassigns outliers until every cluster has at least `min_occ` members
/// (or no cluster can spare one).
inline void enforce_min_occupancy(Assignment& a, int min_occ) {
  for (int k = 0; k < a.n_clusters; ++k) {
    while (a.counts()[static_cast<std::size_t>(k)] < min_occ) {
      if (!detail::steal_outlier(a, k, min_occ)) break;
    }
  }
}

/// Fits one ClusterModel per cluster. Empty clusters are re-seeded with the
/// worst-explained trajectory first, so `assign` may change.
inline std::vector<ClusterModel> m_step(const std::vector<Trajectory>& trajs,
                                        Assignment& assign,
                                        const ClusterFitConfig& cfg,
                                        bool uniform_mass = false) {
  const int k = assign.n_clusters;
  const int m = static_cast<int>(trajs.size());
  if (static_cast<int>(assign.labels.size()) != m) {
    throw DimensionError("m_step: assignment size mismatch");
  }
  for (int c = 0; c < k; ++c) {
    if (assign.counts()[static_cast<std::size_t>(c)] == 0 &&
        !detail::steal_outlier(assign, c, 1)) {
      throw std::runtime_error("m_step: cannot re-seed empty cluster");
    }
  }
  std::vector<ClusterModel> models(static_cast<std::size_t>(k));
  const auto counts = assign.counts();
  parallel_for(k, cfg.threads, [&](int c) {
    const SampleSet set = SampleSet::subset(trajs, assign.members(c));
    ClusterModel& model = models[static_cast<std::size_t>(c)];
    model.init = detail::fit_initial_gaussian(set, cfg.fit.cov_floor);
    model.dynamics = fit_dynamics(set, cfg.dynamics_prior, cfg.fit);
    model.policy_lin = fit_policy_linearization(set, cfg.policy_prior, cfg.fit);
    model.mass = uniform_mass
                     ? 1.0 / k
                     : static_cast<double>(counts[static_cast<std::size_t>(c)]) / m;
  });
  return models;
}

/// Hard assignment to argmax_k [log P(k) + log p_k(tau)]; ties go to the
/// lowest index.
inline Assignment e_step(const std::vector<Trajectory>& trajs,
                         const std::vector<ClusterModel>& models,
                         int threads = 1) {
  if (models.empty()) throw std::invalid_argument("e_step: no models");
  const int k = static_cast<int>(models.size());
  const int m = static_cast<int>(trajs.size());
  Assignment a;
  a.n_clusters = k;
  a.labels.assign(static_cast<std::size_t>(m), 0);
  a.scores.resize(m, k);
  a.best_scores.resize(m);
  parallel_for(k, threads, [&](int c) {
    const ClusterModel& model = models[static_cast<std::size_t>(c)];
    const TrajectoryDensity density(model);
    const double log_mass = std::log(model.mass);
    for (int i = 0; i < m; ++i) {
      a.scores(i, c) =
          log_mass + density.log_density(trajs[static_cast<std::size_t>(i)]);
    }
  });
  for (int i = 0; i < m; ++i) {
    int best = 0;
    for (int c = 1; c < k; ++c) {
      if (a.scores(i, c) > a.scores(i, best)) best = c;
    }
    a.labels[static_cast<std::size_t>(i)] = best;
    a.best_scores[i] = a.scores(i, best);
  }
  return a;
}

/// sum_m log P(a_m) + log p_{a_m}(tau_m).
inline double classification_log_likelihood(
    const std::vector<Trajectory>& trajs,
    const std::vector<ClusterModel>& models, const Assignment& assign) {
  double total = 0.0;
  for (int c = 0; c < static_cast<int>(models.size()); ++c) {
    const auto members = assign.members(c);
    if (members.empty()) continue;
    const ClusterModel& model = models[static_cast<std::size_t>(c)];
    const TrajectoryDensity density(model);
    for (int i : members) {
      total += std::log(model.mass) +
               density.log_density(trajs[static_cast<std::size_t>(i)]);
    }
  }
  return total;
}

struct ClusterOptions {
  int max_iters = 20;
  int restarts = 1;
  ClusterFitConfig fit;
};

struct ClusterResult {
  Assignment assignment;
  std::vector<ClusterModel> models;
  std::vector<double> loglik_trace;  // classification log-likelihood per round
  double final_loglik = 0.0;
};

/// Alternates M- and E-steps from a random partition until the assignment
/// stops changing or max_iters rounds have run. With restarts > 1 the run
/// with the highest final classification likelihood is kept.
inline ClusterResult cluster_trajectories(const std::vector<Trajectory>& trajs,
                                          int k, Rng& rng,
                                          const ClusterOptions& opts = {}) {
  const int m = static_cast<int>(trajs.size());
  if (m < k) throw std::invalid_argument("cluster_trajectories: M < K");
  const int min_occ = min_cluster_occupancy(m, k);

  ClusterResult best;
  bool have_best = false;
  for (int restart = 0; restart < std::max(1, opts.restarts); ++restart) {
    ClusterResult run;
    Assignment assign = init_assignments(m, k, rng);
    bool uniform_mass = true;
    std::vector<ClusterModel> models;
    int round = 0;
    bool converged = false;
    while (round < opts.max_iters) {
      ++round;
      models = m_step(trajs, assign, opts.fit, uniform_mass);
      uniform_mass = false;
      Assignment next = e_step(trajs, models, opts.fit.threads);
      enforce_min_occupancy(next, min_occ);
      run.loglik_trace.push_back(
          classification_log_likelihood(trajs, models, next));
      if (next.labels == assign.labels) {
        converged = true;
        assign = std::move(next);
        break;
      }
      assign = std::move(next);
    }
    if (!converged) {
      models = m_step(trajs, assign, opts.fit, false);
    }
    assign.iterations = round;
    assign.converged = converged;
    run.final_loglik = classification_log_likelihood(trajs, models, assign);
    run.assignment = std::move(assign);
    run.models = std::move(models);
    if (!have_best || run.final_loglik > best.final_loglik) {
      best = std::move(run);
      have_best = true;
    }
  }
  return best;
}

}  // namespace rfgps
