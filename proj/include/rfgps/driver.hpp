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

// Outer training loops and policy evaluation.
//
// One iteration: sample with the global policy, fit cluster (or condition)
// models, adapt the KL budget, solve local policies, distill them into the
// global policy, evaluate. Seeds for every random stream are derived from
// the master seed by label, so runs are reproducible for any thread count.

#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "rfgps/common.hpp"
#include "rfgps/config.hpp"
#include "rfgps/cphase.hpp"
#include "rfgps/dyn_fit.hpp"
#include "rfgps/env.hpp"
#include "rfgps/gmm.hpp"
#include "rfgps/sphase.hpp"
#include "rfgps/traj_cluster.hpp"

namespace rfgps {

struct EvalResult {
  double mean_final_dist = 0.0;
  double std_final_dist = 0.0;
  double success_rate = 0.0;
  double mean_cost = 0.0;
  std::vector<double> final_dists;
};

/// Rollouts of the deterministic policy mean under the configured process
/// noise and initial-state distribution.
inline EvalResult evaluate_policy(const GlobalPolicy& pol, const EnvSpec& spec,
                                  int n_episodes, double success_threshold,
                                  std::uint64_t seed, int threads = 1) {
  if (n_episodes < 1) throw std::invalid_argument("evaluate_policy: n_episodes < 1");
  EvalResult r;
  r.final_dists.assign(static_cast<std::size_t>(n_episodes), 0.0);
  std::vector<double> costs(static_cast<std::size_t>(n_episodes), 0.0);
  auto mean_policy = [&pol](const Vec& x, int, Rng&) { return pol.forward(x); };
  parallel_for(n_episodes, threads, [&](int e) {
    const Trajectory tau =
        rollout(spec, mean_policy, derive_seed(seed, "episode", e));
    const auto es = static_cast<std::size_t>(e);
    r.final_dists[es] =
        distance_to_target(spec, tau.states.row(tau.horizon()).transpose());
    costs[es] = tau.total_cost();
  });
  int hits = 0;
  double sum = 0.0;
  double sq = 0.0;
  for (double d : r.final_dists) {
    sum += d;
    sq += d * d;
    if (d < success_threshold) ++hits;
  }
  const double n = n_episodes;
  r.mean_final_dist = sum / n;
  r.std_final_dist = std::sqrt(std::max(0.0, sq / n - r.mean_final_dist * r.mean_final_dist));
  r.success_rate = hits / n;
  for (double c : costs) r.mean_cost += c / n;
  return r;
}

struct IterationRecord {
  int iteration = 0;
  double mean_cost = 0.0;  // over this iteration's training samples
  double std_cost = 0.0;
  double mean_final_dist = 0.0;  // evaluation of the updated policy
  double success_rate = 0.0;
  double epsilon = 0.0;  // budget used by this iteration's C-phase
  int n_clusters_nonempty = 0;
  int em_rounds = 0;
  double mean_kl = 0.0;
  double expected_improvement = 0.0;
  double actual_improvement = std::numeric_limits<double>::quiet_NaN();
  double sphase_loss = 0.0;
  double wall_clock_s = 0.0;
  std::vector<int> cluster_sizes;
  int failed_local_solves = 0;
  int episodes = 0;  // training rollouts so far
};

struct TrainingReport {
  Algorithm algorithm = Algorithm::kResetFree;
  std::vector<IterationRecord> iterations;
  std::vector<std::string> checkpoints;
  GlobalPolicy policy;
};

using ProgressFn = std::function<void(const IterationRecord&)>;

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

inline std::string fmt_num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline FitOptions fit_options(const RunConfig& cfg, const GlobalPolicy& pol) {
  FitOptions f;
  f.cov_floor = cfg.cov_floor;
  f.ridge_scale = cfg.ridge_scale;
  f.prior_strength = cfg.prior_strength;
  f.policy_targets_are_means = true;
  f.policy_noise_cov = pol.covariance();
  return f;
}

// Pools tuples of a set of trajectories into a GMM prior, or returns
// nothing when disabled or when there is too little data.
inline std::optional<GmmPrior> fit_prior(const Mat& tuples, const RunConfig& cfg,
                                         Rng& rng) {
  if (tuples.rows() < 2 * cfg.prior_components) return std::nullopt;
  GmmOptions o;
  o.cov_floor = cfg.cov_floor;
  return fit_gmm_prior(tuples, cfg.prior_components, rng, o);
}

struct LocalProblem {
  const ClusterModel* model = nullptr;
  QuadCostTerm cost;
  Gaussian init;
};

// Per sample: cost expanded around the sample, initial state at its own x_1
// with the cluster's initial covariance.
inline std::vector<LocalProblem> sample_problems(
    const std::vector<Trajectory>& trajs, const Assignment& assign,
    const std::vector<ClusterModel>& models, const EnvSpec& env) {
  std::vector<LocalProblem> out(trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const ClusterModel& model = models.at(static_cast<std::size_t>(assign.labels[i]));
    out[i].model = &model;
    out[i].cost = quadratize_around_sample(env, trajs[i]);
    out[i].init = Gaussian{trajs[i].states.row(0).transpose(), model.init.cov};
  }
  return out;
}

inline std::vector<LocalProblem> condition_problems(
    const std::vector<Trajectory>& trajs, const Assignment& assign,
    const std::vector<ClusterModel>& models, const EnvSpec& env) {
  std::vector<LocalProblem> out(static_cast<std::size_t>(assign.n_clusters));
  for (int c = 0; c < assign.n_clusters; ++c) {
    std::vector<QuadCostTerm> terms;
    for (int i : assign.members(c)) {
      terms.push_back(quadratize_around_sample(env, trajs[static_cast<std::size_t>(i)]));
    }
    auto& pr = out[static_cast<std::size_t>(c)];
    pr.model = &models.at(static_cast<std::size_t>(c));
    pr.cost = average_cost_terms(terms);
    pr.init = pr.model->init;
  }
  return out;
}

// Mean over problems of the expected cost of the global policy's
// linearization under the fitted model.
inline double mean_global_cost(const std::vector<LocalProblem>& problems,
                               int threads) {
  std::vector<double> v(problems.size(), 0.0);
  parallel_for(static_cast<int>(problems.size()), threads, [&](int j) {
    const auto& pr = problems[static_cast<std::size_t>(j)];
    v[static_cast<std::size_t>(j)] = expected_quadratic_cost(
        compute_marginals(pr.init, pr.model->dynamics, pr.model->policy_lin),
        pr.cost);
  });
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

/// Writes report.csv rows. Wall-clock values are written only when asked so
/// repeated runs produce identical files.
inline void write_report_csv(const TrainingReport& rep, const std::string& path,
                             bool include_wall_clock) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "iteration,mean_cost,std_cost,mean_final_dist,success_rate,epsilon,"
        "n_clusters_nonempty,em_rounds,mean_kl,expected_improvement,"
        "actual_improvement,sphase_loss,wall_clock_s\n";
  using detail::fmt_num;
  for (const auto& r : rep.iterations) {
    os << r.iteration << ',' << fmt_num(r.mean_cost) << ',' << fmt_num(r.std_cost)
       << ',' << fmt_num(r.mean_final_dist) << ',' << fmt_num(r.success_rate)
       << ',' << fmt_num(r.epsilon) << ',' << r.n_clusters_nonempty << ','
       << r.em_rounds << ',' << fmt_num(r.mean_kl) << ','
       << fmt_num(r.expected_improvement) << ','
       << fmt_num(r.actual_improvement) << ',' << fmt_num(r.sphase_loss) << ','
       << fmt_num(include_wall_clock ? r.wall_clock_s : 0.0) << '\n';
  }
}

inline void write_timing_csv(const TrainingReport& rep, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "iteration,wall_clock_s\n";
  for (const auto& r : rep.iterations) {
    os << r.iteration << ',' << detail::fmt_num(r.wall_clock_s) << '\n';
  }
}

/// Runs the configured algorithm. With a non-empty `out_dir` the config
/// echo, a checkpoint per iteration, the final policy, report.csv and
/// timing.csv are written there.
inline TrainingReport run_training(const RunConfig& cfg,
                                   const std::string& out_dir = "",
                                   const ProgressFn& progress = {}) {
  cfg.validate();
  namespace fs = std::filesystem;
  const EnvSpec& env = cfg.env;
  const bool classic = cfg.algorithm == Algorithm::kClassicMdgps;
  const std::vector<Vec> conditions =
      classic ? classic_conditions(cfg) : std::vector<Vec>{};
  if (classic && conditions.empty()) {
    throw ConfigError("classic mode needs at least one initial state");
  }
  for (const Vec& x : conditions) require_dim(x.size(), env.state_dim(), "condition");

  if (!out_dir.empty()) {
    fs::create_directories(fs::path(out_dir) / "checkpoints");
    std::ofstream(fs::path(out_dir) / "config.ini") << to_ini(cfg);
  }

  TrainingReport rep;
  rep.algorithm = cfg.algorithm;
  std::vector<int> sizes{env.state_dim()};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(env.action_dim());
  Rng init_rng(derive_seed(cfg.seed, "policy_init"));
  GlobalPolicy policy = GlobalPolicy::random(sizes, init_rng, cfg.init_policy_var);

  StepState step;
  step.epsilon = cfg.epsilon0;
  step.eps_min = cfg.eps_min;
  step.eps_max = cfg.eps_max;

  std::vector<Trajectory> prior_pool;
  int episodes = 0;

  for (int it = 1; it <= cfg.iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    IterationRecord rec;
    rec.iteration = it;

    // Sampling with the stochastic global policy.
    const int n_cond = static_cast<int>(conditions.size());
    const int m = classic ? n_cond * cfg.samples_per_condition : cfg.samples;
    std::vector<Trajectory> trajs(static_cast<std::size_t>(m));
    auto sampler = [&policy](const Vec& x, int, Rng& rng) {
      return policy.sample(x, rng);
    };
    parallel_for(m, cfg.threads, [&](int i) {
      const std::uint64_t s =
          derive_seed(derive_seed(cfg.seed, "sample", it), "rollout", i);
      trajs[static_cast<std::size_t>(i)] =
          classic ? rollout_from(env,
                                 conditions[static_cast<std::size_t>(
                                     i / cfg.samples_per_condition)],
                                 sampler, s)
                  : rollout(env, sampler, s);
    });
    episodes += m;
    std::vector<double> costs;
    for (const auto& t : trajs) costs.push_back(t.total_cost());
    std::tie(rec.mean_cost, rec.std_cost) = detail::mean_std(costs);

    // Priors over pooled tuples.
    if (cfg.prior_accumulate) {
      prior_pool.insert(prior_pool.end(), trajs.begin(), trajs.end());
    } else {
      prior_pool = trajs;
    }
    Rng prior_rng(derive_seed(cfg.seed, "prior", it));
    std::optional<GmmPrior> dyn_prior;
    std::optional<GmmPrior> pol_prior;
    const SampleSet pooled = SampleSet::all_of(prior_pool);
    if (cfg.use_prior(cfg.dynamics_prior)) {
      dyn_prior = detail::fit_prior(pooled.pooled_dynamics_tuples(), cfg, prior_rng);
    }
    if (cfg.use_prior(cfg.policy_prior)) {
      pol_prior = detail::fit_prior(pooled.pooled_policy_tuples(true), cfg, prior_rng);
    }
    ClusterFitConfig fit;
    fit.fit = detail::fit_options(cfg, policy);
    fit.dynamics_prior = dyn_prior ? &*dyn_prior : nullptr;
    fit.policy_prior = pol_prior ? &*pol_prior : nullptr;
    fit.threads = cfg.threads;

    // Cluster (reset-free) or group by condition (classic).
    Assignment assign;
    std::vector<ClusterModel> models;
    if (classic) {
      assign.n_clusters = n_cond;
      for (int i = 0; i < m; ++i) assign.labels.push_back(i / cfg.samples_per_condition);
      models = m_step(trajs, assign, fit, false);
    } else {
      ClusterOptions copts;
      copts.max_iters = cfg.em_max_iters;
      copts.restarts = cfg.em_restarts;
      copts.fit = fit;
      Rng cluster_rng(derive_seed(cfg.seed, "cluster", it));
      ClusterResult cr = cluster_trajectories(trajs, cfg.clusters, cluster_rng, copts);
      assign = std::move(cr.assignment);
      models = std::move(cr.models);
      rec.em_rounds = assign.iterations;
    }
    rec.cluster_sizes = assign.counts();
    for (int c : rec.cluster_sizes) rec.n_clusters_nonempty += c > 0 ? 1 : 0;

    // One local problem per sample, or per condition with the cost expansion
    // averaged over that condition's samples.
    const std::vector<detail::LocalProblem> problems =
        classic ? detail::condition_problems(trajs, assign, models, env)
                : detail::sample_problems(trajs, assign, models, env);

    // Step size: realized change of the global policy's cost against the
    // improvement predicted last iteration.
    const double global_cost =
        cfg.improvement_estimate == ImprovementEstimate::kSampled
            ? rec.mean_cost
            : detail::mean_global_cost(problems, cfg.threads);
    if (step.prev_global_cost && step.prev_expected_improvement) {
      rec.actual_improvement = *step.prev_global_cost - global_cost;
      step = adjust_step_size(step, rec.actual_improvement,
                              *step.prev_expected_improvement);
    }
    rec.epsilon = step.epsilon;

    // C-phase.
    std::vector<LocalPolicyResult> solved(problems.size());
    parallel_for(static_cast<int>(problems.size()), cfg.threads, [&](int j) {
      const auto& pr = problems[static_cast<std::size_t>(j)];
      auto& r = solved[static_cast<std::size_t>(j)];
      try {
        r = solve_local_policy(pr.model->dynamics, pr.cost, pr.model->policy_lin,
                               pr.init, step.epsilon);
      } catch (const std::exception& e) {
        r = LocalPolicyResult{};
        r.ok = false;
        r.error = e.what();
      }
    });
    int ok = 0;
    for (const auto& r : solved) {
      if (!r.ok) {
        ++rec.failed_local_solves;
        continue;
      }
      ++ok;
      rec.mean_kl += r.kl_total;
      rec.expected_improvement += r.expected_improvement;
    }
    if (2 * rec.failed_local_solves > static_cast<int>(solved.size())) {
      throw NumericalError("C-phase: " + std::to_string(rec.failed_local_solves) +
                           " of " + std::to_string(solved.size()) +
                           " local solves failed");
    }
    rec.mean_kl /= ok;
    rec.expected_improvement /= ok;
    std::vector<LocalPolicyResult> locals;
    locals.reserve(trajs.size());
    for (int i = 0; i < m; ++i) {
      locals.push_back(
          solved[static_cast<std::size_t>(classic ? assign.labels[static_cast<std::size_t>(i)] : i)]);
    }

    // S-phase.
    const SupervisionSet sup = build_supervision(trajs, locals);
    Rng sphase_rng(derive_seed(cfg.seed, "sphase", it));
    TrainResult tr = train_supervised(policy, sup, cfg.train, sphase_rng);
    policy = std::move(tr.policy);
    rec.sphase_loss = tr.final_loss;

    step.prev_global_cost = global_cost;
    step.prev_expected_improvement = rec.expected_improvement;

    const EvalResult ev =
        evaluate_policy(policy, env, cfg.eval_episodes, cfg.success_threshold,
                        derive_seed(cfg.seed, "eval", it), cfg.threads);
    rec.mean_final_dist = ev.mean_final_dist;
    rec.success_rate = ev.success_rate;
    rec.episodes = episodes;

    if (!out_dir.empty()) {
      char name[64];
      std::snprintf(name, sizeof name, "policy_iter_%03d.bin", it);
      const std::string path = (fs::path(out_dir) / "checkpoints" / name).string();
      save_policy(policy, path);
      rep.checkpoints.push_back(path);
    }
    rec.wall_clock_s = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
    rep.iterations.push_back(rec);
    if (progress) progress(rec);
  }
  rep.policy = policy;

  if (!out_dir.empty()) {
    save_policy(policy, (fs::path(out_dir) / "policy_final.bin").string());
    write_report_csv(rep, (fs::path(out_dir) / "report.csv").string(),
                     cfg.report_wall_clock);
    write_timing_csv(rep, (fs::path(out_dir) / "timing.csv").string());
  }
  return rep;
}

inline TrainingReport run_reset_free(const RunConfig& cfg,
                                     const std::string& out_dir = "",
                                     const ProgressFn& progress = {}) {
  if (cfg.algorithm != Algorithm::kResetFree) {
    throw ConfigError("run_reset_free: algorithm must be reset_free");
  }
  return run_training(cfg, out_dir, progress);
}

inline TrainingReport run_classic_mdgps(const RunConfig& cfg,
                                        const std::string& out_dir = "",
                                        const ProgressFn& progress = {}) {
  if (cfg.algorithm != Algorithm::kClassicMdgps) {
    throw ConfigError("run_classic_mdgps: algorithm must be classic_mdgps");
  }
  return run_training(cfg, out_dir, progress);
}

}  // namespace rfgps
