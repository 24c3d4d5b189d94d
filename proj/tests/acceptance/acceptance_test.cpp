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

// Acceptance suite: one PASS/FAIL line per criterion, with its runtime
// budget. Exit status is non-zero if any criterion fails.
//
// Each check compares the library against an oracle that lives in the test
// tree (tests/oracles.hpp) or against the CLI's own output files.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "rfgps.hpp"

namespace {

namespace fs = std::filesystem;
using rfgps::Mat;
using rfgps::Rng;
using rfgps::Vec;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double max_abs(const Mat& m) { return m.cwiseAbs().maxCoeff(); }

double rel(const Mat& a, const Mat& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

// ---------------------------------------------------------------------------

Outcome riccati_equivalence() {
  Rng rng(101);
  const int dx = 2, du = 1, horizon = 10;
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto sys = oracle::random_system(dx, du, horizon, rng);
    auto dyn = oracle::to_dynamics(sys, Mat::Zero(dx, dx));
    for (auto& c : dyn.cov) c = oracle::random_spd(dx, rng, 0.01, 0.1);
    const auto cost = oracle::random_cost(dx, du, horizon, rng);
    const auto pbar = oracle::random_policy(dx, du, horizon, rng);
    const auto b = oracle::blocks_of(cost);
    const auto lqr = oracle::riccati(sys.fx, sys.fu, sys.fc, b.Q, b.N, b.R, b.q, b.r);
    const auto bp = rfgps::kl_backward_pass(dyn, cost, pbar, 1e-12);
    for (std::size_t t = 0; t < static_cast<std::size_t>(horizon); ++t) {
      worst = std::max(worst, max_abs(bp.policy.K[t] - lqr.K[t]));
      worst = std::max(worst, max_abs(bp.policy.k[t] - lqr.k[t]));
    }
  }
  return {worst <= 1e-8, fmt("10 systems, max |gain error| = %.2e (limit 1e-8)", worst)};
}

Outcome kl_constraint() {
  Rng rng(102);
  int active = 0;
  int inside = 0;
  double lo = 1e300;
  double hi = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int dx = 2 + trial % 3;
    const int du = 1 + trial % 2;
    const int horizon = 5 + trial % 6;
    const auto sys = oracle::random_system(dx, du, horizon, rng);
    auto dyn = oracle::to_dynamics(sys, Mat::Zero(dx, dx));
    for (auto& c : dyn.cov) c = oracle::random_spd(dx, rng, 0.01, 0.1);
    const auto cost = oracle::random_cost(dx, du, horizon, rng);
    const auto pbar = oracle::random_policy(dx, du, horizon, rng);
    const rfgps::Gaussian init{oracle::random_vector(dx, rng),
                               oracle::random_spd(dx, rng, 0.05, 0.3)};
    // Budgets well below the unconstrained optimum's KL keep the
    // constraint active.
    const double eps = std::pow(10.0, -2.0 + 2.0 * (trial % 10) / 9.0);
    const auto res = rfgps::solve_local_policy(dyn, cost, pbar, init, eps);
    if (!res.ok || !res.constraint_active) continue;
    ++active;
    // The reported KL is recomputed from the returned policy.
    const double kl = rfgps::policy_kl(res.policy, pbar,
                                       rfgps::compute_marginals(init, dyn, res.policy))
                          .total;
    const double ratio = kl / eps;
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
    if (ratio >= 0.9 && ratio <= 1.001) ++inside;
  }
  return {active == 100 && inside == 100,
          fmt("%d/100 active, %d in band, KL/eps in [%.4f, %.4f]", active, inside,
              lo, hi)};
}

// Relative error of the stacked map [f_x f_u f_c] at one step.
double stacked_rel(const rfgps::LinearGaussianDynamics& d,
                   const oracle::RandomLinearSystem& s, std::size_t t) {
  const Eigen::Index dx = s.fx[t].rows();
  const Eigen::Index n = dx + s.fu[t].cols() + 1;
  Mat fit(dx, n);
  Mat truth(dx, n);
  fit << d.fx[t], d.fu[t], d.fc[t];
  truth << s.fx[t], s.fu[t], s.fc[t];
  return rel(fit, truth);
}

// Worst per-block relative error over all steps.
double block_rel(const rfgps::LinearGaussianDynamics& d,
                 const oracle::RandomLinearSystem& s) {
  double worst = 0.0;
  for (std::size_t t = 0; t < s.fx.size(); ++t) {
    worst = std::max({worst, rel(d.fx[t], s.fx[t]), rel(d.fu[t], s.fu[t]),
                      rel(d.fc[t], s.fc[t])});
  }
  return worst;
}

Outcome system_identification() {
  Rng rng(103);
  const int dx = 3, du = 2, horizon = 8;
  rfgps::FitOptions tight;
  tight.ridge_scale = 1e-12;
  const auto sys = oracle::random_system(dx, du, horizon, rng);
  const auto clean = oracle::simulate_system(sys, 2 * (dx + du + 1), 0.0, rng);
  const auto d0 = rfgps::fit_dynamics(rfgps::SampleSet::all_of(clean), nullptr, tight);
  double exact = 0.0;
  for (std::size_t t = 0; t < static_cast<std::size_t>(horizon); ++t) {
    exact = std::max({exact, max_abs(d0.fx[t] - sys.fx[t]),
                      max_abs(d0.fu[t] - sys.fu[t]), max_abs(d0.fc[t] - sys.fc[t])});
  }
  // Noisy data on the same system. Its offsets are small (norm ~0.1), so the
  // offset block alone is dominated by the estimator's fixed absolute error;
  // the whole map is judged instead, and each block separately on a system
  // whose offsets have the scale of its gains.
  const auto noisy = oracle::simulate_system(sys, 50, 0.01, rng);
  const auto d1 = rfgps::fit_dynamics(rfgps::SampleSet::all_of(noisy));
  double stacked = 0.0;
  for (std::size_t t = 0; t < static_cast<std::size_t>(horizon); ++t) {
    stacked = std::max(stacked, stacked_rel(d1, sys, t));
  }
  const double small_offsets = block_rel(d1, sys);
  const auto sys2 = oracle::random_system(dx, du, horizon, rng, true, 1.0);
  const auto noisy2 = oracle::simulate_system(sys2, 50, 0.01, rng);
  const double blocks =
      block_rel(rfgps::fit_dynamics(rfgps::SampleSet::all_of(noisy2)), sys2);
  return {exact <= 1e-6 && stacked <= 0.05 && blocks <= 0.05,
          fmt("noise-free max error %.2e (limit 1e-6); sigma=0.01, 50 trajectories: "
              "stacked map %.2f%%, per block %.2f%% (limit 5%%); per block with "
              "offsets of norm ~0.1: %.2f%%",
              exact, 100.0 * stacked, 100.0 * blocks, 100.0 * small_offsets)};
}

Outcome clustering() {
  Rng rng(104);
  int perfect = 0;
  int monotone = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto data = oracle::two_system_data(20, 2, 1, 5, 0.05, rng);
    const auto r = oracle::cluster_on_policy(data.trajs, 2, rng);
    if (oracle::adjusted_rand_index(r.assignment.labels, data.labels) == 1.0) {
      ++perfect;
    }
    bool ok = true;
    for (std::size_t i = 1; i < r.loglik_trace.size(); ++i) {
      ok = ok && r.loglik_trace[i] >= r.loglik_trace[i - 1] - 1e-6;
    }
    monotone += ok ? 1 : 0;
  }
  return {perfect >= 95 && monotone == 100,
          fmt("ARI = 1 in %d/100 trials (need 95); likelihood monotone in %d/100",
              perfect, monotone)};
}

Outcome step_size_rule() {
  Rng rng(105);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int bad = 0;
  for (int i = 0; i < 10000; ++i) {
    rfgps::StepState s;
    s.eps_min = 1e-3 * (1.0 + u(rng));
    s.eps_max = 10.0 * (1.0 + u(rng));
    s.epsilon = s.eps_min + (s.eps_max - s.eps_min) * u(rng);
    const double expected = std::exp(8.0 * u(rng) - 4.0);
    // Half the predicted improvement keeps the budget.
    if (rfgps::adjust_step_size(s, expected / 2.0, expected).epsilon != s.epsilon) {
      ++bad;
    }
    // No improvement halves it, up to the lower clamp.
    const double half = std::max(s.epsilon / 2.0, s.eps_min);
    if (rfgps::adjust_step_size(s, 0.0, expected).epsilon != half) ++bad;
    // Arbitrary outcomes stay inside the bounds.
    const double actual = expected * (6.0 * u(rng) - 3.0);
    const double e = rfgps::adjust_step_size(s, actual, expected).epsilon;
    if (!(e >= s.eps_min && e <= s.eps_max)) ++bad;
  }
  return {bad == 0, fmt("30000 checks, %d violations", bad)};
}

Outcome sphase_gradient() {
  Rng rng(106);
  double worst = 0.0;
  for (int net = 0; net < 20; ++net) {
    const int dx = 2 + net % 4;
    const int du = 1 + net % 3;
    auto pol = rfgps::GlobalPolicy::random({dx, 8, 6, du}, rng);
    pol.weights.back() *= 10.0;
    rfgps::SupervisionSet sup;
    const int n = 24;
    sup.states = oracle::random_matrix(dx, n, rng);
    sup.targets = oracle::random_matrix(du, n, rng);
    for (int i = 0; i < n; ++i) sup.precisions.push_back(oracle::random_spd(du, rng, 0.2));
    std::vector<int> idx;
    for (int i = 0; i < n; i += 1 + net % 2) idx.push_back(i);
    Vec g;
    rfgps::weighted_loss(pol, sup, idx, &g);
    const Vec theta = pol.params();
    Vec fd(theta.size());
    rfgps::GlobalPolicy work = pol;
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Vec tp = theta;
      tp[i] += h;
      work.set_params(tp);
      const double lp = rfgps::weighted_loss(work, sup, idx);
      tp[i] -= 2.0 * h;
      work.set_params(tp);
      const double lm = rfgps::weighted_loss(work, sup, idx);
      fd[i] = (lp - lm) / (2.0 * h);
    }
    worst = std::max(worst, (g - fd).norm() / fd.norm());
  }
  return {worst <= 1e-4,
          fmt("20 networks, max relative gradient error %.2e (limit 1e-4)", worst)};
}

Outcome closed_form_vs_sampling() {
  int cost_ok = 0;
  int kl_ok = 0;
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto c = oracle::mc_expected_cost(2000 + static_cast<std::uint64_t>(i), 200000);
    const auto k = oracle::mc_policy_kl(3000 + static_cast<std::uint64_t>(i), 200000);
    cost_ok += c.within(3.0) ? 1 : 0;
    kl_ok += k.within(3.0) ? 1 : 0;
    worst = std::max({worst, std::abs(c.closed - c.mc) / c.se,
                      std::abs(k.closed - k.mc) / k.se});
  }
  return {cost_ok == 20 && kl_ok == 20,
          fmt("2e5 samples each: cost %d/20, KL %d/20 within 3 SE (worst %.2f SE)",
              cost_ok, kl_ok, worst)};
}

// ---------------------------------------------------------------------------
// Learning criteria run the shipped configs.

std::string config_path(const std::string& name) {
  return (fs::path(RFGPS_CONFIG_DIR) / name).string();
}

Outcome end_to_end() {
  rfgps::RunConfig cfg = rfgps::load_config(config_path("reacher_reset_free.ini"));
  int solved = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    cfg.seed = seed;
    const auto rep = rfgps::run_reset_free(cfg);
    int first = 0;
    double best = 0.0;
    for (const auto& r : rep.iterations) {
      best = std::max(best, r.success_rate);
      if (first == 0 && r.success_rate >= 0.9) first = r.iteration;
    }
    solved += first > 0 ? 1 : 0;
    per_seed += first > 0 ? fmt(" s%d:iter %d (%d eps)", static_cast<int>(seed), first,
                                first * cfg.samples)
                          : fmt(" s%d:best %.2f", static_cast<int>(seed), best);
  }
  return {solved >= 4, fmt("%d/5 seeds reach 90%% success;%s", solved, per_seed.c_str())};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RFGPS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome compare_harness() {
  const fs::path out = fs::temp_directory_path() / "rfgps_acceptance_compare";
  fs::remove_all(out);
  const int rc = run_cli("compare --quiet --config-a " +
                         config_path("reacher_fixed_reset_free.ini") + " --config-b " +
                         config_path("reacher_fixed_classic.ini") + " --out " +
                         out.string());
  if (rc != 0) return {false, fmt("compare exited with status %d", rc)};
  const rfgps::RunConfig classic =
      rfgps::load_config(config_path("reacher_fixed_classic.ini"));
  const auto n_cond = rfgps::classic_conditions(classic).size();
  std::ifstream in(out / "compare.csv");
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::vector<double>> success;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::vector<std::string> f;
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) return {false, "malformed compare.csv row: " + line};
    success[f[1]].push_back(std::stod(f[6]));
  }
  const auto& rf = success["reset_free"];
  const auto& cl = success["classic_mdgps"];
  const bool curves = rf.size() == 20 && cl.size() == 20;
  const bool ok = curves && n_cond == 4 && rf.back() >= 0.8 && cl.back() >= 0.8;
  fs::remove_all(out);
  return {ok, fmt("%zu corner conditions; final success reset-free %.2f, classic %.2f "
                  "(need 0.80); curve lengths %zu/%zu",
                  n_cond, rf.empty() ? 0.0 : rf.back(), cl.empty() ? 0.0 : cl.back(),
                  rf.size(), cl.size())};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "rfgps_acceptance_det";
  fs::remove_all(root);
  int same = 0;
  std::string detail;
  for (const std::string name : {"reacher_reset_free.ini", "reacher_classic.ini"}) {
    std::string reports[2];
    for (int k = 0; k < 2; ++k) {
      const fs::path dir = root / (name + std::to_string(k));
      const int rc = run_cli("train --quiet --seed 42 --config " + config_path(name) +
                             " --out " + dir.string());
      if (rc != 0) return {false, name + ": train exited with status " + std::to_string(rc)};
      reports[k] = slurp(dir / "report.csv");
    }
    const bool eq = !reports[0].empty() && reports[0] == reports[1];
    same += eq ? 1 : 0;
    detail += fmt(" %s:%s", name.c_str(), eq ? "identical" : "DIFFERENT");
  }
  fs::remove_all(root);
  return {same == 2, "repeated seed-42 runs, report.csv" + detail};
}

struct Criterion {
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"riccati_oracle_equivalence", 1.0, riccati_equivalence},
      {"kl_constraint_satisfaction", 30.0, kl_constraint},
      {"system_identification_recovery", 10.0, system_identification},
      {"clustering_correctness", 60.0, clustering},
      {"step_size_rule", 1.0, step_size_rule},
      {"sphase_gradient_check", 10.0, sphase_gradient},
      {"closed_form_vs_monte_carlo", 60.0, closed_form_vs_sampling},
      {"end_to_end_reacher", 600.0, end_to_end},
      {"reset_free_vs_classic_compare", 1200.0, compare_harness},
      {"report_determinism", 600.0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::printf("%s %-32s %8.2fs (budget %gs%s)  %s\n", pass ? "PASS" : "FAIL", c.name,
                secs, c.budget_s, in_time ? "" : ", EXCEEDED", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed\n", criteria.size(), failed);
  return failed == 0 ? 0 : 1;
}
