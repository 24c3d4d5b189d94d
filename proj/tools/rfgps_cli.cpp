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

// rfgps_cli: train, evaluate and compare policies.
//
//   rfgps_cli train   --config run.ini --out runs/a [--seed 7]
//   rfgps_cli eval    --policy runs/a/policy_final.bin --config run.ini
//                     --episodes 100 [--out eval.csv]
//   rfgps_cli compare --config-a rf.ini --config-b classic.ini [--out cmp]

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "rfgps.hpp"

namespace {

namespace fs = std::filesystem;

void print_progress(const rfgps::IterationRecord& r) {
  std::fprintf(stderr,
               "iter %3d  cost %10.4f  dist %.4f  success %.2f  eps %.4g  "
               "clusters %d  kl %.4g  loss %.4g  %.1fs\n",
               r.iteration, r.mean_cost, r.mean_final_dist, r.success_rate,
               r.epsilon, r.n_clusters_nonempty, r.mean_kl, r.sphase_loss,
               r.wall_clock_s);
}

rfgps::RunConfig load(const std::string& path, const std::uint64_t* seed) {
  rfgps::RunConfig cfg = rfgps::load_config(path);
  if (seed != nullptr) cfg.seed = *seed;
  return cfg;
}

int cmd_train(const std::string& config, const std::string& out,
              const std::uint64_t* seed, bool quiet) {
  const rfgps::RunConfig cfg = load(config, seed);
  const auto rep = rfgps::run_training(
      cfg, out, quiet ? rfgps::ProgressFn{} : rfgps::ProgressFn(print_progress));
  const auto& last = rep.iterations.back();
  std::printf("algorithm=%s iterations=%zu final_success=%.4f final_dist=%.6f\n",
              rfgps::to_string(cfg.algorithm).c_str(), rep.iterations.size(),
              last.success_rate, last.mean_final_dist);
  std::printf("report: %s\n", (fs::path(out) / "report.csv").c_str());
  return 0;
}

int cmd_eval(const std::string& policy_path, const std::string& config,
             int episodes, const std::string& out, const std::uint64_t* seed) {
  const rfgps::RunConfig cfg = load(config, seed);
  const rfgps::GlobalPolicy pol = rfgps::load_policy(policy_path);
  const auto res =
      rfgps::evaluate_policy(pol, cfg.env, episodes, cfg.success_threshold,
                             rfgps::derive_seed(cfg.seed, "cli_eval"), cfg.threads);
  std::printf("episodes=%d mean_final_dist=%.6f std_final_dist=%.6f "
              "success_rate=%.4f mean_cost=%.6f\n",
              episodes, res.mean_final_dist, res.std_final_dist,
              res.success_rate, res.mean_cost);
  std::ofstream os(out);
  if (!os) throw std::runtime_error("cannot write " + out);
  os << "episode,final_dist,success\n";
  for (std::size_t i = 0; i < res.final_dists.size(); ++i) {
    os << i << ',' << rfgps::detail::fmt_num(res.final_dists[i]) << ','
       << (res.final_dists[i] < cfg.success_threshold ? 1 : 0) << '\n';
  }
  return 0;
}

int cmd_compare(const std::string& config_a, const std::string& config_b,
                const std::string& out, const std::uint64_t* seed, bool quiet) {
  fs::create_directories(out);
  struct Run {
    std::string label;
    rfgps::RunConfig cfg;
    rfgps::TrainingReport rep;
  };
  std::vector<Run> runs{{"a", load(config_a, seed), {}},
                        {"b", load(config_b, seed), {}}};
  for (auto& r : runs) {
    if (!quiet) std::fprintf(stderr, "== run %s (%s)\n", r.label.c_str(),
                             rfgps::to_string(r.cfg.algorithm).c_str());
    r.rep = rfgps::run_training(
        r.cfg, (fs::path(out) / r.label).string(),
        quiet ? rfgps::ProgressFn{} : rfgps::ProgressFn(print_progress));
  }
  const std::string path = (fs::path(out) / "compare.csv").string();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "run,algorithm,iteration,episodes,mean_cost,mean_final_dist,success_rate\n";
  for (const auto& r : runs) {
    for (const auto& it : r.rep.iterations) {
      os << r.label << ',' << rfgps::to_string(r.cfg.algorithm) << ','
         << it.iteration << ',' << it.episodes << ','
         << rfgps::detail::fmt_num(it.mean_cost) << ','
         << rfgps::detail::fmt_num(it.mean_final_dist) << ','
         << rfgps::detail::fmt_num(it.success_rate) << '\n';
    }
    const auto& last = r.rep.iterations.back();
    std::printf("%s algorithm=%s final_success=%.4f final_dist=%.6f\n",
                r.label.c_str(), rfgps::to_string(r.cfg.algorithm).c_str(),
                last.success_rate, last.mean_final_dist);
  }
  std::printf("curves: %s\n", path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reset-free guided policy search on toy reaching tasks"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train a policy");
  train->add_option("--config", config, "Run configuration (INI)")->required();
  train->add_option("--out", out, "Output directory")->required();
  auto* train_seed = train->add_option("--seed", seed, "Override the master seed");
  train->add_flag("--quiet", quiet, "No per-iteration progress");

  std::string policy;
  std::string eval_config;
  std::string eval_out = "eval.csv";
  int episodes = 100;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a saved policy");
  eval->add_option("--policy", policy, "Policy checkpoint")->required();
  eval->add_option("--config", eval_config, "Run configuration (INI)")->required();
  eval->add_option("--episodes", episodes, "Evaluation episodes")
      ->check(CLI::PositiveNumber);
  eval->add_option("--out", eval_out, "Per-episode CSV");
  auto* eval_seed_opt = eval->add_option("--seed", eval_seed, "Override the seed");

  std::string config_a;
  std::string config_b;
  std::string cmp_out = "compare";
  std::uint64_t cmp_seed = 0;
  bool cmp_quiet = false;
  auto* compare = app.add_subcommand("compare", "Train two configs, merge curves");
  compare->add_option("--config-a", config_a, "First configuration")->required();
  compare->add_option("--config-b", config_b, "Second configuration")->required();
  compare->add_option("--out", cmp_out, "Output directory");
  auto* cmp_seed_opt = compare->add_option("--seed", cmp_seed, "Override both seeds");
  compare->add_flag("--quiet", cmp_quiet, "No per-iteration progress");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      return cmd_train(config, out, *train_seed ? &seed : nullptr, quiet);
    }
    if (*eval) {
      return cmd_eval(policy, eval_config, episodes, eval_out,
                      *eval_seed_opt ? &eval_seed : nullptr);
    }
    if (*compare) {
      return cmd_compare(config_a, config_b, cmp_out,
                         *cmp_seed_opt ? &cmp_seed : nullptr, cmp_quiet);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
