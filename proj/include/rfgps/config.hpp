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

// Run configuration and its INI file format.
//
//   [env]        kind, pos_dim, horizon, dt, process_noise_std, init_dist,
//                init_low/init_high (uniform_box) or init_mean/init_std
//                (gaussian), target_mode, fixed_target, target_low,
//                target_high, action_cost_weight, action_bound,
//                arm_link_lengths, arm_link_masses, arm_damping
//   [algorithm]  mode, iterations, samples, clusters, em_max_iters,
//                em_restarts, conditions, samples_per_condition
//   [step]       epsilon0, eps_min, eps_max, improvement_estimate
//   [prior]      dynamics, policy, components, strength, accumulate
//   [fit]        cov_floor, ridge_scale
//   [policy]     hidden, init_var, epochs, batch_size, learning_rate
//   [eval]       episodes, success_threshold
//   [run]        seed, threads, report_wall_clock
//
// Lists are whitespace or comma separated. `conditions` is either
// "corners" or explicit full initial states separated by ';'. Unknown
// sections or keys are errors.

#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rfgps/common.hpp"
#include "rfgps/env.hpp"
#include "rfgps/sphase.hpp"

namespace rfgps {

enum class Algorithm { kResetFree, kClassicMdgps };
enum class PriorMode { kOff, kOn, kAuto };
// Estimator of the realized improvement fed to the step-size rule: change
// in mean sampled cost, or change in the global policy's expected cost
// under the fitted models.
enum class ImprovementEstimate { kSampled, kModel };

inline std::string to_string(Algorithm a) {
  return a == Algorithm::kResetFree ? "reset_free" : "classic_mdgps";
}
inline std::string to_string(ImprovementEstimate e) {
  return e == ImprovementEstimate::kSampled ? "sampled" : "model";
}
inline std::string to_string(PriorMode p) {
  switch (p) {
    case PriorMode::kOff: return "off";
    case PriorMode::kOn: return "on";
    default: return "auto";
  }
}

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  EnvSpec env;
  Algorithm algorithm = Algorithm::kResetFree;
  int iterations = 20;
  int samples = 30;  // M, reset-free
  int clusters = 6;  // K
  int em_max_iters = 20;
  int em_restarts = 1;
  bool corner_conditions = true;    // classic: derive conditions from the
  std::vector<Vec> initial_states;  // support corners unless listed
  int samples_per_condition = 5;    // N, classic

  double epsilon0 = 1.0;
  double eps_min = 1e-4;
  double eps_max = 10.0;
  ImprovementEstimate improvement_estimate = ImprovementEstimate::kSampled;

  PriorMode dynamics_prior = PriorMode::kAuto;
  PriorMode policy_prior = PriorMode::kAuto;
  int prior_components = 4;
  double prior_strength = 1.0;
  bool prior_accumulate = false;

  double cov_floor = kDefaultCovFloor;
  double ridge_scale = 1e-6;

  std::vector<int> hidden{42, 42};
  double init_policy_var = 0.1;
  TrainOptions train;

  int eval_episodes = 50;
  double success_threshold = 0.1;

  std::uint64_t seed = 0;
  int threads = 1;
  bool report_wall_clock = false;

  /// `auto` enables a prior only when dx + du > 8.
  [[nodiscard]] bool use_prior(PriorMode m) const {
    if (m == PriorMode::kAuto) {
      return env.state_dim() + env.action_dim() > 8;
    }
    return m == PriorMode::kOn;
  }

  void validate() const {
    env.validate();
    if (iterations < 1 || samples < 1 || clusters < 1 || em_max_iters < 1 ||
        em_restarts < 1 || samples_per_condition < 1) {
      throw ConfigError("counts must be positive");
    }
    if (algorithm == Algorithm::kResetFree && samples < clusters) {
      throw ConfigError("samples must be >= clusters");
    }
    if (!(epsilon0 > 0.0) || !(eps_min > 0.0) || eps_min > eps_max ||
        epsilon0 < eps_min || epsilon0 > eps_max) {
      throw ConfigError("need 0 < eps_min <= epsilon0 <= eps_max");
    }
    if (prior_components < 1 || !(prior_strength >= 0.0)) {
      throw ConfigError("bad prior settings");
    }
    if (!(cov_floor > 0.0) || !(ridge_scale >= 0.0)) {
      throw ConfigError("bad fit settings");
    }
    if (train.epochs < 1 || train.batch_size < 1 || !(train.learning_rate > 0.0) ||
        !(init_policy_var > 0.0)) {
      throw ConfigError("bad policy training settings");
    }
    if (eval_episodes < 1 || !(success_threshold > 0.0)) {
      throw ConfigError("bad evaluation settings");
    }
    for (const Vec& x : initial_states) {
      if (x.size() != env.state_dim()) {
        throw ConfigError("initial state has wrong dimension");
      }
    }
  }
};

/// Corners of the initial-state support: every non-degenerate dimension of
/// the uniform physical box and of the random target box takes its low or
/// high value. Gaussian dimensions sit at their mean.
inline std::vector<Vec> support_corners(const EnvSpec& env) {
  const int np = env.physical_dim();
  Vec lo(env.state_dim());
  Vec hi(env.state_dim());
  for (int i = 0; i < np; ++i) {
    if (env.init.kind == InitDistKind::kUniformBox) {
      lo[i] = env.init.a[i];
      hi[i] = env.init.b[i];
    } else {
      lo[i] = hi[i] = env.init.a[i];
    }
  }
  if (env.target_mode == TargetMode::kFixed) {
    lo.tail(env.target_dim()) = env.fixed_target;
    hi.tail(env.target_dim()) = env.fixed_target;
  } else {
    lo.tail(env.target_dim()) = env.target_low;
    hi.tail(env.target_dim()) = env.target_high;
  }
  std::vector<int> free_dims;
  for (int i = 0; i < env.state_dim(); ++i) {
    if (hi[i] > lo[i]) free_dims.push_back(i);
  }
  if (free_dims.size() > 6) {
    throw ConfigError("too many free dimensions for corner conditions");
  }
  std::vector<Vec> out;
  const int n = 1 << free_dims.size();
  for (int mask = 0; mask < n; ++mask) {
    Vec x = lo;
    for (std::size_t j = 0; j < free_dims.size(); ++j) {
      if (mask & (1 << j)) x[free_dims[j]] = hi[free_dims[j]];
    }
    out.push_back(x);
  }
  return out;
}

/// The classic-mode conditions actually used by a run.
inline std::vector<Vec> classic_conditions(const RunConfig& cfg) {
  return cfg.corner_conditions ? support_corners(cfg.env) : cfg.initial_states;
}

namespace detail {

inline std::vector<double> parse_list(const std::string& s,
                                      const std::string& key) {
  std::string t = s;
  for (char& c : t) {
    if (c == ',') c = ' ';
  }
  std::istringstream is(t);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + tok + "' in " + key);
    }
  }
  return out;
}

inline Vec to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Tracks which keys of a section were consumed so leftovers can be
// reported.
class SectionReader {
 public:
  SectionReader(const boost::property_tree::ptree* tree, std::string name)
      : tree_(tree), name_(std::move(name)) {}

  bool has(const std::string& key) {
    seen_.insert(key);
    return tree_ != nullptr && tree_->find(key) != tree_->not_found();
  }
  std::string str(const std::string& key, const std::string& def) {
    if (!has(key)) return def;
    return tree_->get<std::string>(key);
  }
  double num(const std::string& key, double def) {
    if (!has(key)) return def;
    const auto v = parse_list(tree_->get<std::string>(key), qualified(key));
    if (v.size() != 1) throw ConfigError(qualified(key) + ": expected one number");
    return v.front();
  }
  int integer(const std::string& key, int def) {
    const double v = num(key, def);
    if (v != std::floor(v)) throw ConfigError(qualified(key) + ": expected integer");
    return static_cast<int>(v);
  }
  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const auto v = tree_->get<std::string>(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(qualified(key) + ": expected boolean");
  }
  std::optional<std::vector<double>> list(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return parse_list(tree_->get<std::string>(key), qualified(key));
  }

  void check_unknown() const {
    if (tree_ == nullptr) return;
    for (const auto& kv : *tree_) {
      if (!seen_.contains(kv.first)) {
        throw ConfigError("unknown key '" + qualified(kv.first) + "'");
      }
    }
  }

  [[nodiscard]] std::string qualified(const std::string& key) const {
    return name_ + "." + key;
  }

 private:
  const boost::property_tree::ptree* tree_;
  std::string name_;
  std::set<std::string> seen_;
};

inline std::string join(const Vec& v) {
  std::string s;
  char buf[64];
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    if (i) s += ' ';
    s += buf;
  }
  return s;
}

}  // namespace detail

inline RunConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  static const std::set<std::string> kSections{
      "env", "algorithm", "step", "prior", "fit", "policy", "eval", "run"};
  for (const auto& kv : tree) {
    if (!kSections.contains(kv.first)) {
      throw ConfigError("unknown section or top-level key '" + kv.first + "'");
    }
  }
  auto section = [&](const std::string& name) {
    const auto it = tree.find(name);
    return detail::SectionReader(it == tree.not_found() ? nullptr : &it->second,
                                 name);
  };

  RunConfig cfg;
  {
    auto s = section("env");
    const std::string kind = s.str("kind", "double_integrator_reacher");
    if (kind == "double_integrator_reacher") {
      cfg.env.kind = EnvKind::kDoubleIntegratorReacher;
    } else if (kind == "two_link_arm_reacher") {
      cfg.env.kind = EnvKind::kTwoLinkArmReacher;
    } else {
      throw ConfigError("env.kind: unknown environment '" + kind + "'");
    }
    EnvSpec& e = cfg.env;
    e.pos_dim = s.integer("pos_dim", 2);
    e.horizon = s.integer("horizon", 20);
    e.dt = s.num("dt", 0.1);
    const int np = e.physical_dim();
    const int nt = e.target_dim();
    e.process_noise_std = Vec::Zero(e.state_dim());
    if (auto v = s.list("process_noise_std")) {
      if (static_cast<int>(v->size()) == 1) {
        e.process_noise_std.head(np).setConstant(v->front());
      } else if (static_cast<int>(v->size()) == e.state_dim()) {
        e.process_noise_std = detail::to_vec(*v);
      } else {
        throw ConfigError("env.process_noise_std: expected 1 or dx values");
      }
    }
    const std::string dist = s.str("init_dist", "uniform_box");
    auto physical = [&](const std::string& key, double def) {
      Vec out = Vec::Constant(np, def);
      if (auto v = s.list(key)) {
        if (static_cast<int>(v->size()) != np) {
          throw ConfigError("env." + key + ": expected " + std::to_string(np) +
                            " values");
        }
        out = detail::to_vec(*v);
      }
      return out;
    };
    if (dist == "uniform_box") {
      e.init.kind = InitDistKind::kUniformBox;
      e.init.a = physical("init_low", 0.0);
      e.init.b = physical("init_high", 0.0);
    } else if (dist == "gaussian") {
      e.init.kind = InitDistKind::kGaussian;
      e.init.a = physical("init_mean", 0.0);
      e.init.b = physical("init_std", 0.0);
    } else {
      throw ConfigError("env.init_dist: expected uniform_box or gaussian");
    }
    const std::string mode = s.str("target_mode", "fixed");
    if (mode == "fixed") {
      e.target_mode = TargetMode::kFixed;
    } else if (mode == "random_per_episode") {
      e.target_mode = TargetMode::kRandomPerEpisode;
    } else {
      throw ConfigError("env.target_mode: expected fixed or random_per_episode");
    }
    auto target = [&](const std::string& key, double def) {
      Vec out = Vec::Constant(nt, def);
      if (auto v = s.list(key)) {
        if (static_cast<int>(v->size()) != nt) {
          throw ConfigError("env." + key + ": expected " + std::to_string(nt) +
                            " values");
        }
        out = detail::to_vec(*v);
      }
      return out;
    };
    e.fixed_target = target("fixed_target", 0.0);
    e.target_low = target("target_low", -1.0);
    e.target_high = target("target_high", 1.0);
    e.action_cost_weight = s.num("action_cost_weight", 1e-2);
    e.action_bound =
        s.num("action_bound", std::numeric_limits<double>::infinity());
    if (auto v = s.list("arm_link_lengths")) {
      if (v->size() != 2) throw ConfigError("env.arm_link_lengths: 2 values");
      e.arm.l1 = (*v)[0];
      e.arm.l2 = (*v)[1];
    }
    if (auto v = s.list("arm_link_masses")) {
      if (v->size() != 2) throw ConfigError("env.arm_link_masses: 2 values");
      e.arm.m1 = (*v)[0];
      e.arm.m2 = (*v)[1];
    }
    e.arm.damping = s.num("arm_damping", 0.0);
    s.check_unknown();
  }
  {
    auto s = section("algorithm");
    const std::string mode = s.str("mode", "reset_free");
    if (mode == "reset_free") {
      cfg.algorithm = Algorithm::kResetFree;
    } else if (mode == "classic_mdgps") {
      cfg.algorithm = Algorithm::kClassicMdgps;
    } else {
      throw ConfigError("algorithm.mode: expected reset_free or classic_mdgps");
    }
    cfg.iterations = s.integer("iterations", cfg.iterations);
    cfg.samples = s.integer("samples", cfg.samples);
    cfg.clusters = s.integer("clusters", std::max(2, cfg.samples / 5));
    cfg.em_max_iters = s.integer("em_max_iters", cfg.em_max_iters);
    cfg.em_restarts = s.integer("em_restarts", cfg.em_restarts);
    cfg.samples_per_condition =
        s.integer("samples_per_condition", cfg.samples_per_condition);
    const std::string cond = s.str("conditions", "corners");
    if (cond == "corners") {
      cfg.corner_conditions = true;
    } else {
      cfg.corner_conditions = false;
      std::istringstream is(cond);
      std::string part;
      while (std::getline(is, part, ';')) {
        const auto v = detail::parse_list(part, "algorithm.conditions");
        if (!v.empty()) cfg.initial_states.push_back(detail::to_vec(v));
      }
      if (cfg.initial_states.empty()) {
        throw ConfigError("algorithm.conditions: no initial states given");
      }
    }
    s.check_unknown();
  }
  {
    auto s = section("step");
    cfg.epsilon0 = s.num("epsilon0", cfg.epsilon0);
    cfg.eps_min = s.num("eps_min", cfg.eps_min);
    cfg.eps_max = s.num("eps_max", 10.0 * cfg.epsilon0);
    const std::string est = s.str("improvement_estimate", "sampled");
    if (est == "sampled") {
      cfg.improvement_estimate = ImprovementEstimate::kSampled;
    } else if (est == "model") {
      cfg.improvement_estimate = ImprovementEstimate::kModel;
    } else {
      throw ConfigError("step.improvement_estimate: expected sampled or model");
    }
    s.check_unknown();
  }
  {
    auto s = section("prior");
    auto mode = [&](const std::string& key) {
      const std::string v = s.str(key, "auto");
      if (v == "off") return PriorMode::kOff;
      if (v == "on") return PriorMode::kOn;
      if (v == "auto") return PriorMode::kAuto;
      throw ConfigError("prior." + key + ": expected off, on or auto");
    };
    cfg.dynamics_prior = mode("dynamics");
    cfg.policy_prior = mode("policy");
    cfg.prior_components = s.integer("components", cfg.prior_components);
    cfg.prior_strength = s.num("strength", cfg.prior_strength);
    cfg.prior_accumulate = s.boolean("accumulate", cfg.prior_accumulate);
    s.check_unknown();
  }
  {
    auto s = section("fit");
    cfg.cov_floor = s.num("cov_floor", cfg.cov_floor);
    cfg.ridge_scale = s.num("ridge_scale", cfg.ridge_scale);
    s.check_unknown();
  }
  {
    auto s = section("policy");
    if (auto v = s.list("hidden")) {
      cfg.hidden.clear();
      for (double h : *v) {
        if (h < 1 || h != std::floor(h)) throw ConfigError("policy.hidden: sizes");
        cfg.hidden.push_back(static_cast<int>(h));
      }
    }
    cfg.init_policy_var = s.num("init_var", cfg.init_policy_var);
    cfg.train.epochs = s.integer("epochs", cfg.train.epochs);
    cfg.train.batch_size = s.integer("batch_size", cfg.train.batch_size);
    cfg.train.learning_rate = s.num("learning_rate", cfg.train.learning_rate);
    s.check_unknown();
  }
  {
    auto s = section("eval");
    cfg.eval_episodes = s.integer("episodes", cfg.eval_episodes);
    cfg.success_threshold = s.num("success_threshold", cfg.success_threshold);
    s.check_unknown();
  }
  {
    auto s = section("run");
    const double seed = s.num("seed", 0.0);
    if (seed < 0 || seed != std::floor(seed)) throw ConfigError("run.seed");
    cfg.seed = static_cast<std::uint64_t>(seed);
    if (s.has("seed")) {
      // Parse exactly to keep all 64 bits.
      cfg.seed = std::stoull(tree.get_child("run").get<std::string>("seed"));
    }
    cfg.threads = s.integer("threads", cfg.threads);
    cfg.report_wall_clock = s.boolean("report_wall_clock", cfg.report_wall_clock);
    s.check_unknown();
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return parse_config(in);
}

/// Writes every field back in the same INI format (the config echo).
inline std::string to_ini(const RunConfig& cfg) {
  std::ostringstream os;
  const EnvSpec& e = cfg.env;
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  os << "[env]\n"
     << "kind = " << to_string(e.kind) << "\n"
     << "pos_dim = " << e.pos_dim << "\n"
     << "horizon = " << e.horizon << "\n"
     << "dt = " << num(e.dt) << "\n"
     << "process_noise_std = " << detail::join(e.process_noise_std) << "\n"
     << "init_dist = " << to_string(e.init.kind) << "\n";
  if (e.init.kind == InitDistKind::kUniformBox) {
    os << "init_low = " << detail::join(e.init.a) << "\n"
       << "init_high = " << detail::join(e.init.b) << "\n";
  } else {
    os << "init_mean = " << detail::join(e.init.a) << "\n"
       << "init_std = " << detail::join(e.init.b) << "\n";
  }
  os << "target_mode = " << to_string(e.target_mode) << "\n"
     << "fixed_target = " << detail::join(e.fixed_target) << "\n"
     << "target_low = " << detail::join(e.target_low) << "\n"
     << "target_high = " << detail::join(e.target_high) << "\n"
     << "action_cost_weight = " << num(e.action_cost_weight) << "\n"
     << "action_bound = " << num(e.action_bound) << "\n"
     << "arm_link_lengths = " << num(e.arm.l1) << " " << num(e.arm.l2) << "\n"
     << "arm_link_masses = " << num(e.arm.m1) << " " << num(e.arm.m2) << "\n"
     << "arm_damping = " << num(e.arm.damping) << "\n\n";
  os << "[algorithm]\n"
     << "mode = " << to_string(cfg.algorithm) << "\n"
     << "iterations = " << cfg.iterations << "\n"
     << "samples = " << cfg.samples << "\n"
     << "clusters = " << cfg.clusters << "\n"
     << "em_max_iters = " << cfg.em_max_iters << "\n"
     << "em_restarts = " << cfg.em_restarts << "\n"
     << "samples_per_condition = " << cfg.samples_per_condition << "\n";
  if (cfg.corner_conditions) {
    os << "conditions = corners\n\n";
  } else {
    os << "conditions = ";
    for (std::size_t i = 0; i < cfg.initial_states.size(); ++i) {
      if (i) os << "; ";
      os << detail::join(cfg.initial_states[i]);
    }
    os << "\n\n";
  }
  os << "[step]\n"
     << "epsilon0 = " << num(cfg.epsilon0) << "\n"
     << "eps_min = " << num(cfg.eps_min) << "\n"
     << "eps_max = " << num(cfg.eps_max) << "\n"
     << "improvement_estimate = " << to_string(cfg.improvement_estimate)
     << "\n\n";
  os << "[prior]\n"
     << "dynamics = " << to_string(cfg.dynamics_prior) << "\n"
     << "policy = " << to_string(cfg.policy_prior) << "\n"
     << "components = " << cfg.prior_components << "\n"
     << "strength = " << num(cfg.prior_strength) << "\n"
     << "accumulate = " << (cfg.prior_accumulate ? "true" : "false") << "\n\n";
  os << "[fit]\n"
     << "cov_floor = " << num(cfg.cov_floor) << "\n"
     << "ridge_scale = " << num(cfg.ridge_scale) << "\n\n";
  os << "[policy]\nhidden =";
  for (int h : cfg.hidden) os << " " << h;
  os << "\n"
     << "init_var = " << num(cfg.init_policy_var) << "\n"
     << "epochs = " << cfg.train.epochs << "\n"
     << "batch_size = " << cfg.train.batch_size << "\n"
     << "learning_rate = " << num(cfg.train.learning_rate) << "\n\n";
  os << "[eval]\n"
     << "episodes = " << cfg.eval_episodes << "\n"
     << "success_threshold = " << num(cfg.success_threshold) << "\n\n";
  os << "[run]\n"
     << "seed = " << cfg.seed << "\n"
     << "threads = " << cfg.threads << "\n"
     << "report_wall_clock = " << (cfg.report_wall_clock ? "true" : "false")
     << "\n";
  return os.str();
}

}  // namespace rfgps
