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

// Global policy: a small tanh MLP for the action mean with a
// state-independent diagonal Gaussian covariance, trained by weighted least
// squares against the local policies.

#pragma once

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "rfgps/common.hpp"
#include "rfgps/cphase.hpp"
#include "rfgps/env.hpp"

namespace rfgps {

struct GlobalPolicy {
  std::vector<int> sizes;   // input, hidden..., output
  std::vector<Mat> weights;  // weights[l] is sizes[l+1] x sizes[l]
  std::vector<Vec> biases;
  Vec log_diag_cov;

  GlobalPolicy() = default;

  /// All parameters zero; covariance diag(init_var).
  explicit GlobalPolicy(std::vector<int> layer_sizes, double init_var = 0.1)
      : sizes(std::move(layer_sizes)) {
    if (sizes.size() < 2) {
      throw std::invalid_argument("GlobalPolicy: need input and output sizes");
    }
    for (int s : sizes) {
      if (s < 1) throw std::invalid_argument("GlobalPolicy: layer size < 1");
    }
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      weights.push_back(Mat::Zero(sizes[l + 1], sizes[l]));
      biases.push_back(Vec::Zero(sizes[l + 1]));
    }
    log_diag_cov = Vec::Constant(sizes.back(), std::log(init_var));
  }

  /// Weights ~ N(0, 1/fan_in); the output layer is scaled by 0.1 so the
  /// initial policy acts close to zero.
  static GlobalPolicy random(std::vector<int> layer_sizes, Rng& rng,
                             double init_var = 0.1) {
    GlobalPolicy p(std::move(layer_sizes), init_var);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      const double scale = (l + 1 == p.weights.size() ? 0.1 : 1.0) /
                           std::sqrt(static_cast<double>(p.sizes[l]));
      Mat& w = p.weights[l];
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * nd(rng);
    }
    return p;
  }

  [[nodiscard]] int input_dim() const { return sizes.front(); }
  [[nodiscard]] int output_dim() const { return sizes.back(); }
  [[nodiscard]] int n_layers() const { return static_cast<int>(weights.size()); }

  [[nodiscard]] Mat covariance() const {
    return log_diag_cov.array().exp().matrix().asDiagonal();
  }

  /// Action means for the columns of `x` (dx x B).
  [[nodiscard]] Mat forward_batch(const Mat& x) const {
    require_dim(x.rows(), input_dim(), "policy input");
    Mat a = x;
    for (int l = 0; l < n_layers(); ++l) {
      const auto ls = static_cast<std::size_t>(l);
      Mat z = (weights[ls] * a).colwise() + biases[ls];
      a = (l + 1 < n_layers()) ? Mat(z.array().tanh().matrix()) : z;
    }
    return a;
  }

  [[nodiscard]] Vec forward(const Vec& x) const {
    if (!finite()) throw NumericalError("GlobalPolicy: non-finite parameters");
    return forward_batch(x);
  }

  [[nodiscard]] bool finite() const {
    for (int l = 0; l < n_layers(); ++l) {
      const auto ls = static_cast<std::size_t>(l);
      if (!weights[ls].allFinite() || !biases[ls].allFinite()) return false;
    }
    return log_diag_cov.allFinite();
  }

  /// Mean plus N(0, covariance) exploration noise.
  [[nodiscard]] ActionDraw sample(const Vec& x, Rng& rng) const {
    ActionDraw d;
    d.mean = forward_batch(x);
    const Vec std_dev = (0.5 * log_diag_cov.array()).exp().matrix();
    d.action = d.mean + std_dev.cwiseProduct(standard_normal(d.mean.size(), rng));
    return d;
  }

  [[nodiscard]] Eigen::Index n_params() const {
    Eigen::Index n = 0;
    for (int l = 0; l < n_layers(); ++l) {
      n += weights[static_cast<std::size_t>(l)].size() +
           biases[static_cast<std::size_t>(l)].size();
    }
    return n;
  }

  /// Flattened layer by layer: weights row-major, then biases.
  [[nodiscard]] Vec params() const {
    Vec p(n_params());
    Eigen::Index o = 0;
    for (int l = 0; l < n_layers(); ++l) {
      const auto ls = static_cast<std::size_t>(l);
      const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                          Eigen::RowMajor>
          w = weights[ls];
      p.segment(o, w.size()) = Eigen::Map<const Vec>(w.data(), w.size());
      o += w.size();
      p.segment(o, biases[ls].size()) = biases[ls];
      o += biases[ls].size();
    }
    return p;
  }

  void set_params(const Vec& p) {
    require_dim(p.size(), n_params(), "policy parameters");
    Eigen::Index o = 0;
    for (int l = 0; l < n_layers(); ++l) {
      const auto ls = static_cast<std::size_t>(l);
      const auto rows = weights[ls].rows();
      const auto cols = weights[ls].cols();
      weights[ls] = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                   Eigen::Dynamic, Eigen::RowMajor>>(
          p.data() + o, rows, cols);
      o += rows * cols;
      biases[ls] = p.segment(o, rows);
      o += rows;
    }
  }
};

/// Supervision tuples pooled over samples and time steps.
struct SupervisionSet {
  Mat states;   // dx x N
  Mat targets;  // du x N, local policy means at the visited states
  std::vector<Mat> precisions;

  [[nodiscard]] int size() const { return static_cast<int>(states.cols()); }
};

/// Targets mu_q(x_t) = K_m[t] x_t + k_m[t] at each sample's own states, with
/// weights C_m[t]^-1. Samples whose local solve failed are skipped.
inline SupervisionSet build_supervision(
    const std::vector<Trajectory>& trajs,
    const std::vector<LocalPolicyResult>& locals) {
  if (trajs.size() != locals.size()) {
    throw DimensionError("build_supervision: locals not aligned with samples");
  }
  int n = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    if (locals[i].ok) n += trajs[i].horizon();
  }
  SupervisionSet sup;
  if (trajs.empty()) return sup;
  const int dx = trajs.front().state_dim();
  const int du = trajs.front().action_dim();
  sup.states.resize(dx, n);
  sup.targets.resize(du, n);
  sup.precisions.reserve(static_cast<std::size_t>(n));
  int c = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    if (!locals[i].ok) continue;
    const LinearGaussianPolicy& q = locals[i].policy;
    for (int t = 0; t < trajs[i].horizon(); ++t) {
      const Vec x = trajs[i].states.row(t).transpose();
      sup.states.col(c) = x;
      sup.targets.col(c) = q.mean_action(t, x);
      const Mat& cov = q.cov[static_cast<std::size_t>(t)];
      sup.precisions.push_back(
          symmetrize(cov.llt().solve(Mat::Identity(du, du))));
      ++c;
    }
  }
  return sup;
}

/// Mean over `idx` of (mu(x) - mu_q)' P (mu(x) - mu_q). When `grad` is
/// non-null it receives the gradient in GlobalPolicy::params() layout.
inline double weighted_loss(const GlobalPolicy& pol, const SupervisionSet& sup,
                            const std::vector<int>& idx, Vec* grad = nullptr) {
  const auto b = static_cast<Eigen::Index>(idx.size());
  if (b == 0) throw std::invalid_argument("weighted_loss: empty batch");
  Mat x(pol.input_dim(), b);
  Mat y(pol.output_dim(), b);
  for (Eigen::Index j = 0; j < b; ++j) {
    x.col(j) = sup.states.col(idx[static_cast<std::size_t>(j)]);
    y.col(j) = sup.targets.col(idx[static_cast<std::size_t>(j)]);
  }
  const int nl = pol.n_layers();
  std::vector<Mat> acts;
  acts.reserve(static_cast<std::size_t>(nl + 1));
  acts.push_back(x);
  for (int l = 0; l < nl; ++l) {
    const auto ls = static_cast<std::size_t>(l);
    Mat z = (pol.weights[ls] * acts.back()).colwise() + pol.biases[ls];
    acts.push_back(l + 1 < nl ? Mat(z.array().tanh().matrix()) : z);
  }
  const Mat r = acts.back() - y;
  Mat dz(r.rows(), b);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const Mat& p = sup.precisions[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
    const Vec pr = p * r.col(j);
    loss += r.col(j).dot(pr);
    dz.col(j) = (2.0 / static_cast<double>(b)) * pr;
  }
  loss /= static_cast<double>(b);
  if (grad == nullptr) return loss;

  std::vector<Mat> gw(static_cast<std::size_t>(nl));
  std::vector<Vec> gb(static_cast<std::size_t>(nl));
  for (int l = nl - 1; l >= 0; --l) {
    const auto ls = static_cast<std::size_t>(l);
    gw[ls] = dz * acts[ls].transpose();
    gb[ls] = dz.rowwise().sum();
    if (l > 0) {
      const Mat da = pol.weights[ls].transpose() * dz;
      dz = da.array() * (1.0 - acts[ls].array().square());
    }
  }
  grad->resize(pol.n_params());
  Eigen::Index o = 0;
  for (int l = 0; l < nl; ++l) {
    const auto ls = static_cast<std::size_t>(l);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
        w = gw[ls];
    grad->segment(o, w.size()) = Eigen::Map<const Vec>(w.data(), w.size());
    o += w.size();
    grad->segment(o, gb[ls].size()) = gb[ls];
    o += gb[ls].size();
  }
  return loss;
}

inline double full_loss(const GlobalPolicy& pol, const SupervisionSet& sup) {
  std::vector<int> all(static_cast<std::size_t>(sup.size()));
  std::iota(all.begin(), all.end(), 0);
  return weighted_loss(pol, sup, all);
}

/// Mean over tuples of tr(P Sigma_pi) - log|Sigma_pi| + r' P r: twice the
/// Gaussian KL(pi || q) up to terms that do not depend on the policy.
inline double kl_objective(const GlobalPolicy& pol, const SupervisionSet& sup) {
  if (sup.size() == 0) throw std::invalid_argument("kl_objective: empty set");
  const Mat sigma = pol.covariance();
  const double logdet = pol.log_diag_cov.sum();
  const Mat mu = pol.forward_batch(sup.states);
  double total = 0.0;
  for (int i = 0; i < sup.size(); ++i) {
    const Mat& p = sup.precisions[static_cast<std::size_t>(i)];
    const Vec r = mu.col(i) - sup.targets.col(i);
    total += (p * sigma).trace() - logdet + r.dot(p * r);
  }
  return total / sup.size();
}

struct TrainOptions {
  int epochs = 100;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int max_restarts = 3;
  bool refit_covariance = true;
};

struct TrainResult {
  GlobalPolicy policy;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int restarts = 0;
};

/// Adam on the weighted least-squares loss, keeping the best full-set
/// checkpoint (never worse than the input). A non-finite loss halves the
/// learning rate and restarts from the input, up to max_restarts times.
/// Afterwards the covariance is set to diag((mean precision)^-1).
inline TrainResult train_supervised(const GlobalPolicy& pol,
                                    const SupervisionSet& sup,
                                    const TrainOptions& opts, Rng& rng) {
  if (sup.size() == 0) throw std::invalid_argument("train_supervised: empty set");
  TrainResult res;
  res.policy = pol;
  const Vec start = pol.params();
  res.initial_loss = full_loss(pol, sup);
  if (!std::isfinite(res.initial_loss)) {
    throw NumericalError("train_supervised: non-finite initial loss");
  }
  Vec best = start;
  double best_loss = res.initial_loss;

  std::vector<int> order(static_cast<std::size_t>(sup.size()));
  std::iota(order.begin(), order.end(), 0);
  const int batch = std::max(1, std::min(opts.batch_size, sup.size()));

  double lr = opts.learning_rate;
  for (int attempt = 0; attempt <= opts.max_restarts; ++attempt) {
    GlobalPolicy work = pol;
    Vec theta = start;
    Vec m1 = Vec::Zero(theta.size());
    Vec m2 = Vec::Zero(theta.size());
    long step = 0;
    bool diverged = false;
    for (int epoch = 0; epoch < opts.epochs && !diverged; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (int s = 0; s + batch <= sup.size(); s += batch) {
        const std::vector<int> idx(order.begin() + s, order.begin() + s + batch);
        Vec g;
        work.set_params(theta);
        const double l = weighted_loss(work, sup, idx, &g);
        if (!std::isfinite(l) || !g.allFinite()) {
          diverged = true;
          break;
        }
        ++step;
        m1 = opts.beta1 * m1 + (1.0 - opts.beta1) * g;
        m2 = opts.beta2 * m2 + (1.0 - opts.beta2) * g.cwiseAbs2();
        const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(step));
        theta.array() -= lr * (m1.array() / c1) /
                         ((m2.array() / c2).sqrt() + 1e-8);
      }
      if (diverged) break;
      work.set_params(theta);
      const double l = full_loss(work, sup);
      if (!std::isfinite(l)) {
        diverged = true;
        break;
      }
      if (l < best_loss) {
        best_loss = l;
        best = theta;
      }
    }
    if (!diverged) break;
    if (attempt == opts.max_restarts) {
      throw NumericalError("train_supervised: diverged after restarts");
    }
    ++res.restarts;
    lr *= 0.5;
  }
  res.policy.set_params(best);
  res.final_loss = best_loss;

  if (opts.refit_covariance) {
    const int du = pol.output_dim();
    Mat mean_prec = Mat::Zero(du, du);
    for (const auto& p : sup.precisions) mean_prec += p;
    mean_prec /= static_cast<double>(sup.size());
    const Mat cov = symmetrize(mean_prec).llt().solve(Mat::Identity(du, du));
    res.policy.log_diag_cov = cov.diagonal().array().log().matrix();
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian):
//   char[8] "RFGPSNN\0", u32 version, u32 n_sizes, u32 sizes[n_sizes],
//   per layer: f64 weights (row-major), f64 biases; then f64 log_diag_cov[du].

inline constexpr std::uint32_t kPolicyFileVersion = 1;

namespace detail {

template <class T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("policy file truncated");
  return v;
}

}  // namespace detail

inline void save_policy(const GlobalPolicy& pol, const std::string& path) {
  static_assert(std::endian::native == std::endian::little,
                "policy files are little-endian");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("RFGPSNN", 8);
  detail::write_raw(os, kPolicyFileVersion);
  detail::write_raw(os, static_cast<std::uint32_t>(pol.sizes.size()));
  for (int s : pol.sizes) detail::write_raw(os, static_cast<std::uint32_t>(s));
  const Vec p = pol.params();
  os.write(reinterpret_cast<const char*>(p.data()),
           static_cast<std::streamsize>(p.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(pol.log_diag_cov.data()),
           static_cast<std::streamsize>(pol.log_diag_cov.size() * sizeof(double)));
  if (!os) throw std::runtime_error("failed writing " + path);
}

inline GlobalPolicy load_policy(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "RFGPSNN", 8) != 0) {
    throw std::runtime_error(path + ": not a policy file");
  }
  const auto version = detail::read_raw<std::uint32_t>(is);
  if (version != kPolicyFileVersion) {
    throw std::runtime_error(path + ": unsupported version " +
                             std::to_string(version));
  }
  const auto n = detail::read_raw<std::uint32_t>(is);
  if (n < 2 || n > 64) throw std::runtime_error(path + ": bad layer count");
  std::vector<int> sizes;
  for (std::uint32_t i = 0; i < n; ++i) {
    sizes.push_back(static_cast<int>(detail::read_raw<std::uint32_t>(is)));
  }
  GlobalPolicy pol(sizes);
  Vec p(pol.n_params());
  is.read(reinterpret_cast<char*>(p.data()),
          static_cast<std::streamsize>(p.size() * sizeof(double)));
  is.read(reinterpret_cast<char*>(pol.log_diag_cov.data()),
          static_cast<std::streamsize>(pol.log_diag_cov.size() * sizeof(double)));
  if (!is) throw std::runtime_error(path + ": truncated");
  pol.set_params(p);
  return pol;
}

}  // namespace rfgps
