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

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace rfgps {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

// Added to every fitted covariance before inversion or log-determinant.
inline constexpr double kDefaultCovFloor = 1e-6;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_dim(Eigen::Index got, Eigen::Index want,
                        std::string_view what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected dimension " +
                         std::to_string(want) + ", got " +
                         std::to_string(got));
  }
}

template <class Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

/// A multivariate normal over a fixed-dimension vector space.
struct Gaussian {
  Vec mean;
  Mat cov;

  [[nodiscard]] Eigen::Index dim() const { return mean.size(); }
};

/// One rollout: T+1 states, T actions and the per-step costs.
///
/// `policy_means` holds the deterministic action mean the sampling policy
/// produced at each step (before exploration noise and clamping). It may be
/// empty when the trajectory was produced by a policy without a notion of
/// mean.
struct Trajectory {
  Mat states;        // (T+1) x dx
  Mat actions;       // T x du, as applied to the system
  Mat policy_means;  // T x du or empty
  Vec costs;         // T
  std::uint64_t seed = 0;

  [[nodiscard]] int horizon() const { return static_cast<int>(actions.rows()); }
  [[nodiscard]] int state_dim() const { return static_cast<int>(states.cols()); }
  [[nodiscard]] int action_dim() const {
    return static_cast<int>(actions.cols());
  }
  [[nodiscard]] double total_cost() const { return costs.sum(); }
};

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

/// Largest absolute asymmetry relative to the matrix scale.
inline double relative_asymmetry(const Mat& m) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() / scale;
}

inline double min_eigenvalue(const Mat& sym) {
  if (sym.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Projects a symmetric matrix onto the PSD cone by clamping eigenvalues.
inline Mat clamp_eigenvalues(const Mat& sym, double lower) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(sym));
  Vec ev = es.eigenvalues().cwiseMax(lower);
  return symmetrize(es.eigenvectors() * ev.asDiagonal() *
                    es.eigenvectors().transpose());
}

/// log N(residual; 0, cov) from a precomputed Cholesky factor.
inline double gaussian_logpdf(const Vec& residual, const Eigen::LLT<Mat>& llt) {
  const auto n = static_cast<double>(residual.size());
  const Mat& l = llt.matrixLLT();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const Vec w = llt.matrixL().solve(residual);
  return -0.5 * (w.squaredNorm() + log_det +
                 n * std::log(2.0 * std::numbers::pi));
}

inline double gaussian_logpdf(const Vec& residual, const Mat& cov) {
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("gaussian_logpdf: covariance not positive definite");
  }
  return gaussian_logpdf(residual, llt);
}

inline double log_det_spd(const Mat& m) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("log_det_spd: matrix not positive definite");
  }
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

inline Vec standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

// ---------------------------------------------------------------------------
// Seed fan-out. Child streams are derived from the master seed by a fixed
// label and index so that consumers never share a generator.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ fnv1a(label)) + index);
}

/// Runs fn(i) for i in [0, n). Each index must write only to its own slot.
inline void parallel_for(int n, int threads,
                         const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace rfgps
