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

#include <algorithm>
#include <vector>

#include "rfgps/common.hpp"

namespace rfgps {

struct GmmOptions {
  int max_iters = 100;
  double rel_tol = 1e-6;
  double cov_floor = kDefaultCovFloor;
};

/// Full-covariance Gaussian mixture used as a prior over regression tuples.
struct GmmPrior {
  Vec weights;
  std::vector<Vec> means;
  std::vector<Mat> covs;
  std::vector<double> loglik_trace;  // mean log-likelihood per EM iteration
  int reseeds = 0;

  [[nodiscard]] int n_components() const {
    return static_cast<int>(weights.size());
  }
  [[nodiscard]] int dim() const {
    return means.empty() ? 0 : static_cast<int>(means.front().size());
  }

  /// Posterior component probabilities for one point.
  [[nodiscard]] Vec responsibilities(const Vec& point) const {
    const int k = n_components();
    Vec logp(k);
    for (int j = 0; j < k; ++j) {
      logp[j] = std::log(weights[j]) +
                gaussian_logpdf(point - means[static_cast<std::size_t>(j)],
                                covs[static_cast<std::size_t>(j)]);
    }
    const double mx = logp.maxCoeff();
    Vec r = (logp.array() - mx).exp().matrix();
    return r / r.sum();
  }

  /// Mixture mean and covariance with components weighted by their
  /// responsibilities at `point`.
  [[nodiscard]] Gaussian moments_at(const Vec& point) const {
    const Vec r = responsibilities(point);
    Gaussian g;
    g.mean = Vec::Zero(dim());
    for (int j = 0; j < n_components(); ++j) {
      g.mean += r[j] * means[static_cast<std::size_t>(j)];
    }
    g.cov = Mat::Zero(dim(), dim());
    for (int j = 0; j < n_components(); ++j) {
      const Vec d = means[static_cast<std::size_t>(j)] - g.mean;
      g.cov += r[j] * (covs[static_cast<std::size_t>(j)] + d * d.transpose());
    }
    g.cov = symmetrize(g.cov);
    return g;
  }

  /// Average log-likelihood of the rows of `data`.
  [[nodiscard]] double mean_log_likelihood(const Mat& data) const;
};

namespace detail {

// Log-likelihood of every row under every component, plus per-row
// log-sum-exp.
inline double gmm_log_responsibilities(const GmmPrior& g, const Mat& data,
                                       Mat& log_resp) {
  const auto n = data.rows();
  const int k = g.n_components();
  log_resp.resize(n, k);
  for (int j = 0; j < k; ++j) {
    const auto js = static_cast<std::size_t>(j);
    Eigen::LLT<Mat> llt(g.covs[js]);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("GMM component covariance not positive definite");
    }
    const double lw = std::log(g.weights[j]);
    for (Eigen::Index i = 0; i < n; ++i) {
      log_resp(i, j) =
          lw + gaussian_logpdf(data.row(i).transpose() - g.means[js], llt);
    }
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = log_resp.row(i).maxCoeff();
    const double lse =
        mx + std::log((log_resp.row(i).array() - mx).exp().sum());
    log_resp.row(i).array() -= lse;
    total += lse;
  }
  return total / static_cast<double>(n);
}

inline Mat sample_covariance(const Mat& data, const Vec& mean) {
  const Mat c = data.rowwise() - mean.transpose();
  return symmetrize(c.transpose() * c / static_cast<double>(data.rows()));
}

}  // namespace detail

inline double GmmPrior::mean_log_likelihood(const Mat& data) const {
  Mat lr;
  return detail::gmm_log_responsibilities(*this, data, lr);
}

/// EM for a full-covariance Gaussian mixture with k-means++ seeding.
///
/// A component whose effective count drops below dim+1 is re-seeded at a
/// random datum with the global data covariance.
inline GmmPrior fit_gmm_prior(const Mat& tuples, int n_components, Rng& rng,
                              const GmmOptions& opts = {}) {
  const auto n = tuples.rows();
  const auto dim = tuples.cols();
  if (n_components < 1) throw std::invalid_argument("fit_gmm_prior: k < 1");
  if (n < n_components) {
    throw std::invalid_argument("fit_gmm_prior: fewer rows than components");
  }
  const Mat floor = opts.cov_floor * Mat::Identity(dim, dim);
  const Vec global_mean = tuples.colwise().mean().transpose();
  const Mat global_cov = detail::sample_covariance(tuples, global_mean) + floor;

  // k-means++ seeding.
  std::vector<Eigen::Index> centers;
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.push_back(pick(rng));
  Vec d2 = Vec::Constant(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < n_components) {
    const auto last = tuples.row(centers.back());
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (tuples.row(i) - last).squaredNorm());
    }
    const double total = d2.sum();
    Eigen::Index next = pick(rng);
    if (total > 0.0) {
      std::uniform_real_distribution<double> ud(0.0, total);
      double r = ud(rng);
      for (Eigen::Index i = 0; i < n; ++i) {
        r -= d2[i];
        if (r <= 0.0) {
          next = i;
          break;
        }
      }
    }
    centers.push_back(next);
  }

  GmmPrior g;
  g.weights = Vec::Zero(n_components);
  g.means.resize(static_cast<std::size_t>(n_components));
  g.covs.resize(static_cast<std::size_t>(n_components));
  {
    std::vector<int> label(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < n_components; ++j) {
        const double d =
            (tuples.row(i) - tuples.row(centers[static_cast<std::size_t>(j)]))
                .squaredNorm();
        if (d < best) {
          best = d;
          label[static_cast<std::size_t>(i)] = j;
        }
      }
    }
    for (int j = 0; j < n_components; ++j) {
      std::vector<Eigen::Index> idx;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (label[static_cast<std::size_t>(i)] == j) idx.push_back(i);
      }
      const auto js = static_cast<std::size_t>(j);
      g.weights[j] = std::max<double>(1.0, static_cast<double>(idx.size()));
      if (static_cast<Eigen::Index>(idx.size()) > dim) {
        Mat sub(static_cast<Eigen::Index>(idx.size()), dim);
        for (std::size_t r = 0; r < idx.size(); ++r) {
          sub.row(static_cast<Eigen::Index>(r)) = tuples.row(idx[r]);
        }
        g.means[js] = sub.colwise().mean().transpose();
        g.covs[js] = detail::sample_covariance(sub, g.means[js]) + floor;
      } else {
        g.means[js] = tuples.row(centers[js]).transpose();
        g.covs[js] = global_cov;
      }
    }
    g.weights /= g.weights.sum();
  }

  Mat log_resp;
  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    const double ll = detail::gmm_log_responsibilities(g, tuples, log_resp);
    g.loglik_trace.push_back(ll);
    if (iter > 0 && std::abs(ll - prev) <= opts.rel_tol * std::abs(ll)) break;
    prev = ll;

    const Mat resp = log_resp.array().exp().matrix();
    for (int j = 0; j < n_components; ++j) {
      const auto js = static_cast<std::size_t>(j);
      const double nk = resp.col(j).sum();
      if (nk < static_cast<double>(dim + 1)) {
        g.means[js] = tuples.row(pick(rng)).transpose();
        g.covs[js] = global_cov;
        g.weights[j] = 1.0 / n_components;
        ++g.reseeds;
        continue;
      }
      g.weights[j] = nk / static_cast<double>(n);
      g.means[js] = (tuples.transpose() * resp.col(j)) / nk;
      const Mat c = tuples.rowwise() - g.means[js].transpose();
      g.covs[js] = symmetrize(c.transpose() * resp.col(j).asDiagonal() * c / nk) +
                   floor;
    }
    g.weights /= g.weights.sum();
  }
  return g;
}

}  // namespace rfgps
