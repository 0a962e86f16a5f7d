#pragma once

// Linear-Gaussian posterior, the MAP estimate through both the closed form
// and the stacked least-squares system, the augmented pseudoinverse and the
// resolution matrix. Also hosts the multivariate normal sampler used by the
// Monte Carlo checks.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "bayestomo/errors.hpp"
#include "bayestomo/priors.hpp"

namespace bayestomo {

struct PosteriorResult {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

/// Posterior covariance together with the gain K = Gamma_post A^T Gamma_eps^{-1},
/// which maps (b - mu_eps) to the data-driven part of the MAP.
struct PosteriorOperators {
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd gain;

  /// mu_post = K (b - mu_eps) + (I - K A) mu_pr.
  Eigen::VectorXd mean(const Eigen::MatrixXd& A, const NoiseModel& noise,
                       const GaussianPrior& prior, const Eigen::VectorXd& b) const {
    return gain * (b - noise.mean()) + prior.mean() - gain * (A * prior.mean());
  }
};

namespace detail {

inline void check_dimensions(const Eigen::MatrixXd& A, const NoiseModel& noise,
                             const GaussianPrior& prior) {
  if (A.rows() != noise.size()) throw ArgumentError("noise model size does not match rows of A");
  if (A.cols() != prior.size()) throw ArgumentError("prior size does not match columns of A");
}

// Throws when a null-space direction of an improper prior is invisible to the
// data, which leaves the posterior precision singular.
inline void check_nullspace_probed(const Eigen::MatrixXd& A, const NoiseModel& noise,
                                   const GaussianPrior& prior) {
  const Eigen::MatrixXd q = prior.nullspace();
  if (q.cols() == 0) return;
  const Eigen::MatrixXd wa = noise.whitening() * A;
  const double scale = std::max(wa.norm(), 1e-300);
  for (Index k = 0; k < q.cols(); ++k) {
    if ((wa * q.col(k)).norm() <= 1e-12 * scale) {
      throw DegeneracyError("posterior precision is singular: prior null-space direction " +
                                std::to_string(k) + " is not probed by any beam",
                            q.col(k));
    }
  }
}

}  // namespace detail

/// Posterior covariance and gain. Proper priors go through the data-space
/// (M x M) system Gamma_b = A Gamma_pr A^T + Gamma_eps, which never forms
/// Gamma_pr^{-1}; improper priors factor the precision
/// gamma^2 L^T L + A^T Gamma_eps^{-1} A directly.
inline PosteriorOperators posterior_operators(const Eigen::MatrixXd& A, const NoiseModel& noise,
                                              const GaussianPrior& prior) {
  detail::check_dimensions(A, noise, prior);
  const Index n = prior.size();
  PosteriorOperators out;
  if (prior.is_proper()) {
    const Eigen::MatrixXd& g = prior.covariance();
    const Eigen::MatrixXd gat = g * A.transpose();
    Eigen::MatrixXd gb = A * gat + noise.covariance();
    detail::symmetrize(gb);
    Eigen::LLT<Eigen::MatrixXd> llt(gb);
    if (llt.info() != Eigen::Success) {
      throw NumericError("prior predictive covariance is not positive definite");
    }
    out.gain = llt.solve(gat.transpose()).transpose();
    out.covariance = g - out.gain * gat.transpose();
  } else {
    detail::check_nullspace_probed(A, noise, prior);
    Eigen::MatrixXd precision = prior.precision();
    precision.noalias() += A.transpose() * noise.precision() * A;
    detail::symmetrize(precision);
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) {
      throw DegeneracyError("posterior precision is not positive definite", Eigen::VectorXd());
    }
    out.covariance = llt.solve(Eigen::MatrixXd::Identity(n, n));
    out.gain = out.covariance * A.transpose() * noise.precision();
  }
  detail::symmetrize(out.covariance);
  return out;
}

inline PosteriorResult posterior(const Eigen::MatrixXd& A, const NoiseModel& noise,
                                 const GaussianPrior& prior, const Eigen::VectorXd& b) {
  if (b.size() != A.rows()) throw ArgumentError("posterior: measurement length does not match A");
  auto ops = posterior_operators(A, noise, prior);
  Eigen::VectorXd mean = ops.mean(A, noise, prior, b);
  return {std::move(mean), std::move(ops.covariance)};
}

/// MAP through the stacked least-squares system
///   min | [L_eps A; L_pr] x - [L_eps (b - mu_eps); L_pr mu_pr] |^2,
/// factored once with a column-pivoted QR so many measurement vectors can be
/// solved cheaply.
class MapSolver {
 public:
  MapSolver(const Eigen::MatrixXd& A, const NoiseModel& noise, const GaussianPrior& prior)
      : noise_whitening_(noise.whitening()), noise_mean_(noise.mean()), m_(A.rows()) {
    detail::check_dimensions(A, noise, prior);
    if (!prior.is_proper()) detail::check_nullspace_probed(A, noise, prior);
    const Eigen::MatrixXd lpr = prior.whitening();
    stacked_.resize(m_ + lpr.rows(), A.cols());
    stacked_.topRows(m_) = noise_whitening_ * A;
    stacked_.bottomRows(lpr.rows()) = lpr;
    prior_rhs_ = lpr * prior.mean();
    qr_.compute(stacked_);
    if (qr_.rank() < A.cols()) {
      Eigen::VectorXd direction = Eigen::VectorXd::Zero(A.cols());
      const Eigen::MatrixXd kernel = Eigen::FullPivLU<Eigen::MatrixXd>(stacked_).kernel();
      if (kernel.cols() > 0) direction = kernel.col(0).normalized();
      throw DegeneracyError("stacked least-squares system is rank deficient", direction);
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    if (b.size() != m_) throw ArgumentError("MapSolver: measurement length does not match A");
    return qr_.solve(rhs(b));
  }

  /// Solves for every column of B.
  Eigen::MatrixXd solve_many(const Eigen::MatrixXd& B) const {
    if (B.rows() != m_) throw ArgumentError("MapSolver: measurement length does not match A");
    Eigen::MatrixXd rhs_all(stacked_.rows(), B.cols());
    rhs_all.topRows(m_) = noise_whitening_ * (B.colwise() - noise_mean_);
    rhs_all.bottomRows(prior_rhs_.size()) = prior_rhs_.replicate(1, B.cols());
    return qr_.solve(rhs_all);
  }

  /// A# = (S^T S)^{-1} S^T [L_eps; 0] with S the stacked matrix.
  Eigen::MatrixXd pseudoinverse() const {
    Eigen::MatrixXd rhs_all = Eigen::MatrixXd::Zero(stacked_.rows(), m_);
    rhs_all.topRows(m_) = noise_whitening_;
    return qr_.solve(rhs_all);
  }

 private:
  Eigen::VectorXd rhs(const Eigen::VectorXd& b) const {
    Eigen::VectorXd r(stacked_.rows());
    r.head(m_) = noise_whitening_ * (b - noise_mean_);
    r.tail(prior_rhs_.size()) = prior_rhs_;
    return r;
  }

  Eigen::MatrixXd noise_whitening_;
  Eigen::VectorXd noise_mean_;
  Index m_;
  Eigen::MatrixXd stacked_;
  Eigen::VectorXd prior_rhs_;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

inline Eigen::VectorXd map_via_lsq(const Eigen::MatrixXd& A, const NoiseModel& noise,
                                   const GaussianPrior& prior, const Eigen::VectorXd& b) {
  return MapSolver(A, noise, prior).solve(b);
}

inline Eigen::MatrixXd augmented_pseudoinverse(const Eigen::MatrixXd& A, const NoiseModel& noise,
                                               const GaussianPrior& prior) {
  return MapSolver(A, noise, prior).pseudoinverse();
}

struct ResolutionMatrix {
  Eigen::MatrixXd R;        // A# A; column j is the point-spread function of node j
  Eigen::MatrixXd A_sharp;  // N x M augmented pseudoinverse
};

inline ResolutionMatrix resolution_matrix(const Eigen::MatrixXd& A, const NoiseModel& noise,
                                          const GaussianPrior& prior) {
  ResolutionMatrix out;
  out.A_sharp = augmented_pseudoinverse(A, noise, prior);
  out.R = out.A_sharp * A;
  return out;
}

/// Draws from N(mean, cov) as mean + F z with F F^T = cov. Uses a Cholesky
/// factor when it exists and falls back to a clipped eigendecomposition for
/// semidefinite covariances.
class MvnSampler {
 public:
  MvnSampler(Eigen::VectorXd mean, const Eigen::MatrixXd& cov) : mean_(std::move(mean)) {
    if (cov.rows() != mean_.size() || cov.cols() != mean_.size()) {
      throw ArgumentError("MvnSampler: covariance must be N x N with N = len(mean)");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) {
      factor_ = llt.matrixL();
      return;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (cov + cov.transpose()));
    const Eigen::VectorXd& ev = eig.eigenvalues();
    if (ev.size() > 0 && ev.minCoeff() < -1e-10 * std::abs(ev.maxCoeff())) {
      throw NumericError("MvnSampler: covariance is not positive semidefinite");
    }
    factor_ = eig.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }

  /// N x n_samples matrix, one draw per column; deterministic per seed.
  Eigen::MatrixXd draw(Index n_samples, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd z(mean_.size(), n_samples);
    for (Index c = 0; c < n_samples; ++c) {
      for (Index r = 0; r < mean_.size(); ++r) z(r, c) = normal(rng);
    }
    Eigen::MatrixXd x = factor_ * z;
    x.colwise() += mean_;
    return x;
  }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd factor_;
};

inline Eigen::MatrixXd sample_prior(const GaussianPrior& prior, Index n_samples,
                                    std::uint64_t seed) {
  return MvnSampler(prior.mean(), prior.covariance()).draw(n_samples, seed);
}

inline Eigen::MatrixXd sample_noise(const NoiseModel& noise, Index n_samples, std::uint64_t seed) {
  return MvnSampler(noise.mean(), noise.covariance()).draw(n_samples, seed);
}

/// Unbiased sample covariance of the columns of X.
inline Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& X) {
  const Eigen::VectorXd mean = X.rowwise().mean();
  const Eigen::MatrixXd centered = X.colwise() - mean;
  return centered * centered.transpose() / static_cast<double>(X.cols() - 1);
}

}  // namespace bayestomo
