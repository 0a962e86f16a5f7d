#pragma once

// Multivariate normal noise and prior models: proper squared-exponential
// covariances and improper Tikhonov priors defined through a whitening
// operator, plus the null-space machinery that turns the latter into an
// approximate proper covariance.

#include <cmath>
#include <optional>
#include <utility>
#include <variant>

#include <Eigen/Dense>

#include "bayestomo/errors.hpp"
#include "bayestomo/grid.hpp"

namespace bayestomo {

namespace detail {

// (M + M^T) / 2 in place; the eval avoids reading M while it is overwritten.
inline void symmetrize(Eigen::MatrixXd& m) { m = (0.5 * (m + m.transpose())).eval(); }

}  // namespace detail

/// Measurement error model eps ~ N(mu_eps, Gamma_eps).
class NoiseModel {
 public:
  /// Independent, identically distributed errors: mu = 0, Gamma = sigma^2 I.
  static NoiseModel iid(Index m, double sigma_eps) {
    if (!(sigma_eps > 0.0)) throw ArgumentError("NoiseModel: sigma_eps must be positive");
    NoiseModel n;
    n.mu_ = Eigen::VectorXd::Zero(m);
    n.gamma_ = Eigen::MatrixXd::Identity(m, m) * (sigma_eps * sigma_eps);
    n.sigma_ = sigma_eps;
    n.factor();
    return n;
  }

  static NoiseModel general(Eigen::VectorXd mu, Eigen::MatrixXd gamma) {
    if (gamma.rows() != gamma.cols() || gamma.rows() != mu.size()) {
      throw ArgumentError("NoiseModel: covariance must be M x M with M = len(mu)");
    }
    NoiseModel n;
    n.mu_ = std::move(mu);
    n.gamma_ = 0.5 * (gamma + gamma.transpose());
    n.sigma_ = std::sqrt(n.gamma_.diagonal().mean());
    n.factor();
    return n;
  }

  Index size() const { return mu_.size(); }
  const Eigen::VectorXd& mean() const { return mu_; }
  const Eigen::MatrixXd& covariance() const { return gamma_; }
  /// Representative scalar noise level (exact for the iid model).
  double sigma() const { return sigma_; }
  const Eigen::MatrixXd& precision() const { return precision_; }
  /// L_eps with L_eps^T L_eps = Gamma_eps^{-1}.
  const Eigen::MatrixXd& whitening() const { return whitening_; }

 private:
  NoiseModel() = default;

  void factor() {
    Eigen::LLT<Eigen::MatrixXd> llt(gamma_);
    if (llt.info() != Eigen::Success) {
      throw NumericError("NoiseModel: covariance is not positive definite");
    }
    const Index m = gamma_.rows();
    whitening_ = llt.matrixL().solve(Eigen::MatrixXd::Identity(m, m));
    precision_ = whitening_.transpose() * whitening_;
  }

  Eigen::VectorXd mu_;
  Eigen::MatrixXd gamma_;
  double sigma_ = 0.0;
  Eigen::MatrixXd precision_;
  Eigen::MatrixXd whitening_;
};

/// SVD-derived metadata of a (possibly rank-deficient) operator.
struct OperatorSpectrum {
  Eigen::VectorXd singular_values;  // descending
  Eigen::MatrixXd nullspace;        // Q, orthonormal columns
  Eigen::MatrixXd pinv;             // Moore-Penrose pseudoinverse
};

inline constexpr double kDefaultNullspaceTol = 1e-10;

/// Singular values, null-space basis and pseudoinverse of op. Singular values
/// below tol_rel * s_1 are treated as zero; when op has fewer rows than
/// columns the trailing right singular vectors also belong to the null space.
inline OperatorSpectrum operator_spectrum(const Eigen::MatrixXd& op,
                                          double tol_rel = kDefaultNullspaceTol) {
  if (!(tol_rel > 0.0 && tol_rel < 1.0)) {
    throw ArgumentError("nullspace tolerance must lie in (0, 1)");
  }
  const Index n = op.cols();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(op, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? tol_rel * s[0] : 0.0;
  Index rank = 0;
  while (rank < s.size() && s[rank] > cutoff) ++rank;

  OperatorSpectrum out;
  out.singular_values = s;
  out.nullspace = svd.matrixV().rightCols(n - rank);
  const Eigen::MatrixXd& u = svd.matrixU();
  const Eigen::MatrixXd& v = svd.matrixV();
  out.pinv = v.leftCols(rank) * s.head(rank).cwiseInverse().asDiagonal() *
             u.leftCols(rank).transpose();
  return out;
}

/// Orthonormal basis Q of the numerical null space of op (possibly empty).
inline Eigen::MatrixXd nullspace_basis(const Eigen::MatrixXd& op,
                                       double tol_rel = kDefaultNullspaceTol) {
  return operator_spectrum(op, tol_rel).nullspace;
}

/// Proper prior: explicit symmetric positive definite covariance.
struct ProperCovariance {
  Eigen::MatrixXd covariance;
};

/// Improper Tikhonov prior with precision gamma^2 L^T L.
struct ImproperTikhonov {
  Eigen::MatrixXd op;  // L_Tik, N_Tik x N
  double gamma = 1.0;
  OperatorSpectrum spectrum;
};

class GaussianPrior {
 public:
  using Form = std::variant<ProperCovariance, ImproperTikhonov>;

  /// Symmetrizes cov and rejects matrices with eigenvalues below
  /// -1e-10 * (largest eigenvalue).
  static GaussianPrior proper(Eigen::VectorXd mu, const Eigen::MatrixXd& cov) {
    if (cov.rows() != cov.cols() || cov.rows() != mu.size()) {
      throw ArgumentError("GaussianPrior: covariance must be N x N with N = len(mu)");
    }
    Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
    if (sym.size() > 0) {
      const Eigen::VectorXd ev =
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym, Eigen::EigenvaluesOnly).eigenvalues();
      if (ev.minCoeff() < -1e-10 * std::abs(ev.maxCoeff())) {
        throw NumericError("GaussianPrior: covariance is not positive semidefinite");
      }
    }
    return GaussianPrior(std::move(mu), ProperCovariance{std::move(sym)});
  }

  /// Improper prior with zero mean and precision gamma^2 L^T L.
  static GaussianPrior tikhonov(const Eigen::MatrixXd& op, double gamma,
                                double tol_rel = kDefaultNullspaceTol) {
    if (!(gamma > 0.0)) throw ArgumentError("GaussianPrior: gamma must be positive");
    return GaussianPrior(Eigen::VectorXd::Zero(op.cols()),
                         ImproperTikhonov{op, gamma, operator_spectrum(op, tol_rel)});
  }

  Index size() const { return mu_.size(); }
  const Eigen::VectorXd& mean() const { return mu_; }
  const Form& form() const { return form_; }
  bool is_proper() const { return std::holds_alternative<ProperCovariance>(form_); }

  /// Covariance of a proper prior.
  const Eigen::MatrixXd& covariance() const {
    if (!is_proper()) throw UnsupportedPriorError("improper prior has no covariance");
    return std::get<ProperCovariance>(form_).covariance;
  }

  const ImproperTikhonov& tikhonov_form() const {
    if (is_proper()) throw UnsupportedPriorError("prior is not an improper Tikhonov prior");
    return std::get<ImproperTikhonov>(form_);
  }

  /// Gamma_pr^{-1}. For proper priors this goes through a Cholesky solve and
  /// inherits the conditioning of the covariance.
  Eigen::MatrixXd precision() const {
    if (is_proper()) {
      const Eigen::MatrixXd c = cholesky_factor();
      const Eigen::MatrixXd w = c.triangularView<Eigen::Lower>().solve(
          Eigen::MatrixXd::Identity(size(), size()));
      return w.transpose() * w;
    }
    const auto& t = tikhonov_form();
    return t.gamma * t.gamma * (t.op.transpose() * t.op);
  }

  /// L_pr with L_pr^T L_pr = Gamma_pr^{-1}: C^{-1} for Gamma_pr = C C^T, or
  /// gamma * L_Tik for the improper case.
  Eigen::MatrixXd whitening() const {
    if (is_proper()) {
      const Eigen::MatrixXd c = cholesky_factor();
      return c.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(size(), size()));
    }
    const auto& t = tikhonov_form();
    return t.gamma * t.op;
  }

  /// Null-space basis of the precision (empty for proper priors).
  Eigen::MatrixXd nullspace() const {
    if (is_proper()) return Eigen::MatrixXd(size(), 0);
    return tikhonov_form().spectrum.nullspace;
  }

 private:
  GaussianPrior(Eigen::VectorXd mu, Form form) : mu_(std::move(mu)), form_(std::move(form)) {}

  Eigen::MatrixXd cholesky_factor() const {
    Eigen::LLT<Eigen::MatrixXd> llt(covariance());
    if (llt.info() != Eigen::Success) {
      throw NumericError("GaussianPrior: covariance does not admit a Cholesky factor");
    }
    return llt.matrixL();
  }

  Eigen::VectorXd mu_;
  Form form_;
};

inline constexpr double kCovarianceJitter = 1e-10;

/// Stationary kernel sigma^2 exp(-|r_i - r_j|^2 / d_corr^2) over the grid
/// nodes, with 1e-10 sigma^2 added to the diagonal.
inline Eigen::MatrixXd squared_exponential_covariance(const Grid& grid, double sigma_pr,
                                                      double d_corr) {
  if (!(sigma_pr > 0.0) || !(d_corr > 0.0)) {
    throw ArgumentError("squared exponential: sigma_pr and d_corr must be positive");
  }
  const Index n = grid.size();
  const double var = sigma_pr * sigma_pr;
  const double inv_d2 = 1.0 / (d_corr * d_corr);
  Eigen::MatrixXd cov(n, n);
  // offsets from integer lattice steps, so equal offsets give identical entries
  for (Index j = 0; j < n; ++j) {
    for (Index i = j; i < n; ++i) {
      const double dx = static_cast<double>(grid.column_of(i) - grid.column_of(j)) * grid.hx();
      const double dy = static_cast<double>(grid.row_of(i) - grid.row_of(j)) * grid.hy();
      const double v = var * std::exp(-(dx * dx + dy * dy) * inv_d2);
      cov(i, j) = v;
      cov(j, i) = v;
    }
  }
  cov.diagonal().array() += kCovarianceJitter * var;
  return cov;
}

inline GaussianPrior squared_exponential_prior(const Grid& grid, double mu, double sigma_pr,
                                               double d_corr) {
  return GaussianPrior::proper(Eigen::VectorXd::Constant(grid.size(), mu),
                               squared_exponential_covariance(grid, sigma_pr, d_corr));
}

/// Five-point Laplacian (4 on the diagonal, -1 per lattice neighbour, scaled
/// by 1 / (hx hy)). Missing neighbours at the boundary are mirrored onto the
/// opposite neighbour, so the operator annihilates constants.
inline Eigen::MatrixXd laplacian_operator(const Grid& grid) {
  if (grid.nx() < 3 || grid.ny() < 3) throw ArgumentError("laplacian_operator: need nx, ny >= 3");
  const Index n = grid.size();
  const double scale = 1.0 / (grid.hx() * grid.hy());
  Eigen::MatrixXd op = Eigen::MatrixXd::Zero(n, n);
  auto mirror = [](Index k, Index count) {
    if (k < 0) return -k;
    if (k >= count) return 2 * (count - 1) - k;
    return k;
  };
  for (Index iy = 0; iy < grid.ny(); ++iy) {
    for (Index ix = 0; ix < grid.nx(); ++ix) {
      const Index row = grid.index(ix, iy);
      op(row, row) += 4.0 * scale;
      op(row, grid.index(mirror(ix - 1, grid.nx()), iy)) -= scale;
      op(row, grid.index(mirror(ix + 1, grid.nx()), iy)) -= scale;
      op(row, grid.index(ix, mirror(iy - 1, grid.ny()))) -= scale;
      op(row, grid.index(ix, mirror(iy + 1, grid.ny()))) -= scale;
    }
  }
  return op;
}

inline Eigen::MatrixXd identity_operator(Index n) { return Eigen::MatrixXd::Identity(n, n); }

/// (1/gamma^2) L^+ (L^+)^T + (a^2/gamma^2) Q Q^T, symmetrized.
inline Eigen::MatrixXd augmented_tikhonov_covariance(const OperatorSpectrum& spec, double gamma,
                                                     double a) {
  if (!(gamma > 0.0) || !(a > 0.0)) {
    throw ArgumentError("augmented_tikhonov_covariance: gamma and a must be positive");
  }
  const double g2 = gamma * gamma;
  Eigen::MatrixXd cov = (spec.pinv * spec.pinv.transpose()) / g2;
  cov.noalias() += (a * a / g2) * (spec.nullspace * spec.nullspace.transpose());
  return 0.5 * (cov + cov.transpose());
}

inline Eigen::MatrixXd augmented_tikhonov_covariance(const Eigen::MatrixXd& op, double gamma,
                                                     double a,
                                                     double tol_rel = kDefaultNullspaceTol) {
  return augmented_tikhonov_covariance(operator_spectrum(op, tol_rel), gamma, a);
}

/// Proper stand-in for an improper Tikhonov prior at finite a.
inline GaussianPrior augmented_tikhonov_prior(const GaussianPrior& improper, double a) {
  const auto& t = improper.tikhonov_form();
  return GaussianPrior::proper(improper.mean(),
                               augmented_tikhonov_covariance(t.spectrum, t.gamma, a));
}

}  // namespace bayestomo
