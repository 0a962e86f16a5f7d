#pragma once

// Covariance of the MAP point estimate and the scalar spatial resolution
// derived from it.
//
// Gamma_MAP propagates the prior predictive distribution of the measurements
// through the (linear) MAP estimator. Column j of Gamma_MAP is treated as a
// surrogate point-spread function of node j: its 2D spectrum is thresholded
// relative to its peak, the lowest radial frequency on the threshold contour is
// the cutoff f_c, and the resolution is delta = 1 / (2 f_c).

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "bayestomo/errors.hpp"
#include "bayestomo/grid.hpp"
#include "bayestomo/inference.hpp"
#include "bayestomo/priors.hpp"

namespace bayestomo {

struct PriorPredictive {
  Eigen::VectorXd mean;        // A mu_pr + mu_eps
  Eigen::MatrixXd covariance;  // A Gamma_pr A^T + Gamma_eps
};

inline PriorPredictive prior_predictive(const Eigen::MatrixXd& A, const NoiseModel& noise,
                                        const Eigen::VectorXd& prior_mean,
                                        const Eigen::MatrixXd& prior_cov) {
  if (A.rows() != noise.size() || A.cols() != prior_cov.rows() ||
      prior_cov.rows() != prior_cov.cols() || prior_mean.size() != A.cols()) {
    throw ArgumentError("prior_predictive: dimension mismatch");
  }
  PriorPredictive out;
  out.mean = A * prior_mean + noise.mean();
  out.covariance = A * prior_cov * A.transpose() + noise.covariance();
  detail::symmetrize(out.covariance);
  return out;
}

inline PriorPredictive prior_predictive(const Eigen::MatrixXd& A, const NoiseModel& noise,
                                        const GaussianPrior& prior) {
  return prior_predictive(A, noise, prior.mean(), prior.covariance());
}

enum class MapCovarianceMode { proper, tikhonov_limit };

struct MapCovariance {
  Eigen::MatrixXd covariance;
  Eigen::VectorXd mean;
  MapCovarianceMode mode = MapCovarianceMode::proper;
};

/// Gamma_MAP = K Gamma_b K^T with K = Gamma_post A^T Gamma_eps^{-1} and
/// Gamma_b = A Gamma_pr A^T + Gamma_eps; the mean is the MAP of the mean
/// measurement A mu_pr. Requires a proper prior.
inline MapCovariance map_covariance(const Eigen::MatrixXd& A, const NoiseModel& noise,
                                    const GaussianPrior& prior) {
  if (!prior.is_proper()) {
    throw UnsupportedPriorError(
        "map_covariance needs a proper prior; use tikhonov_limit_covariance for improper ones");
  }
  const auto ops = posterior_operators(A, noise, prior);
  const auto pp = prior_predictive(A, noise, prior);
  MapCovariance out;
  out.covariance = ops.gain * pp.covariance * ops.gain.transpose();
  detail::symmetrize(out.covariance);
  out.mean = ops.mean(A, noise, prior, A * prior.mean());
  out.mode = MapCovarianceMode::proper;
  return out;
}

/// a -> infinity limit of Gamma_MAP / (c a^2) for an augmented Tikhonov prior
/// whose null space is the constant vector:
///   (1/gamma^2) Gamma_post A^T Gamma_eps^{-1} A 1 1^T A^T Gamma_eps^{-1} A Gamma_post,
/// assembled as the outer product w w^T with w = (1/gamma) K A 1.
inline MapCovariance tikhonov_limit_covariance(const Eigen::MatrixXd& A, const NoiseModel& noise,
                                               const GaussianPrior& improper) {
  const auto& t = improper.tikhonov_form();
  const Eigen::MatrixXd& q = t.spectrum.nullspace;
  if (q.cols() != 1) {
    throw UnsupportedPriorError("tikhonov limit requires a one-dimensional null space, got " +
                                std::to_string(q.cols()));
  }
  const Index n = improper.size();
  const double expected = 1.0 / std::sqrt(static_cast<double>(n));
  if ((q.col(0).cwiseAbs().array() - expected).abs().maxCoeff() > 1e-8 ||
      std::abs(q.col(0).sum()) < 0.5 * expected) {
    throw ArgumentError("tikhonov limit requires the null space to be the constant vector");
  }
  const auto ops = posterior_operators(A, noise, improper);
  const Eigen::VectorXd w = ops.gain * (A * Eigen::VectorXd::Ones(n)) / t.gamma;
  MapCovariance out;
  out.covariance = w * w.transpose();
  out.mean = ops.mean(A, noise, improper, A * improper.mean());
  out.mode = MapCovarianceMode::tikhonov_limit;
  return out;
}

inline MapCovariance tikhonov_limit_covariance(const Eigen::MatrixXd& A, const NoiseModel& noise,
                                               const Eigen::MatrixXd& op, double gamma) {
  return tikhonov_limit_covariance(A, noise, GaussianPrior::tikhonov(op, gamma));
}

/// sigma_x^2 R R^T: image covariance of an idealised camera with PSF matrix R
/// observing white noise of variance sigma_x^2.
inline Eigen::MatrixXd camera_covariance(const Eigen::MatrixXd& R, double sigma_x) {
  return sigma_x * sigma_x * (R * R.transpose());
}

inline Eigen::MatrixXd camera_covariance(const ResolutionMatrix& R, double sigma_x) {
  return camera_covariance(R.R, sigma_x);
}

/// Magnitude spectrum of one covariance column on the (zero-padded) lattice.
/// amplitudes(r, c) belongs to frequency (freq_u[c], freq_v[r]); both axes are
/// centred so the DC bin sits at index floor(P / 2).
struct SpectralColumn {
  Eigen::MatrixXd amplitudes;
  Eigen::VectorXd freq_u;
  Eigen::VectorXd freq_v;
  Index node = -1;

  double du() const { return freq_u.size() > 1 ? freq_u[1] - freq_u[0] : 0.0; }
  double dv() const { return freq_v.size() > 1 ? freq_v[1] - freq_v[0] : 0.0; }
  double nyquist_u() const { return 0.5 * static_cast<double>(freq_u.size()) * du(); }
  double nyquist_v() const { return 0.5 * static_cast<double>(freq_v.size()) * dv(); }
};

/// Centred frequency axis of a P-point DFT with sample spacing h.
inline Eigen::VectorXd centered_frequencies(Index p, double h) {
  Eigen::VectorXd f(p);
  const Index c = p / 2;
  for (Index k = 0; k < p; ++k) f[k] = static_cast<double>(k - c) / (static_cast<double>(p) * h);
  return f;
}

namespace detail {

inline double hann(Index k, Index n) {
  return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(k) /
                               static_cast<double>(n - 1)));
}

// In-place 1D transforms along both axes of a row-major (rows x cols) buffer.
inline void fft2(std::vector<std::complex<double>>& data, Index rows, Index cols) {
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> in(static_cast<std::size_t>(std::max(rows, cols)));
  std::vector<std::complex<double>> out;
  for (Index r = 0; r < rows; ++r) {
    in.assign(data.begin() + r * cols, data.begin() + (r + 1) * cols);
    fft.fwd(out, in);
    std::copy(out.begin(), out.end(), data.begin() + r * cols);
  }
  in.resize(static_cast<std::size_t>(rows));
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) in[r] = data[r * cols + c];
    fft.fwd(out, in);
    for (Index r = 0; r < rows; ++r) data[r * cols + c] = out[r];
  }
}

}  // namespace detail

/// 2D DFT magnitude of column j of cov reshaped onto the lattice, zero-padded
/// to (pad_factor nx) x (pad_factor ny). The column is rescaled by a power of
/// two before the transform, which keeps huge or tiny covariances in range
/// without perturbing any bit of the relative spectrum.
inline SpectralColumn spectral_column(const Grid& grid, const Eigen::MatrixXd& cov, Index j,
                                      int pad_factor, bool window = false) {
  if (j < 0 || j >= grid.size()) throw ArgumentError("spectral_column: node index out of range");
  if (cov.rows() != grid.size() || cov.cols() != grid.size()) {
    throw ArgumentError("spectral_column: covariance must be N x N");
  }
  if (pad_factor < 1) throw ArgumentError("spectral_column: pad_factor must be >= 1");
  const Index pu = pad_factor * grid.nx();
  const Index pv = pad_factor * grid.ny();

  const double peak = cov.col(j).cwiseAbs().maxCoeff();
  int exponent = 0;
  if (peak > 0.0 && std::isfinite(peak)) std::frexp(peak, &exponent);

  std::vector<std::complex<double>> buf(static_cast<std::size_t>(pu * pv));
  for (Index iy = 0; iy < grid.ny(); ++iy) {
    for (Index ix = 0; ix < grid.nx(); ++ix) {
      double v = std::ldexp(cov(grid.index(ix, iy), j), -exponent);
      if (window) v *= detail::hann(ix, grid.nx()) * detail::hann(iy, grid.ny());
      buf[static_cast<std::size_t>(iy * pu + ix)] = v;
    }
  }
  detail::fft2(buf, pv, pu);

  SpectralColumn out;
  out.node = j;
  out.freq_u = centered_frequencies(pu, grid.hx());
  out.freq_v = centered_frequencies(pv, grid.hy());
  out.amplitudes.resize(pv, pu);
  const Index cu = pu / 2;
  const Index cv = pv / 2;
  for (Index r = 0; r < pv; ++r) {
    const Index sr = (r - cv + pv) % pv;
    for (Index c = 0; c < pu; ++c) {
      const Index sc = (c - cu + pu) % pu;
      out.amplitudes(r, c) = std::abs(buf[static_cast<std::size_t>(sr * pu + sc)]);
    }
  }
  return out;
}

/// How the relative threshold alpha_th is applied to |P|.
enum class AmplitudeMode {
  squared,  // threshold |P| at alpha_th^2 of its peak
  sqrt,     // threshold sqrt|P| at alpha_th of its peak
};

enum class ResolutionFlag { ok, zero_column, no_crossing };

inline std::string_view to_string(ResolutionFlag f) {
  switch (f) {
    case ResolutionFlag::ok: return "ok";
    case ResolutionFlag::zero_column: return "zero_column";
    case ResolutionFlag::no_crossing: return "no_crossing";
  }
  return "unknown";
}

struct Cutoff {
  double f_c = std::numeric_limits<double>::quiet_NaN();
  ResolutionFlag flag = ResolutionFlag::ok;
};

inline constexpr int kDefaultAngles = 360;

namespace detail {

// Bilinear interpolation of a centred periodic spectrum at (u, v).
inline double interpolate_spectrum(const Eigen::MatrixXd& amp, double u, double v, double du,
                                   double dv) {
  const Index pu = amp.cols();
  const Index pv = amp.rows();
  const double tu = u / du + static_cast<double>(pu / 2);
  const double tv = v / dv + static_cast<double>(pv / 2);
  const double fu = std::floor(tu);
  const double fv = std::floor(tv);
  const double au = tu - fu;
  const double av = tv - fv;
  auto wrap = [](Index k, Index n) { return ((k % n) + n) % n; };
  const Index c0 = wrap(static_cast<Index>(fu), pu);
  const Index c1 = wrap(c0 + 1, pu);
  const Index r0 = wrap(static_cast<Index>(fv), pv);
  const Index r1 = wrap(r0 + 1, pv);
  return (1 - au) * (1 - av) * amp(r0, c0) + au * (1 - av) * amp(r0, c1) +
         (1 - au) * av * amp(r1, c0) + au * av * amp(r1, c1);
}

}  // namespace detail

/// Lowest radial frequency at which the spectrum falls below the relative
/// threshold. Marches outward from DC along n_angles equally spaced directions
/// with step = half the finest bin spacing; crossings are refined by linear
/// interpolation. Directions that never cross before the most restrictive
/// Nyquist radius are ignored; if none cross, f_c is that radius and the node
/// is flagged no_crossing.
inline Cutoff cutoff_frequency(const SpectralColumn& spec, double alpha_th,
                               int n_angles = kDefaultAngles,
                               AmplitudeMode mode = AmplitudeMode::squared) {
  if (!(alpha_th > 0.0 && alpha_th < 1.0)) {
    throw ArgumentError("cutoff_frequency: alpha_th must lie in (0, 1)");
  }
  if (n_angles < 1) throw ArgumentError("cutoff_frequency: n_angles must be >= 1");
  if (spec.amplitudes.size() == 0 || spec.freq_u.size() < 2 || spec.freq_v.size() < 2) {
    throw ArgumentError("cutoff_frequency: empty spectrum");
  }
  Eigen::MatrixXd amp = spec.amplitudes;
  double level = 0.0;
  const double peak = amp.maxCoeff();
  if (!(peak > 0.0)) return {std::numeric_limits<double>::quiet_NaN(), ResolutionFlag::zero_column};
  if (mode == AmplitudeMode::squared) {
    level = alpha_th * alpha_th * peak;
  } else {
    amp = amp.cwiseSqrt();
    level = alpha_th * std::sqrt(peak);
  }

  const double du = spec.du();
  const double dv = spec.dv();
  const double step = 0.5 * std::min(du, dv);
  const double r_max = std::min(spec.nyquist_u(), spec.nyquist_v());
  double best = std::numeric_limits<double>::infinity();

  for (int k = 0; k < n_angles; ++k) {
    const double theta = 2.0 * std::numbers::pi * k / n_angles;
    const double cu = std::cos(theta);
    const double sv = std::sin(theta);
    double r_prev = 0.0;
    double a_prev = detail::interpolate_spectrum(amp, 0.0, 0.0, du, dv);
    if (a_prev < level) {
      best = 0.0;
      break;
    }
    while (r_prev < r_max && r_prev < best) {
      const double r = std::min(r_prev + step, r_max);
      const double a = detail::interpolate_spectrum(amp, r * cu, r * sv, du, dv);
      if (a < level) {
        best = std::min(best, r_prev + (a_prev - level) / (a_prev - a) * (r - r_prev));
        break;
      }
      r_prev = r;
      a_prev = a;
    }
  }
  if (!std::isfinite(best)) return {r_max, ResolutionFlag::no_crossing};
  return {best, ResolutionFlag::ok};
}

struct ResolutionOptions {
  double alpha_th = 0.2;
  int pad_factor = 4;
  int n_angles = kDefaultAngles;
  AmplitudeMode mode = AmplitudeMode::squared;
  bool window = false;

  bool operator==(const ResolutionOptions&) const = default;
};

/// Per-node cutoff frequency and resolution. delta = 1 / (2 f_c) for ok and
/// no_crossing nodes (the latter at the Nyquist limit); zero_column nodes carry
/// NaN in both.
struct ResolutionField {
  Eigen::VectorXd f_c;
  Eigen::VectorXd delta;
  std::vector<ResolutionFlag> flags;
  double threshold_used = 0.0;

  bool valid(Index j) const { return flags[static_cast<std::size_t>(j)] == ResolutionFlag::ok; }
};

struct NodeResolution {
  double f_c = std::numeric_limits<double>::quiet_NaN();
  double delta = std::numeric_limits<double>::quiet_NaN();
  ResolutionFlag flag = ResolutionFlag::ok;
};

inline double threshold_level(const ResolutionOptions& opt) {
  return opt.mode == AmplitudeMode::squared ? opt.alpha_th * opt.alpha_th : opt.alpha_th;
}

inline NodeResolution resolution_at(const Grid& grid, const Eigen::MatrixXd& cov, Index j,
                                    const ResolutionOptions& opt = {}) {
  const auto spec = spectral_column(grid, cov, j, opt.pad_factor, opt.window);
  const auto cut = cutoff_frequency(spec, opt.alpha_th, opt.n_angles, opt.mode);
  NodeResolution out;
  out.f_c = cut.f_c;
  out.flag = cut.flag;
  if (cut.flag != ResolutionFlag::zero_column) out.delta = 1.0 / (2.0 * cut.f_c);
  return out;
}

inline ResolutionField resolution_field(const Grid& grid, const Eigen::MatrixXd& cov,
                                        const ResolutionOptions& opt = {}) {
  const Index n = grid.size();
  ResolutionField out;
  out.f_c.resize(n);
  out.delta.resize(n);
  out.flags.assign(static_cast<std::size_t>(n), ResolutionFlag::ok);
  out.threshold_used = threshold_level(opt);
#pragma omp parallel for schedule(dynamic)
  for (Index j = 0; j < n; ++j) {
    const auto r = resolution_at(grid, cov, j, opt);
    out.f_c[j] = r.f_c;
    out.delta[j] = r.delta;
    out.flags[static_cast<std::size_t>(j)] = r.flag;
  }
  return out;
}

}  // namespace bayestomo
