#pragma once

// Straight measurement beams and the sensitivity matrix A that maps nodal
// values to line integrals along them.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bayestomo/errors.hpp"
#include "bayestomo/grid.hpp"

namespace bayestomo {

struct Beam {
  Point start;
  Point end;

  Beam(Point s, Point e) : start(std::move(s)), end(std::move(e)) {
    if ((start - end).norm() == 0.0) throw ArgumentError("Beam: start and end coincide");
  }

  double length() const { return (end - start).norm(); }
  Point direction() const { return (end - start) / length(); }
};

using BeamSet = std::vector<Beam>;

/// Portion of the segment start->end inside the domain (Liang-Barsky).
inline std::optional<std::pair<Point, Point>> clip_to_domain(const Domain& d, const Point& start,
                                                             const Point& end) {
  const Point delta = end - start;
  double t0 = 0.0;
  double t1 = 1.0;
  const std::array<double, 4> p{-delta.x(), delta.x(), -delta.y(), delta.y()};
  const std::array<double, 4> q{start.x() - d.x_min, d.x_max - start.x(), start.y() - d.y_min,
                                d.y_max - start.y()};
  for (int k = 0; k < 4; ++k) {
    if (p[k] == 0.0) {
      if (q[k] < 0.0) return std::nullopt;
      continue;
    }
    const double r = q[k] / p[k];
    if (p[k] < 0.0) {
      t0 = std::max(t0, r);
    } else {
      t1 = std::min(t1, r);
    }
    if (t0 > t1) return std::nullopt;
  }
  if (t1 - t0 <= 0.0) return std::nullopt;
  return std::make_pair(Point(start + t0 * delta), Point(start + t1 * delta));
}

/// Dense M x N matrix with A(i, j) = integral of basis j along beam i.
struct SensitivityMatrix {
  Eigen::MatrixXd A;
  Grid grid;
  BeamSet beams;

  Index rows() const { return A.rows(); }
  Index cols() const { return A.cols(); }
};

namespace detail {

// Snaps lattice coordinates that land on a grid line up to rounding, so a beam
// running along a grid line gives exact zeros to the neighbouring rows.
inline double snap_lattice(double t) {
  const double r = std::round(t);
  return std::abs(t - r) < 1e-9 ? r : t;
}

// Sorted parameters in (0, length) where the chord crosses a grid line. Between
// consecutive crossings the integrand is a polynomial of degree <= 2.
inline std::vector<double> grid_crossings(const Grid& g, const Point& a, const Point& b) {
  const double length = (b - a).norm();
  const Point dir = (b - a) / length;
  std::vector<double> ts{0.0, length};
  auto add_axis = [&](double origin, double h, Index n, double pa, double dcomp) {
    if (std::abs(dcomp) < 1e-15) return;
    for (Index k = 0; k < n; ++k) {
      const double t = (origin + static_cast<double>(k) * h - pa) / dcomp;
      if (t > 0.0 && t < length) ts.push_back(t);
    }
  };
  add_axis(g.domain().x_min, g.hx(), g.nx(), a.x(), dir.x());
  add_axis(g.domain().y_min, g.hy(), g.ny(), a.y(), dir.y());
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end(),
                       [length](double u, double v) { return v - u < 1e-14 * length; }),
           ts.end());
  return ts;
}

// Adds weight * a_j(p) to row i of A for the four corners of the cell (ix, iy).
inline void scatter_bilinear(const Grid& g, Index ix, Index iy, const Point& p, double weight,
                             Eigen::MatrixXd& A, Index i) {
  auto row = A.row(i);
  double fx = snap_lattice((p.x() - g.domain().x_min) / g.hx()) - static_cast<double>(ix);
  double fy = snap_lattice((p.y() - g.domain().y_min) / g.hy()) - static_cast<double>(iy);
  fx = std::clamp(fx, 0.0, 1.0);
  fy = std::clamp(fy, 0.0, 1.0);
  row[g.index(ix, iy)] += weight * (1 - fx) * (1 - fy);
  row[g.index(ix + 1, iy)] += weight * fx * (1 - fy);
  row[g.index(ix, iy + 1)] += weight * (1 - fx) * fy;
  row[g.index(ix + 1, iy + 1)] += weight * fx * fy;
}

}  // namespace detail

inline double default_quad_step(const Grid& grid) {
  return std::min(grid.hx(), grid.hy()) / 10.0;
}

/// Integrates every basis function along every beam. The in-domain chord is
/// split at grid-line crossings and each piece is covered by sub-intervals of
/// length <= quad_step with a two-point Gauss-Legendre rule, which is exact for
/// the piecewise-quadratic integrand.
inline SensitivityMatrix assemble_sensitivity(const Grid& grid, const BeamSet& beams,
                                              double quad_step) {
  if (beams.empty()) throw ArgumentError("assemble_sensitivity: empty beam set");
  if (!(quad_step > 0.0) || quad_step > std::min(grid.hx(), grid.hy()) / 2.0 * (1 + 1e-12)) {
    throw ArgumentError("assemble_sensitivity: quad_step must lie in (0, min(hx, hy)/2]");
  }
  const Index m = static_cast<Index>(beams.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, grid.size());
  const double gauss = 0.5 / std::numbers::sqrt3;

#pragma omp parallel for schedule(dynamic)
  for (Index i = 0; i < m; ++i) {
    const auto chord = clip_to_domain(grid.domain(), beams[i].start, beams[i].end);
    if (!chord) continue;
    const auto& [a, b] = *chord;
    const Point dir = (b - a).normalized();
    const auto ts = detail::grid_crossings(grid, a, b);
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
      const double t0 = ts[k];
      const double t1 = ts[k + 1];
      const Point mid = a + 0.5 * (t0 + t1) * dir;
      const Index ix = std::clamp<Index>(
          static_cast<Index>(std::floor((mid.x() - grid.domain().x_min) / grid.hx())), 0,
          grid.nx() - 2);
      const Index iy = std::clamp<Index>(
          static_cast<Index>(std::floor((mid.y() - grid.domain().y_min) / grid.hy())), 0,
          grid.ny() - 2);
      const auto n_sub = std::max<Index>(1, static_cast<Index>(std::ceil((t1 - t0) / quad_step)));
      const double ds = (t1 - t0) / static_cast<double>(n_sub);
      for (Index s = 0; s < n_sub; ++s) {
        const double c = t0 + (static_cast<double>(s) + 0.5) * ds;
        for (const double off : {-gauss, gauss}) {
          detail::scatter_bilinear(grid, ix, iy, a + (c + off * ds) * dir, 0.5 * ds, A, i);
        }
      }
    }
  }
  return {std::move(A), grid, beams};
}

inline SensitivityMatrix assemble_sensitivity(const Grid& grid, const BeamSet& beams) {
  return assemble_sensitivity(grid, beams, default_quad_step(grid));
}

/// b = A x.
inline Eigen::VectorXd project(const SensitivityMatrix& A, const Field& x) {
  if (x.values().size() != A.cols()) throw ArgumentError("project: dimension mismatch");
  return A.A * x.values();
}

/// n_beams parallel chords with direction (cos angle, sin angle), offsets
/// spread evenly across the projected extent of the domain so that no beam
/// lies on the boundary.
inline BeamSet parallel_projection(const Domain& domain, double angle, int n_beams) {
  if (n_beams < 1) throw ArgumentError("parallel_projection: n_beams must be >= 1");
  const Point dir(std::cos(angle), std::sin(angle));
  const Point normal(-dir.y(), dir.x());
  const double extent =
      domain.width() * std::abs(normal.x()) + domain.height() * std::abs(normal.y());
  const double spacing = extent / (n_beams + 1);
  const double reach = std::hypot(domain.width(), domain.height());
  const Point c = domain.center();
  BeamSet beams;
  beams.reserve(static_cast<std::size_t>(n_beams));
  for (int k = 1; k <= n_beams; ++k) {
    const double offset = (k - 0.5 * (n_beams + 1)) * spacing;
    const Point foot = c + offset * normal;
    const auto chord = clip_to_domain(domain, foot - reach * dir, foot + reach * dir);
    if (!chord) throw NumericError("parallel_projection: chord misses the domain");
    beams.emplace_back(chord->first, chord->second);
  }
  return beams;
}

/// n chords between two uniform points on the domain boundary lying on
/// different edges. Deterministic for a given seed.
inline BeamSet random_beams(const Domain& domain, int n, std::uint64_t seed) {
  if (n < 0) throw ArgumentError("random_beams: n must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double w = domain.width();
  const double h = domain.height();
  const double perimeter = 2 * (w + h);
  // Edge 0: bottom, 1: right, 2: top, 3: left (counter-clockwise).
  auto sample = [&]() -> std::pair<int, Point> {
    double s = unit(rng) * perimeter;
    if (s < w) return {0, {domain.x_min + s, domain.y_min}};
    s -= w;
    if (s < h) return {1, {domain.x_max, domain.y_min + s}};
    s -= h;
    if (s < w) return {2, {domain.x_max - s, domain.y_max}};
    s -= w;
    return {3, {domain.x_min, domain.y_max - s}};
  };
  BeamSet beams;
  beams.reserve(static_cast<std::size_t>(n));
  while (static_cast<int>(beams.size()) < n) {
    const auto [e0, p0] = sample();
    const auto [e1, p1] = sample();
    if (e0 == e1 || (p0 - p1).norm() == 0.0) continue;
    beams.emplace_back(p0, p1);
  }
  return beams;
}

/// Nodes whose basis support no beam touches, i.e. zero columns of A.
inline std::vector<Index> blind_nodes(const SensitivityMatrix& A) {
  std::vector<Index> out;
  for (Index j = 0; j < A.cols(); ++j) {
    if (A.A.col(j).cwiseAbs().maxCoeff() == 0.0) out.push_back(j);
  }
  return out;
}

}  // namespace bayestomo
