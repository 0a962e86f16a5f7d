#pragma once

// Imaging domain, regular lattice with bilinear nodal basis functions, and
// nodal fields living on it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "bayestomo/errors.hpp"

namespace bayestomo {

using Point = Eigen::Vector2d;
using Index = Eigen::Index;

struct Domain {
  double x_min = 0.0;
  double x_max = 1.0;
  double y_min = 0.0;
  double y_max = 1.0;

  Domain() = default;
  Domain(double x0, double x1, double y0, double y1)
      : x_min(x0), x_max(x1), y_min(y0), y_max(y1) {
    if (!(x_max > x_min) || !(y_max > y_min)) {
      throw ArgumentError("Domain: require x_max > x_min and y_max > y_min");
    }
  }

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  Point center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }

  /// Containment with a relative slack so nodes on the boundary count as inside.
  bool contains(const Point& p, double rel_tol = 1e-12) const {
    const double sx = rel_tol * width();
    const double sy = rel_tol * height();
    return p.x() >= x_min - sx && p.x() <= x_max + sx && p.y() >= y_min - sy &&
           p.y() <= y_max + sy;
  }

  bool operator==(const Domain&) const = default;
};

/// Regular nx-by-ny lattice covering the domain exactly. Node j sits at
/// column j % nx and row j / nx (row-major, x runs fastest).
class Grid {
 public:
  Grid(Domain domain, Index nx, Index ny) : domain_(domain), nx_(nx), ny_(ny) {
    if (nx < 2 || ny < 2) throw ArgumentError("Grid: nx and ny must be >= 2");
    hx_ = domain_.width() / static_cast<double>(nx_ - 1);
    hy_ = domain_.height() / static_cast<double>(ny_ - 1);
  }

  const Domain& domain() const { return domain_; }
  Index nx() const { return nx_; }
  Index ny() const { return ny_; }
  Index size() const { return nx_ * ny_; }
  double hx() const { return hx_; }
  double hy() const { return hy_; }

  Index index(Index ix, Index iy) const { return iy * nx_ + ix; }
  Index column_of(Index j) const { return j % nx_; }
  Index row_of(Index j) const { return j / nx_; }

  Point node(Index j) const {
    return {domain_.x_min + static_cast<double>(column_of(j)) * hx_,
            domain_.y_min + static_cast<double>(row_of(j)) * hy_};
  }

  /// N x 2 matrix of node positions.
  Eigen::MatrixX2d node_coords() const {
    Eigen::MatrixX2d coords(size(), 2);
    for (Index j = 0; j < size(); ++j) coords.row(j) = node(j).transpose();
    return coords;
  }

  /// Index of the node closest to p (ties resolve to the lower index).
  Index nearest_node(const Point& p) const {
    auto snap = [](double t, Index n) {
      const double r = std::floor(t + 0.5 - 1e-9);
      return std::clamp<Index>(static_cast<Index>(r), 0, n - 1);
    };
    return index(snap((p.x() - domain_.x_min) / hx_, nx_),
                 snap((p.y() - domain_.y_min) / hy_, ny_));
  }

  bool operator==(const Grid& o) const {
    return domain_ == o.domain_ && nx_ == o.nx_ && ny_ == o.ny_;
  }

 private:
  Domain domain_;
  Index nx_;
  Index ny_;
  double hx_ = 0.0;
  double hy_ = 0.0;
};

namespace detail {

inline double tent(double t) { return std::max(0.0, 1.0 - std::abs(t)); }

inline void require_inside(const Grid& grid, const Point& p) {
  if (!grid.domain().contains(p)) {
    throw DomainError("point (" + std::to_string(p.x()) + ", " + std::to_string(p.y()) +
                      ") lies outside the domain");
  }
}

}  // namespace detail

/// Bilinear hat function of node j evaluated at p.
inline double basis_eval(const Grid& grid, Index j, const Point& p) {
  if (j < 0 || j >= grid.size()) throw ArgumentError("basis_eval: node index out of range");
  detail::require_inside(grid, p);
  const Point r = grid.node(j);
  return detail::tent((p.x() - r.x()) / grid.hx()) * detail::tent((p.y() - r.y()) / grid.hy());
}

/// Nodal values on a grid.
class Field {
 public:
  Field(Grid grid, Eigen::VectorXd values) : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_.size()) {
      throw ArgumentError("Field: value count does not match grid size");
    }
    if (!values_.allFinite()) throw ArgumentError("Field: values must be finite");
  }

  static Field constant(const Grid& grid, double value) {
    return {grid, Eigen::VectorXd::Constant(grid.size(), value)};
  }

  /// Samples f at every node.
  template <typename F>
  static Field sample(const Grid& grid, F&& f) {
    Eigen::VectorXd v(grid.size());
    for (Index j = 0; j < grid.size(); ++j) v[j] = f(grid.node(j));
    return {grid, std::move(v)};
  }

  const Grid& grid() const { return grid_; }
  const Eigen::VectorXd& values() const { return values_; }

 private:
  Grid grid_;
  Eigen::VectorXd values_;
};

/// Evaluates the bilinear interpolant sum_j a_j(p) x_j. Only the four corner
/// nodes of the cell containing p contribute.
inline double field_eval(const Field& field, const Point& p) {
  const Grid& g = field.grid();
  detail::require_inside(g, p);
  const double tx = std::clamp((p.x() - g.domain().x_min) / g.hx(), 0.0,
                               static_cast<double>(g.nx() - 1));
  const double ty = std::clamp((p.y() - g.domain().y_min) / g.hy(), 0.0,
                               static_cast<double>(g.ny() - 1));
  const Index ix = std::min<Index>(static_cast<Index>(tx), g.nx() - 2);
  const Index iy = std::min<Index>(static_cast<Index>(ty), g.ny() - 2);
  const double fx = tx - static_cast<double>(ix);
  const double fy = ty - static_cast<double>(iy);
  const auto& x = field.values();
  return (1 - fx) * (1 - fy) * x[g.index(ix, iy)] + fx * (1 - fy) * x[g.index(ix + 1, iy)] +
         (1 - fx) * fy * x[g.index(ix, iy + 1)] + fx * fy * x[g.index(ix + 1, iy + 1)];
}

/// Isotropic Gaussian bump amplitude * exp(-|r - center|^2 / width^2) sampled at the nodes.
inline Field gaussian_phantom(const Grid& grid, const Point& center, double width,
                              double amplitude) {
  if (!(width > 0.0)) throw ArgumentError("gaussian_phantom: width must be positive");
  return Field::sample(grid, [&](const Point& r) {
    return amplitude * std::exp(-(r - center).squaredNorm() / (width * width));
  });
}

}  // namespace bayestomo
