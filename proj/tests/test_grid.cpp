#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "bayestomo/grid.hpp"

using namespace bayestomo;

namespace {

Grid unit_grid(Index nx, Index ny) { return {Domain(0, 1, 0, 1), nx, ny}; }

}  // namespace

TEST(Domain, RejectsEmptyExtent) {
  EXPECT_THROW(Domain(1, 1, 0, 1), ArgumentError);
  EXPECT_THROW(Domain(0, 1, 2, 1), ArgumentError);
  const Domain d(-1, 3, 0, 2);
  EXPECT_DOUBLE_EQ(d.width(), 4);
  EXPECT_DOUBLE_EQ(d.height(), 2);
  EXPECT_EQ(d.center(), Point(1, 1));
  EXPECT_TRUE(d.contains({3, 2}));
  EXPECT_FALSE(d.contains({3.01, 2}));
}

TEST(Grid, NodeLayoutIsRowMajor) {
  EXPECT_THROW(unit_grid(1, 5), ArgumentError);
  const Grid g(Domain(0, 2, -1, 1), 5, 3);
  EXPECT_EQ(g.size(), 15);
  EXPECT_DOUBLE_EQ(g.hx(), 0.5);
  EXPECT_DOUBLE_EQ(g.hy(), 1.0);
  for (Index j = 0; j < g.size(); ++j) {
    EXPECT_EQ(g.index(g.column_of(j), g.row_of(j)), j);
    EXPECT_EQ(g.nearest_node(g.node(j)), j);
  }
  EXPECT_EQ(g.node(7), Point(1.0, 0.0));
  EXPECT_EQ(g.node_coords().row(14), Eigen::RowVector2d(2, 1));
  // halfway between nodes 0 and 1 resolves to the lower index
  EXPECT_EQ(g.nearest_node({0.25, -1}), 0);
}

TEST(Basis, NodalAndOutsideDomain) {
  const Grid g = unit_grid(4, 5);
  for (Index j = 0; j < g.size(); ++j) {
    for (Index k = 0; k < g.size(); ++k) {
      EXPECT_DOUBLE_EQ(basis_eval(g, j, g.node(k)), j == k ? 1.0 : 0.0);
    }
  }
  EXPECT_THROW(basis_eval(g, 0, {1.5, 0.5}), DomainError);
  EXPECT_THROW(basis_eval(g, 20, {0.5, 0.5}), ArgumentError);
}

TEST(Basis, PartitionOfUnityAndCompactSupport) {
  const Grid g(Domain(-0.3, 1.7, 0.2, 1.1), 7, 6);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(-0.3, 1.7), uy(0.2, 1.1);
  for (int t = 0; t < 500; ++t) {
    const Point p(ux(rng), uy(rng));
    double sum = 0.0;
    int nonzero = 0;
    for (Index j = 0; j < g.size(); ++j) {
      const double a = basis_eval(g, j, p);
      sum += a;
      nonzero += a != 0.0;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_LE(nonzero, 4);
  }
}

TEST(Field, ValidatesValues) {
  const Grid g = unit_grid(3, 3);
  EXPECT_THROW(Field(g, Eigen::VectorXd::Zero(8)), ArgumentError);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(9);
  v[4] = std::nan("");
  EXPECT_THROW(Field(g, v), ArgumentError);
}

TEST(Field, EvalMatchesBasisExpansion) {
  const Grid g(Domain(0, 2, 0, 1), 6, 4);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01;
  Eigen::VectorXd v(g.size());
  for (auto& x : v) x = n01(rng);
  const Field f(g, v);
  std::uniform_real_distribution<double> ux(0, 2), uy(0, 1);
  for (int t = 0; t < 200; ++t) {
    const Point p(ux(rng), uy(rng));
    double expansion = 0.0;
    for (Index j = 0; j < g.size(); ++j) expansion += basis_eval(g, j, p) * v[j];
    EXPECT_NEAR(field_eval(f, p), expansion, 1e-12);
  }
  EXPECT_NEAR(field_eval(Field::constant(g, 1.0), {1.234, 0.5}), 1.0, 1e-15);
  EXPECT_THROW(field_eval(f, {2.5, 0.5}), DomainError);
}

TEST(Field, ReproducesAffineFunctions) {
  const Grid g(Domain(-1, 1, 0, 3), 9, 11);
  auto affine = [](const Point& p) { return 0.7 - 1.3 * p.x() + 2.1 * p.y(); };
  const Field f = Field::sample(g, affine);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ux(-1, 1), uy(0, 3);
  for (int t = 0; t < 300; ++t) {
    const Point p(ux(rng), uy(rng));
    EXPECT_NEAR(field_eval(f, p), affine(p), 1e-12);
  }
  // corners and edges
  EXPECT_NEAR(field_eval(f, {1, 3}), affine({1, 3}), 1e-12);
  EXPECT_NEAR(field_eval(f, {-1, 0}), affine({-1, 0}), 1e-12);
}

TEST(Phantom, PeakAndWidth) {
  const Grid g = unit_grid(11, 11);
  const Point c = g.node(g.index(3, 4));
  const Field f = gaussian_phantom(g, c, 0.2, 2.5);
  EXPECT_DOUBLE_EQ(f.values()[g.index(3, 4)], 2.5);
  // node (5, 4) sits 0.2 from the centre
  EXPECT_NEAR(f.values()[g.index(5, 4)], 2.5 * std::exp(-1.0), 1e-14);
  EXPECT_THROW(gaussian_phantom(g, c, 0.0, 1.0), ArgumentError);
}

TEST(Phantom, NodalSumIntegratesTheBump) {
  // The nodal sum times the cell area is a 2D trapezoid-type quadrature of
  // amplitude * exp(-r^2/w^2), whose integral over the plane is amplitude * pi * w^2.
  const Grid g = unit_grid(201, 201);
  const double w = 0.08;
  const double amp = 1.7;
  const Field f = gaussian_phantom(g, {0.5, 0.5}, w, amp);
  const double integral = f.values().sum() * g.hx() * g.hy();
  EXPECT_NEAR(integral / (amp * std::numbers::pi * w * w), 1.0, 1e-9);
}
