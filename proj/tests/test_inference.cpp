#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "bayestomo/beams.hpp"
#include "bayestomo/inference.hpp"

using namespace bayestomo;

namespace {

Eigen::MatrixXd random_matrix(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  Eigen::MatrixXd m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = n01(rng);
  return m;
}

Eigen::MatrixXd random_spd(Index n, std::mt19937_64& rng) {
  const Eigen::MatrixXd b = random_matrix(n, n, rng);
  return b * b.transpose() / static_cast<double>(n) + 0.1 * Eigen::MatrixXd::Identity(n, n);
}

// Textbook information form, inverted explicitly.
Eigen::MatrixXd direct_posterior_cov(const Eigen::MatrixXd& A, const Eigen::MatrixXd& noise_cov,
                                     const Eigen::MatrixXd& prior_precision) {
  return (prior_precision + A.transpose() * noise_cov.inverse() * A).inverse();
}

double rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / b.norm(); }

BeamSet orthogonal_array(const Domain& d) {
  BeamSet beams = parallel_projection(d, 0.0, 5);
  const auto v = parallel_projection(d, std::numbers::pi / 2, 5);
  beams.insert(beams.end(), v.begin(), v.end());
  return beams;
}

}  // namespace

TEST(Posterior, TwoNodeToy) {
  Eigen::MatrixXd A(1, 2);
  A << 1, 0;
  const auto noise = NoiseModel::iid(1, 1.0);
  const auto prior = GaussianPrior::proper(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  const auto post = posterior(A, noise, prior, Eigen::VectorXd::Ones(1));
  EXPECT_NEAR(post.mean[0], 0.5, 1e-15);
  EXPECT_NEAR(post.mean[1], 0.0, 1e-15);
  EXPECT_NEAR(post.covariance(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(post.covariance(1, 1), 1.0, 1e-15);
  EXPECT_NEAR(post.covariance(0, 1), 0.0, 1e-15);
  const Eigen::VectorXd x = map_via_lsq(A, noise, prior, Eigen::VectorXd::Ones(1));
  EXPECT_NEAR(x[0], 0.5, 1e-14);
  EXPECT_NEAR(x[1], 0.0, 1e-14);
}

TEST(Posterior, FlatLikelihoodReturnsPrior) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd g = random_spd(6, rng);
  const Eigen::VectorXd mu = random_matrix(6, 1, rng);
  const auto prior = GaussianPrior::proper(mu, g);
  const auto post = posterior(Eigen::MatrixXd::Zero(3, 6), NoiseModel::iid(3, 0.1), prior,
                              Eigen::VectorXd::Ones(3));
  EXPECT_LT((post.mean - mu).norm(), 1e-14);
  EXPECT_LT((post.covariance - prior.covariance()).norm(), 1e-14);
}

TEST(Posterior, HugeNoiseReturnsPriorMean) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd A = random_matrix(4, 7, rng);
  const Eigen::VectorXd mu = random_matrix(7, 1, rng);
  const auto prior = GaussianPrior::proper(mu, random_spd(7, rng));
  const Eigen::VectorXd b = random_matrix(4, 1, rng);
  const auto post = posterior(A, NoiseModel::iid(4, 1e6), prior, b);
  EXPECT_LT((post.mean - mu).norm() / mu.norm(), 1e-4);
}

TEST(Posterior, MatchesInformationForm) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    const Eigen::MatrixXd A = random_matrix(5, 9, rng);
    const Eigen::MatrixXd g = random_spd(9, rng);
    const Eigen::MatrixXd gn = random_spd(5, rng);
    const Eigen::VectorXd mu = random_matrix(9, 1, rng);
    const Eigen::VectorXd mu_eps = random_matrix(5, 1, rng);
    const Eigen::VectorXd b = random_matrix(5, 1, rng);
    const auto post = posterior(A, NoiseModel::general(mu_eps, gn), GaussianPrior::proper(mu, g), b);
    const Eigen::MatrixXd cov = direct_posterior_cov(A, gn, g.inverse());
    const Eigen::VectorXd mean = cov * (A.transpose() * gn.inverse() * (b - mu_eps) + g.inverse() * mu);
    EXPECT_LT(rel(post.covariance, cov), 1e-10);
    EXPECT_LT((post.mean - mean).norm() / mean.norm(), 1e-10);
  }
}

TEST(Posterior, ImproperPriorMatchesInformationForm) {
  std::mt19937_64 rng(4);
  const Grid g(Domain(0, 1, 0, 1), 4, 4);
  const Eigen::MatrixXd l = laplacian_operator(g);
  const Eigen::MatrixXd A = random_matrix(6, 16, rng).cwiseAbs();
  const auto noise = NoiseModel::iid(6, 0.2);
  const auto prior = GaussianPrior::tikhonov(l, 0.7);
  const Eigen::VectorXd b = random_matrix(6, 1, rng);
  const auto post = posterior(A, noise, prior, b);
  const Eigen::MatrixXd cov = direct_posterior_cov(A, noise.covariance(), 0.49 * l.transpose() * l);
  EXPECT_LT(rel(post.covariance, cov), 1e-9);
  EXPECT_LT((post.mean - cov * A.transpose() * b / 0.04).norm() / post.mean.norm(), 1e-9);
  EXPECT_LT((map_via_lsq(A, noise, prior, b) - post.mean).norm() / post.mean.norm(), 1e-8);
}

TEST(Posterior, LoewnerOrderBelowPrior) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    const Eigen::MatrixXd A = random_matrix(6, 12, rng);
    const auto prior = GaussianPrior::proper(Eigen::VectorXd::Zero(12), random_spd(12, rng));
    const auto ops = posterior_operators(A, NoiseModel::iid(6, 0.3), prior);
    EXPECT_TRUE(ops.covariance.isApprox(ops.covariance.transpose(), 0));
    for (int k = 0; k < 20; ++k) {
      const Eigen::VectorXd v = random_matrix(12, 1, rng);
      EXPECT_LE(v.dot(ops.covariance * v), v.dot(prior.covariance() * v) + 1e-10);
    }
  }
}

TEST(Posterior, DimensionErrors) {
  const auto prior = GaussianPrior::proper(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
  EXPECT_THROW(posterior(Eigen::MatrixXd::Ones(2, 4), NoiseModel::iid(2, 1), prior, Eigen::VectorXd::Ones(2)),
               ArgumentError);
  EXPECT_THROW(posterior(Eigen::MatrixXd::Ones(2, 3), NoiseModel::iid(3, 1), prior, Eigen::VectorXd::Ones(2)),
               ArgumentError);
  EXPECT_THROW(posterior(Eigen::MatrixXd::Ones(2, 3), NoiseModel::iid(2, 1), prior, Eigen::VectorXd::Ones(3)),
               ArgumentError);
}

TEST(Posterior, UnprobedNullspaceIsDegenerate) {
  const Grid g(Domain(0, 1, 0, 1), 5, 5);
  const auto prior = GaussianPrior::tikhonov(laplacian_operator(g), 1.0);
  const auto A = assemble_sensitivity(g, {Beam({2, 2}, {3, 3})});  // misses the domain
  try {
    posterior(A.A, NoiseModel::iid(1, 0.1), prior, Eigen::VectorXd::Ones(1));
    FAIL() << "expected DegeneracyError";
  } catch (const DegeneracyError& e) {
    const Eigen::VectorXd& d = e.direction();
    ASSERT_EQ(d.size(), 25);
    EXPECT_LT((d.cwiseAbs().array() - 0.2).abs().maxCoeff(), 1e-10);  // the constant vector
  }
  EXPECT_THROW(MapSolver(A.A, NoiseModel::iid(1, 0.1), prior), DegeneracyError);
}

TEST(MapLsq, PriorMeanIsFixedPoint) {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd A = random_matrix(5, 8, rng);
  const Eigen::VectorXd mu = random_matrix(8, 1, rng);
  const auto prior = GaussianPrior::proper(mu, random_spd(8, rng));
  const Eigen::VectorXd x = map_via_lsq(A, NoiseModel::iid(5, 0.5), prior, A * mu);
  EXPECT_LT((x - mu).norm() / mu.norm(), 1e-12);
}

TEST(MapLsq, AgreesWithPosteriorMeanOnRandomInstances) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> un(2, 64), um(1, 24);
  for (int t = 0; t < 50; ++t) {
    const Index n = un(rng);
    const Index m = um(rng);
    const Eigen::MatrixXd A = random_matrix(m, n, rng);
    const auto noise = NoiseModel::general(Eigen::VectorXd::Zero(m), random_spd(m, rng));
    const auto prior = GaussianPrior::proper(random_matrix(n, 1, rng), random_spd(n, rng));
    const Eigen::VectorXd b = random_matrix(m, 1, rng);
    const Eigen::VectorXd a = posterior(A, noise, prior, b).mean;
    const Eigen::VectorXd c = map_via_lsq(A, noise, prior, b);
    EXPECT_LT((a - c).norm() / a.norm(), 1e-8) << "instance " << t;
  }
}

TEST(MapLsq, SolveManyMatchesSolve) {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd A = random_matrix(4, 6, rng);
  const auto prior = GaussianPrior::proper(Eigen::VectorXd::Ones(6), random_spd(6, rng));
  const MapSolver solver(A, NoiseModel::iid(4, 0.3), prior);
  const Eigen::MatrixXd B = random_matrix(4, 5, rng);
  const Eigen::MatrixXd X = solver.solve_many(B);
  for (Index c = 0; c < 5; ++c) EXPECT_LT((X.col(c) - solver.solve(B.col(c))).norm(), 1e-12);
  EXPECT_THROW(solver.solve(Eigen::VectorXd::Ones(3)), ArgumentError);
}

TEST(Pseudoinverse, MatchesGainOnRandomSystem) {
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd A = random_matrix(8, 20, rng);
  const auto noise = NoiseModel::iid(8, 0.4);
  const auto prior = GaussianPrior::tikhonov(identity_operator(20), 1.0);
  const Eigen::MatrixXd cov = direct_posterior_cov(A, noise.covariance(), Eigen::MatrixXd::Identity(20, 20));
  const Eigen::MatrixXd expected = cov * A.transpose() / 0.16;
  EXPECT_LT(rel(augmented_pseudoinverse(A, noise, prior), expected), 1e-10);
}

TEST(Pseudoinverse, VanishingRegularizationInvertsA) {
  std::mt19937_64 rng(10);
  const Eigen::MatrixXd A = random_matrix(6, 6, rng) + 3.0 * Eigen::MatrixXd::Identity(6, 6);
  const auto noise = NoiseModel::iid(6, 1.0);
  const auto prior = GaussianPrior::tikhonov(identity_operator(6), 1e-8);
  const auto r = resolution_matrix(A, noise, prior);
  EXPECT_LT(rel(r.A_sharp, A.inverse()), 1e-4);
  EXPECT_LT((r.R - Eigen::MatrixXd::Identity(6, 6)).norm(), 1e-4);
}

TEST(ResolutionMatrix, BlindNodesHaveNullPsf) {
  const Grid g(Domain(0, 1, 0, 1), 31, 31);
  const auto A = assemble_sensitivity(g, orthogonal_array(g.domain()));
  const auto prior = GaussianPrior::tikhonov(laplacian_operator(g), 1.0);
  const auto noise = NoiseModel::iid(A.rows(), 0.01);
  const auto r = resolution_matrix(A.A, noise, prior);
  EXPECT_TRUE(r.R.isApprox(r.A_sharp * A.A, 0));
  const auto blind = blind_nodes(A);
  ASSERT_FALSE(blind.empty());
  for (const Index j : blind) EXPECT_LT(r.R.col(j).cwiseAbs().maxCoeff(), 1e-12) << j;

  // an interior node on two crossing beams has a PSF peaking at or next to
  // itself (near the mirrored boundary the peak gets pulled onto the edge)
  const Index j = g.nearest_node({0.5, 0.5});
  Index k = 0;
  r.R.col(j).cwiseAbs().maxCoeff(&k);
  EXPECT_GT(r.R.col(j).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE(std::abs(g.column_of(k) - g.column_of(j)), 1);
  EXPECT_LE(std::abs(g.row_of(k) - g.row_of(j)), 1);

  // R is linear
  std::mt19937_64 rng(11);
  const Eigen::VectorXd x = random_matrix(g.size(), 1, rng);
  EXPECT_LT((r.R * (2.5 * x) - 2.5 * (r.R * x)).norm(), 1e-10 * (r.R * x).norm());
}

TEST(Sampler, MeanAndDeterminism) {
  std::mt19937_64 rng(12);
  const Eigen::MatrixXd cov = random_spd(4, rng);
  const Eigen::VectorXd mu(Eigen::Vector4d(1, -2, 0.5, 3));
  const MvnSampler s(mu, cov);
  const Index n = 100000;
  const Eigen::MatrixXd x = s.draw(n, 99);
  const Eigen::VectorXd mean = x.rowwise().mean();
  for (Index i = 0; i < 4; ++i) {
    EXPECT_LT(std::abs(mean[i] - mu[i]), 4.0 * std::sqrt(cov(i, i) / n));
  }
  EXPECT_EQ(x, s.draw(n, 99));
  EXPECT_NE(x, s.draw(n, 100));
}

TEST(Sampler, CovarianceConverges) {
  const Grid g(Domain(0, 1, 0, 1), 4, 4);
  const auto prior = squared_exponential_prior(g, 0, 1, 0.4);
  const Eigen::MatrixXd x = sample_prior(prior, 100000, 5);
  EXPECT_LT(rel(sample_covariance(x), prior.covariance()), 0.05);
}

TEST(Sampler, SemidefiniteAndIndefinite) {
  Eigen::MatrixXd psd = Eigen::MatrixXd::Ones(3, 3);  // rank one
  const MvnSampler s(Eigen::VectorXd::Zero(3), psd);
  const Eigen::MatrixXd x = s.draw(1000, 1);
  // every draw lies on the constant direction
  EXPECT_LT((x.row(0) - x.row(1)).cwiseAbs().maxCoeff(), 1e-10);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(2, 2);
  bad(1, 1) = -1;
  EXPECT_THROW(MvnSampler(Eigen::VectorXd::Zero(2), bad), NumericError);
  EXPECT_THROW(MvnSampler(Eigen::VectorXd::Zero(3), bad), ArgumentError);
}
