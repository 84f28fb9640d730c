#include <gtest/gtest.h>

#include <numeric>

#include "cpr/ep.hpp"
#include "cpr/oracle.hpp"
#include "cpr/truncnorm.hpp"
#include "helpers.hpp"

using namespace cpr;
using namespace cpr::testing;

namespace {

// Moments of N(m, 1) on (0, inf) by quadrature of an unnormalized density.
// Below zero the shifted form exp(-x^2/2 + m x) stays representable far in
// the lower tail.
struct QuadMoments {
  double mean;
  double variance;
};

QuadMoments quadrature_truncnorm(double m) {
  auto g = [m](double x) { return m < 0 ? std::exp(-0.5 * x * x + m * x) : std::exp(-0.5 * (x - m) * (x - m)); };
  // Panels on the density's own length scale, so no feature falls between
  // the first Simpson nodes.
  const double peak = std::max(0.0, m);
  const double h = m < -1.0 ? 1.0 / -m : 1.0;
  auto moment = [&](int p) {
    auto f = [&](double x) { return std::pow(x, p) * g(x); };
    double s = 0.0;
    for (int j = 0; j < 10; ++j) s += integrate(f, 0.1 * j * peak, 0.1 * (j + 1) * peak, 1e-14, 30);
    for (int j = 0; j < 60; ++j) s += integrate(f, peak + j * h, peak + (j + 1) * h, 1e-14, 30);
    return s;
  };
  const double z0 = moment(0), z1 = moment(1), z2 = moment(2);
  const double mean = z1 / z0;
  return {mean, z2 / z0 - mean * mean};
}

MatrixXd correlation2(double rho) {
  MatrixXd S(2, 2);
  S << 1.0, rho, rho, 1.0;
  return S;
}

}  // namespace

TEST(Truncnorm, StandardCase) {
  const auto t = truncnorm_moments_1d(0.0, 1.0);
  const auto q = quadrature_truncnorm(0.0);
  EXPECT_NEAR(t.mass, 0.5, 1e-15);
  EXPECT_NEAR(t.mean, q.mean, 1e-10);
  EXPECT_NEAR(t.variance, q.variance, 1e-10);
  EXPECT_NEAR(t.mean, 0.79788, 1e-5);
  EXPECT_NEAR(t.variance, 0.36338, 1e-5);
}

TEST(Truncnorm, FarFromBoundary) {
  const auto t = truncnorm_moments_1d(10.0, 1.0);
  EXPECT_NEAR(t.mass, 1.0, 1e-15);
  EXPECT_NEAR(t.mean, 10.0, 1e-15);
  EXPECT_NEAR(t.variance, 1.0, 1e-15);
}

TEST(Truncnorm, DeepLowerTailMatchesQuadrature) {
  const auto t = truncnorm_moments_1d(-8.0, 1.0);
  const auto q = quadrature_truncnorm(-8.0);
  EXPECT_TRUE(std::isfinite(t.mean) && std::isfinite(t.variance) && std::isfinite(t.logMass));
  EXPECT_GT(t.mean, 0.0);
  EXPECT_NEAR(t.mean / q.mean, 1.0, 1e-6);
  EXPECT_NEAR(t.variance / q.variance, 1.0, 1e-6);
  EXPECT_NEAR(t.logMass, std::log(0.5 * std::erfc(8.0 / std::sqrt(2.0))), 1e-10);
}

TEST(Truncnorm, TailSweepMatchesQuadrature) {
  for (double m = -30.0; m <= 5.0; m += 0.73) {
    const auto t = truncnorm_moments_1d(m, 1.0);
    const auto q = quadrature_truncnorm(m);
    EXPECT_NEAR(t.mean / q.mean, 1.0, 1e-6) << m;
    EXPECT_NEAR(t.variance / q.variance, 1.0, 1e-5) << m;
  }
}

TEST(Truncnorm, ScalesWithVariance) {
  const auto a = truncnorm_moments_1d(-1.5, 4.0);
  const auto b = truncnorm_moments_1d(-0.75, 1.0);
  EXPECT_NEAR(a.mass, b.mass, 1e-15);
  EXPECT_NEAR(a.mean, 2.0 * b.mean, 1e-14);
  EXPECT_NEAR(a.variance, 4.0 * b.variance, 1e-13);
}

TEST(Truncnorm, RejectsNonPositiveVariance) {
  EXPECT_THROW(truncnorm_moments_1d(0.0, 0.0), InvalidInput);
  EXPECT_THROW(truncnorm_moments_1d(0.0, -1.0), InvalidInput);
}

TEST(Ep, ExactOnDiagonalCovariance) {
  Rng rng(21);
  for (int t = 0; t < 25; ++t) {
    const Index n = 1 + static_cast<Index>(rng.below(6));
    const VectorXd mu = random_vector(rng, n, 2.0);
    VectorXd diag(n);
    for (Index i = 0; i < n; ++i) diag[i] = 0.2 + 3.0 * rng.uniform();
    const MatrixXd S = diag.asDiagonal();
    const auto r = ep_moments(mu, S);
    double logMass = 0.0;
    for (Index i = 0; i < n; ++i) {
      const auto m = truncnorm_moments_1d(mu[i], diag[i]);
      logMass += m.logMass;
      EXPECT_NEAR(r.moments.mean[i], m.mean, 1e-10);
      EXPECT_NEAR(r.moments.covariance(i, i), m.variance, 1e-10);
      for (Index j = 0; j < n; ++j)
        if (j != i) EXPECT_NEAR(r.moments.covariance(i, j), 0.0, 1e-10);
    }
    EXPECT_NEAR(r.moments.logMass, logMass, 1e-10);
    EXPECT_TRUE(r.sites.converged);
  }
}

TEST(Ep, SymmetricQuadrant) {
  const auto r = ep_moments(VectorXd::Zero(2), MatrixXd::Identity(2, 2));
  EXPECT_NEAR(r.moments.logMass, std::log(0.25), 1e-12);
}

TEST(Ep, CorrelatedPairAgainstQuadrature) {
  const MatrixXd S = correlation2(0.5);
  const VectorXd mu = VectorXd::Zero(2);
  const auto ep = ep_moments(mu, S);
  const auto q = orthant_oracle(mu, S, OracleMethod::quadrature, 8);
  // Closed form of the orthant mass: 1/4 + asin(rho) / (2 pi).
  EXPECT_NEAR(std::exp(q.moments.logMass), 0.25 + std::asin(0.5) / (2.0 * std::numbers::pi), 1e-9);
  EXPECT_LT((ep.moments.mean - q.moments.mean).cwiseAbs().maxCoeff(), 1e-2);
  EXPECT_LT((ep.moments.covariance - q.moments.covariance).cwiseAbs().maxCoeff(), 1e-2);
}

TEST(Ep, MeanPositiveAndCovariancePsd) {
  Rng rng(31);
  for (int t = 0; t < 40; ++t) {
    const Index n = 2 + static_cast<Index>(rng.below(8));
    const MatrixXd S = random_spd(rng, n, 0.1);
    const VectorXd mu = random_vector(rng, n, 1.5);
    const auto r = ep_moments(mu, S);
    ASSERT_TRUE(r.sites.converged);
    EXPECT_GT(r.moments.mean.minCoeff(), 0.0);
    const double minEig = Eigen::SelfAdjointEigenSolver<MatrixXd>(r.moments.covariance).eigenvalues().minCoeff();
    EXPECT_GT(minEig, -1e-10);
  }
}

TEST(Ep, MassMonotoneInEachMeanCoordinate) {
  Rng rng(41);
  for (int t = 0; t < 30; ++t) {
    const Index n = 2 + static_cast<Index>(rng.below(5));
    const MatrixXd S = random_spd(rng, n);
    const VectorXd mu = random_vector(rng, n);
    const OrthantEp ep(S);
    const double base = ep.run(mu).moments.logMass;
    const Index i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    VectorXd up = mu;
    up[i] += 0.1 + rng.uniform();
    EXPECT_GE(ep.run(up).moments.logMass, base - 1e-9);
  }
}

TEST(Ep, PermutationEquivariant) {
  Rng rng(51);
  for (int t = 0; t < 15; ++t) {
    const Index n = 3 + static_cast<Index>(rng.below(4));
    const MatrixXd S = random_spd(rng, n);
    const VectorXd mu = random_vector(rng, n);
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    rng.shuffle(perm);
    Eigen::PermutationMatrix<Eigen::Dynamic> P(n);
    for (Index i = 0; i < n; ++i) P.indices()[i] = static_cast<int>(perm[static_cast<std::size_t>(i)]);
    EpOptions tight;
    tight.tol = 1e-12;
    tight.maxIter = 500;
    const auto a = ep_moments(mu, S, nullptr, tight);
    const auto b = ep_moments(P * mu, P * S * P.transpose(), nullptr, tight);
    EXPECT_LT((P * a.moments.mean - b.moments.mean).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((P * a.moments.covariance * P.transpose() - b.moments.covariance).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(a.moments.logMass, b.moments.logMass, 1e-8);
  }
}

TEST(Ep, WarmStartFromConvergedStateIsFast) {
  Rng rng(61);
  for (int t = 0; t < 20; ++t) {
    const Index n = 2 + static_cast<Index>(rng.below(10));
    const MatrixXd S = random_spd(rng, n);
    const VectorXd mu = random_vector(rng, n);
    const OrthantEp ep(S);
    const auto cold = ep.run(mu);
    ASSERT_TRUE(cold.sites.converged);
    const auto warm = ep.run(mu, &cold.sites);
    EXPECT_TRUE(warm.sites.converged);
    EXPECT_LE(warm.sites.iterations, 2);
    EXPECT_NEAR(warm.moments.logMass, cold.moments.logMass, 1e-6);
  }
}

TEST(Ep, StableInTheTail) {
  MatrixXd S = correlation2(0.3);
  VectorXd mu(2);
  mu << -12.0, -9.0;
  const auto r = ep_moments(mu, S);
  EXPECT_TRUE(std::isfinite(r.moments.logMass));
  EXPECT_TRUE(r.moments.mean.allFinite());
  EXPECT_GT(r.moments.mean.minCoeff(), 0.0);
  EXPECT_LT(r.moments.logMass, -60.0);
}

TEST(Ep, RejectsIndefiniteCovariance) {
  MatrixXd S = correlation2(1.5);
  EXPECT_THROW(ep_moments(VectorXd::Zero(2), S), IndefiniteCovariance);
}

TEST(Ep, RespectsIterationCap) {
  Rng rng(71);
  const MatrixXd S = random_spd(rng, 6, 0.05);
  EpOptions opts;
  opts.maxIter = 1;
  opts.tol = 1e-14;
  const auto r = ep_moments(random_vector(rng, 6), S, nullptr, opts);
  EXPECT_FALSE(r.sites.converged);
  EXPECT_EQ(r.sites.iterations, 1);
  EXPECT_TRUE(std::isfinite(r.moments.logMass));
}

TEST(Oracle, OneDimensionMatchesTruncnorm) {
  for (double m : {-3.0, -0.4, 0.0, 1.7}) {
    VectorXd mu(1);
    mu << m;
    const MatrixXd S = MatrixXd::Constant(1, 1, 2.5);
    const auto q = orthant_oracle(mu, S, OracleMethod::quadrature, 8);
    const auto t = truncnorm_moments_1d(m, 2.5);
    EXPECT_NEAR(q.moments.logMass, t.logMass, 1e-8);
    EXPECT_NEAR(q.moments.mean[0], t.mean, 1e-8);
    EXPECT_NEAR(q.moments.covariance(0, 0), t.variance, 1e-8);
  }
}

TEST(Oracle, IndependentPairFactorizes) {
  VectorXd mu(2);
  mu << 0.3, -0.8;
  MatrixXd S = MatrixXd::Zero(2, 2);
  S(0, 0) = 1.4;
  S(1, 1) = 0.6;
  const auto q = orthant_oracle(mu, S, OracleMethod::quadrature, 6);
  const auto a = truncnorm_moments_1d(0.3, 1.4);
  const auto b = truncnorm_moments_1d(-0.8, 0.6);
  EXPECT_NEAR(q.moments.logMass, a.logMass + b.logMass, 1e-8);
  EXPECT_NEAR(q.moments.mean[0], a.mean, 1e-8);
  EXPECT_NEAR(q.moments.mean[1], b.mean, 1e-8);
  EXPECT_NEAR(q.moments.covariance(0, 1), 0.0, 1e-8);
}

TEST(Oracle, MonteCarloAgreesWithQuadratureInThreeDimensions) {
  Rng rng(81);
  const MatrixXd S = random_spd(rng, 3);
  VectorXd mu(3);
  mu << 0.4, -0.2, 0.7;
  const auto q = orthant_oracle(mu, S, OracleMethod::quadrature, 3);
  const auto mc = orthant_oracle(mu, S, OracleMethod::monte_carlo, 400000, 7);
  EXPECT_LE(std::abs(std::exp(q.moments.logMass) - std::exp(mc.moments.logMass)), 3.0 * mc.massError);
  for (Index i = 0; i < 3; ++i)
    EXPECT_LE(std::abs(q.moments.mean[i] - mc.moments.mean[i]), 3.0 * mc.meanError[i]) << i;
}

TEST(Oracle, QuadratureLimitedToFourDimensions) {
  EXPECT_THROW(orthant_oracle(VectorXd::Zero(5), MatrixXd::Identity(5, 5), OracleMethod::quadrature, 1),
               InvalidInput);
  EXPECT_THROW(orthant_oracle(VectorXd::Zero(2), MatrixXd::Identity(2, 2), OracleMethod::quadrature, 0),
               InvalidInput);
}
