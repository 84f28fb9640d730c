#include <gtest/gtest.h>

#include "cpr/experiments.hpp"
#include "cpr/fit.hpp"
#include "cpr/objective.hpp"
#include "cpr/oracle.hpp"
#include "cpr/woodbury.hpp"
#include "helpers.hpp"

using namespace cpr;
using namespace cpr::testing;

namespace {

EpOptions tight_ep() {
  EpOptions o;
  o.tol = 1e-13;
  o.maxIter = 1000;
  return o;
}

Dataset probit_data(Rng& rng, Index d, Index n, const VectorXd& w) {
  Dataset data;
  data.X = random_matrix(rng, d, n);
  data.y.resize(n);
  for (Index i = 0; i < n; ++i) data.y[i] = data.X.col(i).dot(w) + rng.normal() > 0 ? 1.0 : -1.0;
  return data;
}

double relative_error(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-12);
}

}  // namespace

TEST(Objective, DiagonalClosedForm) {
  Rng rng(101);
  for (int t = 0; t < 100; ++t) {
    const Index n = 1 + static_cast<Index>(rng.below(20));
    const Index d = 1 + static_cast<Index>(rng.below(10));
    const MatrixXd Xt = random_matrix(rng, d, n);
    const VectorXd w = random_vector(rng, d);
    const double lambda1 = 0.1 + 5.0 * rng.uniform();
    const double got = objective_L0(w, Xt, MatrixXd(lambda1 * MatrixXd::Identity(n, n)));
    const double want = diagonal_objective(w, Xt, lambda1);
    EXPECT_NEAR(got / want, 1.0, 1e-8);
  }
}

TEST(Objective, SymmetricOrthant) {
  EXPECT_NEAR(objective_L0(VectorXd::Zero(3), MatrixXd::Ones(3, 2), MatrixXd(MatrixXd::Identity(2, 2))),
              std::log(4.0), 1e-12);
}

TEST(Objective, CorrelatedPairAgainstQuadrature) {
  // Weak correlation: EP's error grows with |rho| (about 2e-3 at rho = 0.5).
  Rng rng(111);
  MatrixXd Xt = random_matrix(rng, 2, 2);
  VectorXd w(2);
  w << 0.4, -0.3;
  MatrixXd S(2, 2);
  S << 1.0, 0.1, 0.1, 1.2;
  const double got = objective_L0(w, Xt, S, tight_ep());
  const double oracle = -std::log(bivariate_sign_probability(Xt.transpose() * w, S, 1.0, 1.0));
  EXPECT_NEAR(got, oracle, 1e-4);
}

TEST(Gradient, UnivariateAtOrigin) {
  const MatrixXd Xt = MatrixXd::Ones(1, 1);
  const MatrixXd S = MatrixXd::Ones(1, 1);
  const VectorXd w = VectorXd::Zero(1);
  const auto r = ep_moments(Xt.transpose() * w, S);
  const VectorXd g = gradient_L0(w, Xt, S, r.moments);
  EXPECT_NEAR(g[0], -std::sqrt(2.0 / std::numbers::pi), 1e-12);
  EXPECT_NEAR(g[0], -0.79788, 1e-5);
}

TEST(Hessian, UnivariateAtOrigin) {
  const MatrixXd Xt = MatrixXd::Ones(1, 1);
  const MatrixXd S = MatrixXd::Ones(1, 1);
  const VectorXd w = VectorXd::Zero(1);
  const auto r = ep_moments(Xt.transpose() * w, S);
  const MatrixXd H = hessian_L0(w, Xt, S, r.moments);
  EXPECT_NEAR(H(0, 0), 2.0 / std::numbers::pi, 1e-12);
}

TEST(Derivatives, DiagonalClosedForm) {
  Rng rng(121);
  for (int t = 0; t < 30; ++t) {
    const Index n = 1 + static_cast<Index>(rng.below(10));
    const Index d = 1 + static_cast<Index>(rng.below(5));
    const MatrixXd Xt = random_matrix(rng, d, n);
    const VectorXd w = random_vector(rng, d);
    const double lambda1 = 0.3 + 2.0 * rng.uniform();
    const MatrixXd S = lambda1 * MatrixXd::Identity(n, n);
    const auto r = ep_moments(Xt.transpose() * w, S);
    const double s = std::sqrt(lambda1);
    VectorXd g = VectorXd::Zero(d);
    MatrixXd H = MatrixXd::Zero(d, d);
    for (Index i = 0; i < n; ++i) {
      const double z = Xt.col(i).dot(w) / s;
      const double rr = phi(z) / Phi(z);
      g -= rr / s * Xt.col(i);
      H += rr * (z + rr) / lambda1 * Xt.col(i) * Xt.col(i).transpose();
    }
    EXPECT_LT((gradient_L0(w, Xt, S, r.moments) - g).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((hessian_L0(w, Xt, S, r.moments) - H).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Derivatives, FiniteDifferencesOnCorrelatedInstances) {
  Rng rng(131);
  EpOptions ep = tight_ep();
  ep.linearResponse = true;
  for (int t = 0; t < 20; ++t) {
    const Index n = 2 + static_cast<Index>(rng.below(9));
    const Index d = 1 + static_cast<Index>(rng.below(5));
    const MatrixXd Xt = random_matrix(rng, d, n, 0.7);
    const MatrixXd S = random_spd(rng, n);
    const VectorXd w = random_vector(rng, d, 0.5);
    const OrthantEp engine(S);
    EpResult r;
    objective_L0(w, Xt, engine, ep, &r);
    const VectorXd g = gradient_L0(w, Xt, engine.factor(), r.moments);
    const MatrixXd H = hessian_L0(w, Xt, engine.factor(), r.moments);
    const double h = 1e-5;
    VectorXd gfd(d);
    MatrixXd Hfd(d, d);
    for (Index k = 0; k < d; ++k) {
      VectorXd wp = w, wm = w;
      wp[k] += h;
      wm[k] -= h;
      gfd[k] = (objective_L0(wp, Xt, engine, ep) - objective_L0(wm, Xt, engine, ep)) / (2 * h);
      EpResult rp, rm;
      objective_L0(wp, Xt, engine, ep, &rp);
      objective_L0(wm, Xt, engine, ep, &rm);
      Hfd.col(k) = (gradient_L0(wp, Xt, engine.factor(), rp.moments) -
                    gradient_L0(wm, Xt, engine.factor(), rm.moments)) / (2 * h);
    }
    EXPECT_LT(relative_error(g, gfd), 1e-4) << "instance " << t;
    EXPECT_LT(relative_error(H, Hfd), 1e-3) << "instance " << t;
  }
}

TEST(Woodbury, NoLowRankPart) {
  Rng rng(141);
  const MatrixXd Xt = random_matrix(rng, 4, 3);
  const VectorXd rhs = random_vector(rng, 4);
  EXPECT_LT((woodbury_solve(MatrixXd::Zero(3, 3), Xt, 2.5, rhs) - rhs / 2.5).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((woodbury_solve(random_spd(rng, 3), MatrixXd::Zero(4, 3), 2.5, rhs) - rhs / 2.5).cwiseAbs().maxCoeff(),
            1e-15);
  VectorXd D(4);
  D << 1.0, 2.0, 4.0, 8.0;
  EXPECT_LT((woodbury_solve(MatrixXd::Zero(3, 3), Xt, D, rhs) - rhs.cwiseQuotient(D)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Woodbury, MatchesDenseInverse) {
  Rng rng(151);
  for (int t = 0; t < 100; ++t) {
    const Index d = 1 + static_cast<Index>(rng.below(50));
    const Index n = 1 + static_cast<Index>(rng.below(20));
    const MatrixXd Xt = random_matrix(rng, d, n);
    const MatrixXd B = random_spd(rng, n, 0.1);
    const VectorXd rhs = random_vector(rng, d);
    const double ridge = 0.1 + rng.uniform();
    MatrixXd H = Xt * B * Xt.transpose();
    H.diagonal().array() += ridge;
    const VectorXd dense = H.inverse() * rhs;
    EXPECT_LT((woodbury_solve(B, Xt, ridge, rhs) - dense).cwiseAbs().maxCoeff(), 1e-8);
    VectorXd D(d);
    for (Index i = 0; i < d; ++i) D[i] = 0.1 + rng.uniform();
    MatrixXd H2 = Xt * B * Xt.transpose();
    H2.diagonal() += D;
    EXPECT_LT((woodbury_solve(B, Xt, D, rhs) - H2.inverse() * rhs).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Woodbury, Deterministic) {
  Rng rng(161);
  const MatrixXd Xt = random_matrix(rng, 7, 4);
  const MatrixXd B = random_spd(rng, 4);
  const VectorXd rhs = random_vector(rng, 7);
  const VectorXd a = woodbury_solve(B, Xt, 0.3, rhs), b = woodbury_solve(B, Xt, 0.3, rhs);
  EXPECT_EQ(a, b);
}

TEST(SoftThreshold, Examples) {
  VectorXd v(3);
  v << 1.2, -0.3, -1.0;
  const VectorXd s = soft_threshold(v, 0.5);
  EXPECT_NEAR(s[0], 0.7, 1e-15);
  EXPECT_EQ(s[1], 0.0);
  EXPECT_NEAR(s[2], -0.5, 1e-15);
  EXPECT_THROW(soft_threshold(v, -0.1), InvalidInput);
}

TEST(FitCpr, HugeLambda0GivesZeroWeights) {
  Rng rng(171);
  const Dataset data = probit_data(rng, 5, 30, VectorXd::Ones(5));
  const auto m = fit_cpr(data, CovarianceModel::mixture(1.0, 0.5), 1e6);
  EXPECT_TRUE(m.converged());
  EXPECT_EQ(m.nonzeros(), 0);
}

TEST(FitCpr, UncorrelatedLimitMatchesDirectL1Probit) {
  Rng rng(181);
  for (int t = 0; t < 3; ++t) {
    VectorXd wTrue(6);
    wTrue << 1.5, -1.0, 0.0, 0.0, 0.5, 0.0;
    const Dataset data = probit_data(rng, 6, 60, wTrue);
    const double lambda1 = 0.8, lambda0 = 2.0;
    FitOptions opts;
    opts.standardize = false;
    const auto m = fit_cpr(data, CovarianceModel::mixture(lambda1, 0.0), lambda0, opts);
    ASSERT_TRUE(m.converged());
    const VectorXd ref = fista_l1_probit(data.X * data.y.asDiagonal(), lambda1, lambda0);
    EXPECT_LT((m.weights - ref).lpNorm<Eigen::Infinity>(), 1e-3);
    const auto p = fit_probit(data, lambda1, lambda0, opts);
    EXPECT_LT((p.weights - ref).lpNorm<Eigen::Infinity>(), 1e-3);
  }
}

TEST(FitCpr, NonzerosNonIncreasingInLambda0) {
  Rng rng(191);
  VectorXd wTrue = VectorXd::Zero(10);
  wTrue.head(4) << 1.0, -1.0, 0.7, 0.5;
  Dataset data = probit_data(rng, 10, 50, wTrue);
  const auto cov = CovarianceModel::mixture(1.0, 0.2);
  Index previous = std::numeric_limits<Index>::max();
  for (double l0 : {0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0}) {
    const auto m = fit_cpr(data, cov, l0);
    EXPECT_LE(m.nonzeros(), previous) << "lambda0 " << l0;
    previous = m.nonzeros();
  }
  EXPECT_EQ(previous, 0);
}

TEST(FitCpr, ObjectiveTraceNonIncreasing) {
  Rng rng(201);
  VectorXd wTrue = VectorXd::Zero(8);
  wTrue.head(3) << 1.0, -1.0, 0.5;
  for (int t = 0; t < 3; ++t) {
    Dataset data = probit_data(rng, 8, 40, wTrue);
    const auto m = fit_cpr(data, CovarianceModel::mixture(1.0, 0.3), 1.0);
    ASSERT_FALSE(m.objectiveTrace.empty());
    for (std::size_t i = 1; i < m.objectiveTrace.size(); ++i)
      EXPECT_LE(m.objectiveTrace[i], m.objectiveTrace[i - 1] + 1e-6) << "step " << i;
  }
}

TEST(FitCpr, TraceEndsAtObjectiveOfReportedWeights) {
  Rng rng(205);
  VectorXd wTrue = VectorXd::Zero(6);
  wTrue.head(2) << 1.0, -1.0;
  const Dataset data = probit_data(rng, 6, 40, wTrue);
  FitOptions opts;
  opts.standardize = false;
  const double lambda1 = 1.0, lambda0 = 1.5;
  const auto p = fit_probit(data, lambda1, lambda0, opts);
  const MatrixXd Xt = data.X * data.y.asDiagonal();
  EXPECT_NEAR(p.objectiveTrace.back(), diagonal_objective(p.weights, Xt, lambda1) + lambda0 * p.weights.lpNorm<1>(),
              1e-9);
  const auto c = fit_cpr(data, CovarianceModel::mixture(lambda1, 0.0), lambda0, opts);
  EXPECT_NEAR(c.objectiveTrace.back(), diagonal_objective(c.weights, Xt, lambda1) + lambda0 * c.weights.lpNorm<1>(),
              1e-6);
}

TEST(FitCpr, AdmmResidualsSmallAtTermination) {
  Rng rng(211);
  VectorXd wTrue = VectorXd::Zero(6);
  wTrue.head(2) << 1.0, -1.0;
  Dataset data = probit_data(rng, 6, 40, wTrue);
  FitOptions opts;
  opts.admm.absTol = 1e-5;
  opts.admm.relTol = 0.0;
  const auto m = fit_cpr(data, CovarianceModel::mixture(1.0, 0.3), 0.5, opts);
  ASSERT_TRUE(m.converged());
  EXPECT_LT(m.diagnostics.primalResidual, 1e-4);
  EXPECT_LT(m.diagnostics.dualResidual, 1e-4);
}

TEST(FitCpr, L2PenaltyGivesDenseWeights) {
  Rng rng(221);
  Dataset data = probit_data(rng, 6, 40, VectorXd::Ones(6));
  FitOptions opts;
  opts.penalty = Penalty::l2;
  const auto m = fit_cpr(data, CovarianceModel::mixture(1.0, 0.3), 1.0, opts);
  EXPECT_TRUE(m.converged());
  EXPECT_EQ(m.nonzeros(), 6);
}

TEST(FitCpr, RejectsNegativeLambda0) {
  Dataset data;
  data.X = MatrixXd::Ones(1, 2);
  data.y = VectorXd::Ones(2);
  EXPECT_THROW(fit_cpr(data, CovarianceModel::mixture(1.0, 0.0), -1.0), InvalidInput);
}

TEST(FitCprMap, VanishingDenseEffectMatchesProbit) {
  Rng rng(231);
  VectorXd wTrue(5);
  wTrue << 1.0, -0.5, 0.0, 0.0, 0.8;
  const Dataset data = probit_data(rng, 5, 60, wTrue);
  const auto map = fit_cpr_map(data, CovarianceModel::mixture(1.0, 1e-9), 1.0);
  const auto probit = fit_probit(data, 1.0, 1.0);
  ASSERT_TRUE(map.wPrime.has_value());
  EXPECT_LT(map.wPrime->lpNorm<Eigen::Infinity>(), 1e-6);
  EXPECT_LT((map.weights - probit.weights).lpNorm<Eigen::Infinity>(), 1e-3);
}

TEST(FitCprMap, GradientMatchesFiniteDifferences) {
  Rng rng(241);
  for (int t = 0; t < 20; ++t) {
    const Index d = 1 + static_cast<Index>(rng.below(5));
    const Index n = 2 + static_cast<Index>(rng.below(9));
    const MatrixXd Xt = random_matrix(rng, d, n);
    const VectorXd w = random_vector(rng, d, 0.5), wp = random_vector(rng, d, 0.5);
    const double l1 = 0.5 + rng.uniform(), l2 = 0.2 + rng.uniform();
    const auto [gw, gwp] = map_gradient(Xt, l1, l2, w, wp);
    const double h = 1e-6;
    VectorXd fw(d), fwp(d);
    for (Index k = 0; k < d; ++k) {
      VectorXd a = w, b = w;
      a[k] += h;
      b[k] -= h;
      fw[k] = (map_objective(Xt, l1, l2, 0.0, a, wp) - map_objective(Xt, l1, l2, 0.0, b, wp)) / (2 * h);
      a = wp;
      b = wp;
      a[k] += h;
      b[k] -= h;
      fwp[k] = (map_objective(Xt, l1, l2, 0.0, w, a) - map_objective(Xt, l1, l2, 0.0, w, b)) / (2 * h);
    }
    EXPECT_LT(relative_error(gw, fw), 1e-4);
    EXPECT_LT(relative_error(gwp, fwp), 1e-4);
  }
}

TEST(FitCprMap, ObjectiveTraceNonIncreasing) {
  Rng rng(251);
  VectorXd wTrue = VectorXd::Zero(8);
  wTrue.head(3) << 1.0, -1.0, 0.5;
  const Dataset data = probit_data(rng, 8, 50, wTrue);
  const auto m = fit_cpr_map(data, CovarianceModel::mixture(1.0, 0.5), 1.0);
  EXPECT_TRUE(m.converged());
  for (std::size_t i = 1; i < m.objectiveTrace.size(); ++i)
    EXPECT_LE(m.objectiveTrace[i], m.objectiveTrace[i - 1] + 1e-6) << "step " << i;
}

TEST(Convexity, DiagonalObjective) {
  Rng rng(261);
  const MatrixXd Xt = random_matrix(rng, 4, 12);
  const auto rep = check_convexity([&](const VectorXd& w) { return diagonal_objective(w, Xt, 1.0); }, 4, 100, 3);
  EXPECT_EQ(rep.violations, 0);
}

TEST(Convexity, CorrelatedObjectiveViaEp) {
  Rng rng(271);
  for (Index n = 1; n <= 3; ++n) {
    const MatrixXd Xt = random_matrix(rng, 3, n);
    const OrthantEp engine(random_spd(rng, n));
    const auto rep = check_convexity(
        [&](const VectorXd& w) { return objective_L0(w, Xt, engine, tight_ep()); }, 3, 100, 5 + n);
    EXPECT_EQ(rep.violations, 0) << "n=" << n << " worst gap " << rep.worstGap;
  }
}

TEST(Convexity, MapObjective) {
  Rng rng(281);
  const MatrixXd Xt = random_matrix(rng, 3, 10);
  const auto rep = check_convexity(
      [&](const VectorXd& v) { return map_objective(Xt, 0.7, 0.4, 0.5, v.head(3), v.tail(3)); }, 6, 100, 9);
  EXPECT_EQ(rep.violations, 0);
}

TEST(Convexity, ReportsWitnessForConcaveFunction) {
  const auto rep = check_convexity([](const VectorXd& w) { return -w.squaredNorm(); }, 2, 10, 1);
  EXPECT_EQ(rep.violations, 10);
  ASSERT_TRUE(rep.witness.has_value());
  EXPECT_GT(std::get<3>(*rep.witness), 0.0);
}
