#pragma once

// Brute-force orthant moments for small dimensions, used to check EP.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "cpr/ep.hpp"
#include "cpr/error.hpp"
#include "cpr/rng.hpp"

namespace cpr {

enum class OracleMethod { quadrature, monte_carlo };

struct OracleResult {
  OrthantMoments moments;
  /// Quadrature: |mass(budget) - mass(budget/2)|. Monte Carlo: standard error.
  double massError = 0.0;
  /// Monte Carlo only: per-coordinate standard error of the mean.
  VectorXd meanError;
};

namespace detail {

/// Gauss-Legendre nodes and weights on [-1, 1].
inline void gauss_legendre(int order, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(static_cast<std::size_t>(order), 0.0);
  weights.assign(static_cast<std::size_t>(order), 0.0);
  for (int i = 0; i < (order + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 1; k <= order; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p2) / k;
      }
      dp = order * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    const auto a = static_cast<std::size_t>(i), b = static_cast<std::size_t>(order - 1 - i);
    nodes[a] = -x;
    nodes[b] = x;
    weights[a] = weights[b] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
}

/// Composite rule on [0, upper] with panels graded towards 0.
inline void orthant_axis_rule(double upper, int subPanels, std::vector<double>& x,
                              std::vector<double>& w) {
  std::vector<double> gn, gw;
  gauss_legendre(8, gn, gw);
  std::vector<double> breaks{0.0};
  for (int k = 5; k >= 0; --k) breaks.push_back(upper / std::ldexp(1.0, k));
  x.clear();
  w.clear();
  for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
    const double h = (breaks[b + 1] - breaks[b]) / subPanels;
    for (int p = 0; p < subPanels; ++p) {
      const double lo = breaks[b] + p * h;
      for (std::size_t q = 0; q < gn.size(); ++q) {
        x.push_back(lo + 0.5 * h * (gn[q] + 1.0));
        w.push_back(0.5 * h * gw[q]);
      }
    }
  }
}

inline OrthantMoments tensor_quadrature(const VectorXd& mu, const MatrixXd& sigma, int subPanels) {
  const Index n = mu.size();
  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw IndefiniteCovariance("oracle: covariance not positive definite");
  const MatrixXd prec = llt.solve(MatrixXd::Identity(n, n));
  double logdet = 0.0;
  for (Index i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixLLT()(i, i));
  const double log_norm = -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi) - 0.5 * logdet;

  std::vector<std::vector<double>> xs(static_cast<std::size_t>(n)), ws(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const double upper = std::max(mu[i], 0.0) + 12.0 * std::sqrt(sigma(i, i));
    orthant_axis_rule(upper, subPanels, xs[static_cast<std::size_t>(i)], ws[static_cast<std::size_t>(i)]);
  }
  const std::size_t per = xs[0].size();
  std::vector<std::size_t> idx(static_cast<std::size_t>(n), 0);
  double mass = 0.0;
  VectorXd first = VectorXd::Zero(n);
  MatrixXd second = MatrixXd::Zero(n, n);
  VectorXd e(n), diff(n);
  while (true) {
    double weight = 1.0;
    for (Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      e[i] = xs[k][idx[k]];
      weight *= ws[k][idx[k]];
    }
    diff = e - mu;
    const double f = weight * std::exp(log_norm - 0.5 * diff.dot(prec * diff));
    mass += f;
    first += f * e;
    second.noalias() += f * e * e.transpose();
    Index d = 0;
    while (d < n) {
      auto& j = idx[static_cast<std::size_t>(d)];
      if (++j < per) break;
      j = 0;
      ++d;
    }
    if (d == n) break;
  }
  OrthantMoments out;
  out.logMass = std::log(mass);
  out.mean = first / mass;
  out.covariance = second / mass - out.mean * out.mean.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

}  // namespace detail

/// Ground-truth orthant moments.
///   quadrature: tensor Gauss-Legendre, n <= 4; budget is sub-panels per
///               graded segment (nodes per axis = 48 * budget).
///   monte-carlo: budget samples from N(mu, Sigma) by Cholesky, rejection to
///               the orthant.
inline OracleResult orthant_oracle(const VectorXd& mu, const MatrixXd& sigma, OracleMethod method,
                                   int budget, std::uint64_t seed = 1) {
  const Index n = mu.size();
  detail::require(sigma.rows() == n && sigma.cols() == n, "oracle: covariance size mismatch");
  detail::require(budget > 0, "oracle: budget must be positive");
  OracleResult out;
  if (method == OracleMethod::quadrature) {
    detail::require(n >= 1 && n <= 4, "oracle: quadrature supports dimension 1 to 4");
    out.moments = detail::tensor_quadrature(mu, sigma, budget);
    if (budget >= 2) {
      const auto coarse = detail::tensor_quadrature(mu, sigma, budget / 2);
      out.massError = std::abs(std::exp(out.moments.logMass) - std::exp(coarse.logMass));
    }
    return out;
  }

  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw IndefiniteCovariance("oracle: covariance not positive definite");
  const MatrixXd L = llt.matrixL();
  Rng rng(seed);
  long accepted = 0;
  VectorXd first = VectorXd::Zero(n);
  MatrixXd second = MatrixXd::Zero(n, n);
  VectorXd z(n);
  for (int s = 0; s < budget; ++s) {
    for (Index i = 0; i < n; ++i) z[i] = rng.normal();
    const VectorXd e = mu + L * z;
    if ((e.array() > 0.0).all()) {
      ++accepted;
      first += e;
      second.noalias() += e * e.transpose();
    }
  }
  if (accepted < 2) throw NumericalError("oracle: too few Monte Carlo samples in the orthant");
  const double p = static_cast<double>(accepted) / budget;
  out.moments.logMass = std::log(p);
  out.moments.mean = first / static_cast<double>(accepted);
  out.moments.covariance = second / static_cast<double>(accepted) -
                           out.moments.mean * out.moments.mean.transpose();
  out.massError = std::sqrt(p * (1.0 - p) / budget);
  out.meanError = (out.moments.covariance.diagonal() / static_cast<double>(accepted)).cwiseSqrt();
  return out;
}

}  // namespace cpr
