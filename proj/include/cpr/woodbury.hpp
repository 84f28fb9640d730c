#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>

#include "cpr/error.hpp"

namespace cpr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Solves (ridge I + Xt B Xt^T) x = rhs through an n x n system only:
///   x = (rhs - Xt B (I + K B / ridge)^-1 Xt^T rhs / ridge) / ridge,
/// with K = Xt^T Xt. B need not be invertible. Pass K when it is cached.
inline VectorXd woodbury_solve(const MatrixXd& B, const MatrixXd& Xt, double ridge,
                               const VectorXd& rhs, const MatrixXd* gram = nullptr) {
  detail::require(ridge > 0.0 && std::isfinite(ridge), "woodbury_solve: ridge must be positive");
  detail::require(B.rows() == Xt.cols() && B.cols() == Xt.cols(), "woodbury_solve: B has wrong size");
  detail::require(rhs.size() == Xt.rows(), "woodbury_solve: rhs has wrong size");
  const Index n = Xt.cols(), d = Xt.rows();
  MatrixXd K_local;
  if (gram == nullptr) {
    K_local = Xt.transpose() * Xt;
    gram = &K_local;
  }
  MatrixXd inner = MatrixXd::Identity(n, n);
  inner.noalias() += (*gram * B) / ridge;
  Eigen::PartialPivLU<MatrixXd> lu(inner);
  const VectorXd proj = Xt.transpose() * rhs / ridge;
  VectorXd x = lu.solve(proj);
  const double rcond = lu.rcond();
  if (!(rcond > 1e-14) || !x.allFinite()) {
    if (d <= 2000) {
      MatrixXd H = Xt * B * Xt.transpose();
      H.diagonal().array() += ridge;
      return H.ldlt().solve(rhs);
    }
    throw NumericalError("woodbury_solve: inner system is singular");
  }
  return (rhs - Xt * (B * x)) / ridge;
}

/// Solves (diag(D) + Xt B Xt^T) x = rhs for a positive diagonal D:
///   x = D^-1 rhs - D^-1 Xt B (I + Xt^T D^-1 Xt B)^-1 Xt^T D^-1 rhs.
inline VectorXd woodbury_solve(const MatrixXd& B, const MatrixXd& Xt, const VectorXd& D,
                               const VectorXd& rhs) {
  detail::require(D.size() == Xt.rows(), "woodbury_solve: D has wrong size");
  detail::require((D.array() > 0.0).all() && D.allFinite(), "woodbury_solve: D must be positive");
  detail::require(B.rows() == Xt.cols() && B.cols() == Xt.cols(), "woodbury_solve: B has wrong size");
  detail::require(rhs.size() == Xt.rows(), "woodbury_solve: rhs has wrong size");
  const Index n = Xt.cols(), d = Xt.rows();
  const VectorXd Dinv = D.cwiseInverse();
  const MatrixXd DinvXt = Dinv.asDiagonal() * Xt;
  MatrixXd inner = MatrixXd::Identity(n, n);
  inner.noalias() += Xt.transpose() * DinvXt * B;
  Eigen::PartialPivLU<MatrixXd> lu(inner);
  const VectorXd y = Dinv.cwiseProduct(rhs);
  const VectorXd x = lu.solve(Xt.transpose() * y);
  if (!(lu.rcond() > 1e-14) || !x.allFinite()) {
    if (d <= 2000) {
      MatrixXd H = Xt * B * Xt.transpose();
      H.diagonal() += D;
      return H.ldlt().solve(rhs);
    }
    throw NumericalError("woodbury_solve: inner system is singular");
  }
  return y - DinvXt * (B * x);
}

/// sign(v) max(|v| - kappa, 0), componentwise.
inline VectorXd soft_threshold(const VectorXd& v, double kappa) {
  detail::require(kappa >= 0.0, "soft_threshold: threshold must be non-negative");
  VectorXd out(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    const double a = std::abs(v[i]) - kappa;
    out[i] = a > 0.0 ? std::copysign(a, v[i]) : 0.0;
  }
  return out;
}

}  // namespace cpr
