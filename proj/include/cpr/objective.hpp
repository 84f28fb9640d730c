#pragma once

// Smooth part of the CPR objective, L0(w) = -log ∫_{R+^n} N(e; Xt^T w, St) de,
// on label-absorbed inputs (Xt, St), and its derivatives from orthant moments.
//
// With mu = Xt^T w, P = St^-1 and dmu = mu_p - mu:
//   grad L0 = -Xt P dmu
//   hess L0 = Xt (P - P Sigma_p P) Xt^T
// The 1-d case pins the sign: d/dw [-log Phi(w)] at 0 is -phi(0)/Phi(0).

#include <Eigen/Dense>

#include <cmath>

#include "cpr/ep.hpp"
#include "cpr/error.hpp"
#include "cpr/normal.hpp"

namespace cpr {

inline double objective_L0(const VectorXd& w, const MatrixXd& Xt, const OrthantEp& ep,
                           const EpOptions& opts = {}, EpResult* result = nullptr) {
  detail::require(Xt.rows() == w.size() && Xt.cols() == ep.dim(), "objective_L0: shape mismatch");
  EpResult r = ep.run(Xt.transpose() * w, nullptr, opts);
  const double value = -r.moments.logMass;
  if (result != nullptr) *result = std::move(r);
  return value;
}

inline double objective_L0(const VectorXd& w, const MatrixXd& Xt, const MatrixXd& sigma,
                           const EpOptions& opts = {}) {
  return objective_L0(w, Xt, OrthantEp(sigma), opts);
}

inline VectorXd gradient_L0(const VectorXd& w, const MatrixXd& Xt,
                            const Eigen::LLT<MatrixXd>& sigmaFactor, const OrthantMoments& moments) {
  const VectorXd mu = Xt.transpose() * w;
  detail::require(moments.mean.size() == mu.size(), "gradient_L0: moments have wrong dimension");
  return -(Xt * sigmaFactor.solve(moments.mean - mu));
}

inline VectorXd gradient_L0(const VectorXd& w, const MatrixXd& Xt, const MatrixXd& sigma,
                            const OrthantMoments& moments) {
  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw IndefiniteCovariance("gradient_L0: singular covariance");
  return gradient_L0(w, Xt, llt, moments);
}

/// n x n curvature B = P - P Sigma_p P, so that hess L0 = Xt B Xt^T. Uses the
/// linear-response covariance when the moments carry one.
inline MatrixXd curvature_L0(const Eigen::LLT<MatrixXd>& sigmaFactor, const OrthantMoments& moments) {
  const MatrixXd& cov = moments.responseCovariance ? *moments.responseCovariance : moments.covariance;
  const Index n = cov.rows();
  const MatrixXd P = sigmaFactor.solve(MatrixXd::Identity(n, n));
  const MatrixXd PC = sigmaFactor.solve(cov);
  MatrixXd B = P - sigmaFactor.solve(PC.transpose());
  return 0.5 * (B + B.transpose());
}

inline MatrixXd hessian_L0(const VectorXd& w, const MatrixXd& Xt,
                           const Eigen::LLT<MatrixXd>& sigmaFactor, const OrthantMoments& moments) {
  detail::require(Xt.rows() == w.size(), "hessian_L0: shape mismatch");
  const MatrixXd B = curvature_L0(sigmaFactor, moments);
  MatrixXd H = Xt * B * Xt.transpose();
  return 0.5 * (H + H.transpose());
}

inline MatrixXd hessian_L0(const VectorXd& w, const MatrixXd& Xt, const MatrixXd& sigma,
                           const OrthantMoments& moments) {
  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw IndefiniteCovariance("hessian_L0: singular covariance");
  return hessian_L0(w, Xt, llt, moments);
}

// ---------------------------------------------------------------------------
// Factorized (diagonal covariance) probit loss
//   f(w) = -sum_i log Phi((Xt_i^T w + offset_i) / scale)

struct ProbitTerms {
  double value = 0.0;
  VectorXd dscore;   // d f / d score_i
  VectorXd d2score;  // d^2 f / d score_i^2
};

inline ProbitTerms probit_terms(const VectorXd& scores, double scale) {
  ProbitTerms t;
  const Index n = scores.size();
  t.dscore.resize(n);
  t.d2score.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double z = scores[i] / scale;
    t.value -= log_norm_cdf(z);
    const double r = inverse_mills_ratio(z);
    t.dscore[i] = -r / scale;
    t.d2score[i] = r * (z + r) / (scale * scale);
  }
  return t;
}

}  // namespace cpr
