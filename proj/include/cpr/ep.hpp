#pragma once

// Expectation propagation for a Gaussian truncated to the positive orthant.
//
// The target is p(e) ∝ N(e; mu, Sigma) prod_i 1[e_i > 0]. Each indicator is
// replaced by an unnormalized Gaussian site exp(-tau_i e_i^2 / 2 + nu_i e_i),
// so the approximation is q(e) = N(e; m, S) with
//   S = (Sigma^-1 + T)^-1,  m = S (Sigma^-1 mu + nu),  T = diag(tau).
// Sites are refined one at a time (cavity, 1-d truncated moments, site
// update) with rank-one updates of S, and q is recomputed from scratch after
// each sweep.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>

#include "cpr/error.hpp"
#include "cpr/truncnorm.hpp"

namespace cpr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Moments (m, S) of the truncated Gaussian and log of its orthant mass.
struct OrthantMoments {
  VectorXd mean;
  MatrixXd covariance;
  double logMass = 0.0;
  /// (d mean / d mu) Sigma at the EP fixed point. For exact moments this
  /// equals `covariance`; under EP it is the covariance consistent with the
  /// derivative of the EP mean, so the Hessian built from it is the exact
  /// Hessian of -logMass. Filled when EpOptions::linearResponse is set.
  std::optional<MatrixXd> responseCovariance;
};

/// Natural parameters of the EP sites, passed back in to warm-start.
struct EpSiteState {
  VectorXd sitePrecisions;
  VectorXd siteShifts;
  bool converged = false;
  int iterations = 0;
};

struct EpOptions {
  /// Stop once the largest absolute change of a site parameter in a sweep
  /// falls below tol.
  double tol = 1e-6;
  int maxIter = 50;
  /// Weight of the new site value once damping is engaged. Damping switches
  /// on when a sweep changes the sites more than the one before it.
  double damping = 0.7;
  bool linearResponse = false;
};

struct EpResult {
  OrthantMoments moments;
  EpSiteState sites;
};

/// EP engine for a fixed covariance; factorizes Sigma once and can be run for
/// many means. Re-entrant: run() keeps all scratch local.
class OrthantEp {
 public:
  explicit OrthantEp(MatrixXd sigma) : sigma_(std::move(sigma)), llt_(sigma_) {
    if (sigma_.rows() != sigma_.cols()) throw InvalidInput("EP: covariance must be square");
    if (!sigma_.allFinite() || llt_.info() != Eigen::Success)
      throw IndefiniteCovariance("EP: covariance is not positive definite");
  }

  Index dim() const { return sigma_.rows(); }
  const MatrixXd& sigma() const { return sigma_; }
  const Eigen::LLT<MatrixXd>& factor() const { return llt_; }

  EpResult run(const VectorXd& mu, const EpSiteState* warm = nullptr,
               const EpOptions& opts = {}) const {
    const Index n = dim();
    if (mu.size() != n) throw InvalidInput("EP: mean has wrong dimension");
    if (!mu.allFinite()) throw EpFailure("EP: non-finite mean");
    if (!(opts.tol > 0.0)) throw InvalidInput("EP: tolerance must be positive");

    VectorXd tau = VectorXd::Zero(n), nu = VectorXd::Zero(n);
    if (warm != nullptr && warm->sitePrecisions.size() == n && warm->siteShifts.size() == n) {
      tau = warm->sitePrecisions.cwiseMax(0.0);
      nu = warm->siteShifts;
    }

    MatrixXd S;
    VectorXd m;
    refresh(mu, tau, nu, S, m);

    double step = 1.0;
    double previous_change = std::numeric_limits<double>::infinity();
    bool converged = false;
    int sweeps = 0;
    while (sweeps < opts.maxIter) {
      ++sweeps;
      double change = 0.0;
      for (Index i = 0; i < n; ++i) {
        const double s_ii = S(i, i);
        const double tau_cav = 1.0 / s_ii - tau[i];
        if (!(tau_cav > 0.0) || !std::isfinite(tau_cav)) continue;
        const double nu_cav = m[i] / s_ii - nu[i];
        const auto tm = truncnorm_moments_1d(nu_cav / tau_cav, 1.0 / tau_cav);
        if (!(tm.variance > 0.0) || !std::isfinite(tm.mean)) continue;
        const double tau_new = std::max(1.0 / tm.variance - tau_cav, 0.0);
        const double nu_new = tm.mean / tm.variance - nu_cav;
        const double dtau = step * (tau_new - tau[i]);
        const double dnu = step * (nu_new - nu[i]);
        change = std::max({change, std::abs(dtau), std::abs(dnu)});
        tau[i] += dtau;
        nu[i] += dnu;
        // Sherman-Morrison update of S and the matching update of m.
        const double k = dtau / (1.0 + dtau * s_ii);
        const VectorXd s = S.col(i);
        const double m_i = m[i];
        S.noalias() -= k * s * s.transpose();
        m += s * (dnu * (1.0 - k * s_ii) - k * m_i);
      }
      refresh(mu, tau, nu, S, m);
      if (!S.allFinite() || !m.allFinite()) throw EpFailure("EP: non-finite approximation");
      if (change < opts.tol) {
        converged = true;
        break;
      }
      if (sweeps > 1 && change > previous_change) step = opts.damping;
      previous_change = change;
    }

    EpResult out;
    out.moments.mean = m;
    out.moments.covariance = 0.5 * (S + S.transpose());
    out.moments.logMass = log_mass(mu, tau, nu, S, m);
    if (opts.linearResponse) out.moments.responseCovariance = response_covariance(tau, nu, S, m);
    out.sites = {std::move(tau), std::move(nu), converged, sweeps};
    if (!std::isfinite(out.moments.logMass)) throw EpFailure("EP: non-finite log mass");
    return out;
  }

 /// Linear-response covariance for a result of run() on this engine.
  MatrixXd linear_response(const EpResult& r) const {
    return response_covariance(r.sites.sitePrecisions, r.sites.siteShifts, r.moments.covariance,
                               r.moments.mean);
  }

 private:
  // S = Sigma - Sigma T^1/2 B^-1 T^1/2 Sigma with B = I + T^1/2 Sigma T^1/2,
  // m = mu - Sigma T^1/2 B^-1 T^1/2 mu + S nu.
  void refresh(const VectorXd& mu, const VectorXd& tau, const VectorXd& nu, MatrixXd& S,
               VectorXd& m) const {
    const Index n = dim();
    const VectorXd sq = tau.cwiseSqrt();
    MatrixXd B = sq.asDiagonal() * sigma_ * sq.asDiagonal();
    B.diagonal().array() += 1.0;
    Eigen::LLT<MatrixXd> lb(B);
    if (lb.info() != Eigen::Success) throw EpFailure("EP: site system is not positive definite");
    MatrixXd V = sq.asDiagonal() * sigma_;
    lb.matrixL().solveInPlace(V);
    S = sigma_;
    S.noalias() -= V.transpose() * V;
    VectorXd a = sq.cwiseProduct(mu);
    lb.matrixL().solveInPlace(a);
    m = mu - V.transpose() * a;
    m.noalias() += S * nu;
    (void)n;
  }

  // log Z_EP = sum_i log Ztilde_i + log ∫ N(e; mu, Sigma) prod_i exp(-tau_i e_i^2/2 + nu_i e_i) de
  // where Ztilde_i makes site i reproduce the cavity's truncated normalizer.
  double log_mass(const VectorXd& mu, const VectorXd& tau, const VectorXd& nu,
                  const MatrixXd& S, const VectorXd& m) const {
    const Index n = dim();
    const VectorXd sq = tau.cwiseSqrt();
    MatrixXd B = sq.asDiagonal() * sigma_ * sq.asDiagonal();
    B.diagonal().array() += 1.0;
    Eigen::LLT<MatrixXd> lb(B);
    double logdet_b = 0.0;
    for (Index i = 0; i < n; ++i) logdet_b += 2.0 * std::log(lb.matrixLLT()(i, i));
    const VectorXd sigma_inv_mu = llt_.solve(mu);
    double total = -0.5 * logdet_b + 0.5 * sigma_inv_mu.dot(m - mu) + 0.5 * nu.dot(m);

    for (Index i = 0; i < n; ++i) {
      const double s_ii = S(i, i);
      const double tau_cav = 1.0 / s_ii - tau[i];
      const double nu_cav = m[i] / s_ii - nu[i];
      if (!(tau_cav > 0.0)) throw EpFailure("EP: non-positive cavity precision");
      const auto tm = truncnorm_moments_1d(nu_cav / tau_cav, 1.0 / tau_cav);
      const double prec = tau_cav + tau[i];
      const double shift = nu_cav + nu[i];
      const double log_gauss = 0.5 * std::log(tau_cav / prec) + 0.5 * shift * shift / prec -
                               0.5 * nu_cav * nu_cav / tau_cav;
      total += tm.logMass - log_gauss;
    }
    return total;
  }

  // Implicit differentiation of the fixed point: each site keeps q's marginal
  // (m_i, S_ii) equal to the truncated moments of its cavity. Perturbing mu
  // moves (tau, nu) through a 2n x 2n linear system; the result is dm/dmu.
  MatrixXd response_covariance(const VectorXd& tau, const VectorXd& nu, const MatrixXd& S,
                               const VectorXd& m) const {
    const Index n = dim();
    const VectorXd s = S.diagonal();
    const MatrixXd Q = S.cwiseProduct(S);
    const MatrixXd SP = llt_.solve(S).transpose();  // S Sigma^-1

    // Matched moments as functions of the cavity natural parameters
    // (nu_c, tau_c): dmean = A dnu_c + B dtau_c, dvar = C dnu_c + E dtau_c.
    VectorXd A(n), B(n), C(n), E(n);
    for (Index i = 0; i < n; ++i) {
      const double tau_c = 1.0 / s[i] - tau[i];
      const double nu_c = m[i] / s[i] - nu[i];
      const auto k = truncnorm_cumulants_1d(nu_c / tau_c, 1.0 / tau_c);
      const double cov_x_x2 = k[2] + 2.0 * k[0] * k[1];
      const double var_x2 = k[3] + 4.0 * k[0] * k[2] + 2.0 * k[1] * k[1] + 4.0 * k[0] * k[0] * k[1];
      A[i] = k[1];
      B[i] = -0.5 * cov_x_x2;
      C[i] = cov_x_x2 - 2.0 * k[0] * k[1];
      E[i] = -0.5 * var_x2 + k[0] * cov_x_x2;
    }

    // Linearizations, unknowns ordered (dtau, dnu):
    //   dm     = SP dmu - S diag(m) dtau + S dnu
    //   ds     = -Q dtau
    //   dtau_c = (W Q - I) dtau,                      W = diag(1/s^2)
    //   dnu_c  = diag(1/s) dm + diag(m/s^2) Q dtau - dnu
    const VectorXd inv_s = s.cwiseInverse();
    const MatrixXd Id = MatrixXd::Identity(n, n);
    const MatrixXd m_tau = -S * m.asDiagonal();
    const MatrixXd tc_tau = inv_s.cwiseAbs2().asDiagonal() * Q - Id;
    const MatrixXd nc_tau =
        inv_s.asDiagonal() * m_tau + m.cwiseProduct(inv_s.cwiseAbs2()).asDiagonal() * Q;
    const MatrixXd nc_nu = inv_s.asDiagonal() * S - Id;
    const MatrixXd nc_mu = inv_s.asDiagonal() * SP;

    MatrixXd lhs(2 * n, 2 * n);
    MatrixXd rhs(2 * n, n);
    // dm - A dnu_c - B dtau_c = 0
    lhs.topLeftCorner(n, n) = m_tau - A.asDiagonal() * nc_tau - B.asDiagonal() * tc_tau;
    lhs.topRightCorner(n, n) = S - A.asDiagonal() * nc_nu;
    rhs.topRows(n) = -(SP - A.asDiagonal() * nc_mu);
    // ds - C dnu_c - E dtau_c = 0
    lhs.bottomLeftCorner(n, n) = -Q - C.asDiagonal() * nc_tau - E.asDiagonal() * tc_tau;
    lhs.bottomRightCorner(n, n) = -(C.asDiagonal() * nc_nu);
    rhs.bottomRows(n) = C.asDiagonal() * nc_mu;

    const MatrixXd sol = Eigen::PartialPivLU<MatrixXd>(lhs).solve(rhs);
    if (!sol.allFinite()) throw EpFailure("EP: linear response system is singular");
    const MatrixXd J = SP + m_tau * sol.topRows(n) + S * sol.bottomRows(n);
    const MatrixXd cov = J * sigma_;
    return 0.5 * (cov + cov.transpose());
  }

  MatrixXd sigma_;
  Eigen::LLT<MatrixXd> llt_;
};

/// One-shot EP; see OrthantEp.
inline EpResult ep_moments(const VectorXd& mu, const MatrixXd& sigma,
                           const EpSiteState* warmStart = nullptr, const EpOptions& opts = {}) {
  return OrthantEp(sigma).run(mu, warmStart, opts);
}

}  // namespace cpr
