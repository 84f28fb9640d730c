#pragma once

// Training: ADMM with one damped Newton step per outer iteration on the
// smooth part, for the EP-marginalized objective (cpr), the factorized probit
// objective (probit) and the MAP objective with a dense confounder effect
// (cpr-map). An l2-penalized CPR fit is provided for comparisons.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cpr/ep.hpp"
#include "cpr/error.hpp"
#include "cpr/model.hpp"
#include "cpr/objective.hpp"
#include "cpr/woodbury.hpp"

namespace cpr {

enum class Method { cpr, cpr_map, probit, gp_limit };
enum class Penalty { l1, l2 };
enum class FitStatus { converged, not_converged, ep_failure };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::cpr: return "cpr";
    case Method::cpr_map: return "cpr-map";
    case Method::probit: return "probit";
    case Method::gp_limit: return "gp-limit";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "cpr") return Method::cpr;
  if (s == "cpr-map") return Method::cpr_map;
  if (s == "probit") return Method::probit;
  if (s == "gp-limit") return Method::gp_limit;
  throw InvalidInput("unknown method '" + s + "'");
}

inline const char* to_string(FitStatus s) {
  switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::not_converged: return "not-converged";
    case FitStatus::ep_failure: return "ep-failure";
  }
  return "?";
}

struct AdmmOptions {
  double absTol = 1e-4;
  double relTol = 1e-3;
  int maxIter = 500;
  double penalty = 1.0;
  /// Residual balancing: rescale c by `penaltyFactor` when one residual
  /// exceeds `balanceRatio` times the other.
  bool adaptPenalty = true;
  double balanceRatio = 10.0;
  double penaltyFactor = 2.0;
};

struct FitOptions {
  AdmmOptions admm;
  EpOptions ep;
  bool standardize = true;
  Penalty penalty = Penalty::l1;
  /// Iterate the inner Newton loop to convergence instead of a single step.
  bool fullNewton = false;
  int maxInnerNewton = 50;
  double innerTol = 1e-8;
  int maxLineSearch = 40;
  double armijo = 1e-4;
  /// Consecutive EP failures tolerated inside one line search.
  int epRetryCap = 10;
  /// Convergence of the Newton iteration used by the l2 penalty.
  double l2Tol = 1e-8;
  int l2MaxIter = 200;
  std::uint64_t seed = 0;
};

struct AdmmState {
  VectorXd w;
  VectorXd z;
  VectorXd eta;  // scaled dual
  double c = 1.0;
  double stepSize = 1.0;
  int iteration = 0;
  double primalResidual = 0.0;
  double dualResidual = 0.0;

  static AdmmState origin(Index d, double c) {
    return {VectorXd::Zero(d), VectorXd::Zero(d), VectorXd::Zero(d), c, 1.0, 0, 0.0, 0.0};
  }
};

struct MapState {
  VectorXd w;
  VectorXd wPrime;
  AdmmState admm;
};

struct FitDiagnostics {
  FitStatus status = FitStatus::not_converged;
  int iterations = 0;
  double primalResidual = 0.0;
  double dualResidual = 0.0;
  int epFailures = 0;
  double seconds = 0.0;
  std::string message;
};

struct FittedModel {
  Method method = Method::cpr;
  Penalty penalty = Penalty::l1;
  /// Sparse weights on standardized features (exact zeros for l1 fits).
  VectorXd weights;
  /// Dense confounder effect of the MAP fit.
  std::optional<VectorXd> wPrime;
  double lambda0 = 0.0;
  CovarianceModel covariance;
  StandardizationParams standardization;
  std::vector<double> objectiveTrace;
  FitDiagnostics diagnostics;
  std::uint64_t seed = 0;

  bool converged() const { return diagnostics.status == FitStatus::converged; }

  /// Weights used for the linear score x^T w of a standardized sample.
  VectorXd score_weights() const { return wPrime ? VectorXd(weights + *wPrime) : weights; }

  Index nonzeros(double threshold = 0.0) const {
    return (weights.array().abs() > threshold).count();
  }
};

// ---------------------------------------------------------------------------
// Smooth losses. Each exposes value(w) (stores a pending evaluation),
// accept() (makes it current) and derivatives() at the current point, giving
// the gradient and the n x n curvature B with hess = Xt B Xt^T.

struct LossDerivatives {
  VectorXd gradient;
  MatrixXd curvature;
};

/// L0 evaluated by EP, warm-started from the last accepted sites.
class CprLoss {
 public:
  CprLoss(MatrixXd Xt, MatrixXd sigmaTilde, EpOptions ep)
      : Xt_(std::move(Xt)), ep_(std::move(sigmaTilde)), opts_(ep), gram_(Xt_.transpose() * Xt_) {}

  const MatrixXd& design() const { return Xt_; }
  const MatrixXd& gram() const { return gram_; }
  const OrthantEp& engine() const { return ep_; }

  double value(const VectorXd& w) {
    const EpSiteState* warm = current_ ? &current_->sites : nullptr;
    pending_ = ep_.run(Xt_.transpose() * w, warm, opts_);
    pending_w_ = w;
    return -pending_->moments.logMass;
  }

  void accept() {
    current_ = std::move(pending_);
    current_w_ = std::move(pending_w_);
    pending_.reset();
  }

  LossDerivatives derivatives() const {
    OrthantMoments mom = current_->moments;
    mom.responseCovariance = ep_.linear_response(*current_);
    return {gradient_L0(current_w_, Xt_, ep_.factor(), mom), curvature_L0(ep_.factor(), mom)};
  }

  const EpResult& current() const { return *current_; }

 private:
  MatrixXd Xt_;
  OrthantEp ep_;
  EpOptions opts_;
  MatrixXd gram_;
  std::optional<EpResult> current_, pending_;
  VectorXd current_w_, pending_w_;
};

/// -sum_i log Phi((Xt_i^T w + offset_i) / scale).
class ProbitLoss {
 public:
  ProbitLoss(MatrixXd Xt, double scale)
      : Xt_(std::move(Xt)), scale_(scale), offset_(VectorXd::Zero(Xt_.cols())),
        gram_(Xt_.transpose() * Xt_) {
    detail::require(scale > 0.0, "probit loss: scale must be positive");
  }

  const MatrixXd& design() const { return Xt_; }
  const MatrixXd& gram() const { return gram_; }
  void set_offset(VectorXd offset) { offset_ = std::move(offset); }
  const VectorXd& offset() const { return offset_; }

  double value(const VectorXd& w) {
    pending_w_ = w;
    pending_ = probit_terms(Xt_.transpose() * w + offset_, scale_);
    return pending_.value;
  }

  void accept() {
    current_ = std::move(pending_);
    current_w_ = std::move(pending_w_);
  }

  LossDerivatives derivatives() const {
    return {Xt_ * current_.dscore, MatrixXd(current_.d2score.asDiagonal())};
  }

 private:
  MatrixXd Xt_;
  double scale_;
  VectorXd offset_;
  MatrixXd gram_;
  ProbitTerms current_, pending_;
  VectorXd current_w_, pending_w_;
};

namespace detail {

struct NewtonOutcome {
  VectorXd w;
  double value = 0.0;
  double step = 0.0;
  double gradNorm = 0.0;
  int epFailures = 0;
  bool epGaveUp = false;
};

/// One damped Newton step on f(v) + c/2 |v - anchor|^2 from the loss's
/// current point `w` (value fw). Backtracking until the Armijo condition holds.
template <class Loss>
NewtonOutcome newton_step(Loss& loss, const VectorXd& w, double fw, const VectorXd& anchor, double c,
                          const FitOptions& opts) {
  const LossDerivatives der = loss.derivatives();
  const VectorXd g = der.gradient + c * (w - anchor);
  NewtonOutcome out{w, fw, 0.0, g.norm(), 0, false};
  if (!g.allFinite()) throw NumericalError("Newton step: non-finite gradient");
  const VectorXd p = woodbury_solve(der.curvature, loss.design(), c, g, &loss.gram());
  const double slope = g.dot(p);
  if (!(slope > 0.0)) return out;
  const double phi0 = fw + 0.5 * c * (w - anchor).squaredNorm();

  double alpha = 1.0;
  int consecutive_failures = 0;
  for (int it = 0; it < opts.maxLineSearch; ++it, alpha *= 0.5) {
    const VectorXd v = w - alpha * p;
    double fv;
    try {
      fv = loss.value(v);
    } catch (const EpFailure&) {
      ++out.epFailures;
      if (++consecutive_failures >= opts.epRetryCap) {
        out.epGaveUp = true;
        return out;
      }
      continue;
    }
    consecutive_failures = 0;
    const double phi = fv + 0.5 * c * (v - anchor).squaredNorm();
    if (std::isfinite(phi) && phi <= phi0 - opts.armijo * alpha * slope) {
      loss.accept();
      out.w = v;
      out.value = fv;
      out.step = alpha;
      return out;
    }
  }
  // No acceptable step; stay put. The loss keeps its previous current point.
  return out;
}

/// Minimizes f(v) + c/2 |v - anchor|^2 by repeated Newton steps.
template <class Loss>
NewtonOutcome newton_solve(Loss& loss, VectorXd w, double fw, const VectorXd& anchor, double c,
                           const FitOptions& opts, int maxIter, double tol) {
  NewtonOutcome last{w, fw, 0.0, 0.0, 0, false};
  int failures = 0;
  for (int it = 0; it < maxIter; ++it) {
    last = newton_step(loss, w, fw, anchor, c, opts);
    failures += last.epFailures;
    if (last.epGaveUp || last.step == 0.0) break;
    const double moved = (last.w - w).norm();
    w = last.w;
    fw = last.value;
    if (last.gradNorm < tol || moved < tol * (1.0 + w.norm())) break;
  }
  last.epFailures = failures;
  return last;
}

/// Scaled-form ADMM on f(w) + lambda0 |z|_1 subject to w = z.
/// `before` runs at the top of each outer iteration (the MAP fit updates w'
/// there and re-evaluates the loss); `objective(x, f(x))` gives the full
/// objective at a sparse iterate. ADMM does not decrease the objective at
/// every iteration, so the sparse iterate with the lowest objective so far is
/// kept; its objective is traced and it is returned in `best`. `onBest` runs
/// whenever it changes.
template <class Loss, class Before, class Objective, class OnBest>
AdmmState admm_l1(Loss& loss, double lambda0, AdmmState state, double fw, const FitOptions& opts,
                  FittedModel& model, Before&& before, Objective&& objective, OnBest&& onBest,
                  VectorXd& best) {
  const auto& a = opts.admm;
  const double sqrt_d = std::sqrt(static_cast<double>(state.w.size()));
  auto& diag = model.diagnostics;
  diag.status = FitStatus::not_converged;
  best = state.z;
  double bestValue = objective(state.z, fw);
  for (int k = 1; k <= a.maxIter; ++k) {
    state.iteration = k;
    fw = before(state, fw);
    const VectorXd anchor = state.z - state.eta;
    const NewtonOutcome step =
        opts.fullNewton
            ? newton_solve(loss, state.w, fw, anchor, state.c, opts, opts.maxInnerNewton, opts.innerTol)
            : newton_step(loss, state.w, fw, anchor, state.c, opts);
    diag.epFailures += step.epFailures;
    if (step.epGaveUp) {
      diag.status = FitStatus::ep_failure;
      diag.message = "EP failed repeatedly during the line search";
      break;
    }
    state.w = step.w;
    state.stepSize = step.step;
    fw = step.value;

    const VectorXd z_old = state.z;
    state.z = soft_threshold(state.w + state.eta, lambda0 / state.c);
    state.eta += state.w - state.z;
    state.primalResidual = (state.w - state.z).norm();
    state.dualResidual = state.c * (state.z - z_old).norm();
    try {
      const double value = objective(state.z, loss.value(state.z));
      if (value < bestValue) {
        bestValue = value;
        best = state.z;
        onBest();
      }
    } catch (const EpFailure&) {
      ++diag.epFailures;
    }
    model.objectiveTrace.push_back(bestValue);

    const double eps_pri = sqrt_d * a.absTol + a.relTol * std::max(state.w.norm(), state.z.norm());
    const double eps_dual = sqrt_d * a.absTol + a.relTol * state.c * state.eta.norm();
    if (state.primalResidual <= eps_pri && state.dualResidual <= eps_dual) {
      diag.status = FitStatus::converged;
      break;
    }
    if (a.adaptPenalty) {
      if (state.primalResidual > a.balanceRatio * state.dualResidual) {
        state.c *= a.penaltyFactor;
        state.eta /= a.penaltyFactor;
      } else if (state.dualResidual > a.balanceRatio * state.primalResidual) {
        state.c /= a.penaltyFactor;
        state.eta *= a.penaltyFactor;
      }
    }
  }
  diag.iterations = state.iteration;
  diag.primalResidual = state.primalResidual;
  diag.dualResidual = state.dualResidual;
  return state;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct PreparedData {
  Dataset data;
  StandardizationParams params;
};

inline PreparedData prepare(const Dataset& raw, bool doStandardize) {
  raw.validate();
  if (!doStandardize) return {raw, StandardizationParams::identity(raw.features())};
  auto [d, p] = standardize(raw);
  return {std::move(d), std::move(p)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fits

/// Approximate EM for correlated probit regression: outer ADMM loop, one
/// Newton step per iteration on the EP-evaluated L0, soft thresholding of z.
/// With Penalty::l2 the objective is L0(w) + lambda0/2 |w|^2 solved by Newton.
inline FittedModel fit_cpr(const Dataset& raw, const CovarianceModel& cov, double lambda0,
                           const FitOptions& opts = {}) {
  detail::require(lambda0 >= 0.0 && std::isfinite(lambda0), "fit_cpr: lambda0 must be non-negative");
  detail::Stopwatch clock;
  auto prep = detail::prepare(raw, opts.standardize);
  const MatrixXd sigma = build_covariance(cov, prep.data);
  auto absorbed = absorb_labels(prep.data, sigma);

  FittedModel model;
  model.method = Method::cpr;
  model.penalty = opts.penalty;
  model.lambda0 = lambda0;
  model.covariance = cov;
  model.standardization = prep.params;
  model.seed = opts.seed;

  const Index d = prep.data.features();
  CprLoss loss(std::move(absorbed.X), std::move(absorbed.Sigma), opts.ep);
  VectorXd w0 = VectorXd::Zero(d);
  double f0 = loss.value(w0);
  loss.accept();

  if (opts.penalty == Penalty::l2) {
    detail::require(lambda0 > 0.0, "fit_cpr: l2 penalty needs lambda0 > 0");
    model.objectiveTrace.push_back(f0);
    VectorXd w = w0;
    double fw = f0;
    model.diagnostics.status = FitStatus::not_converged;
    const VectorXd zero = VectorXd::Zero(d);
    for (int it = 1; it <= opts.l2MaxIter; ++it) {
      const auto step = detail::newton_step(loss, w, fw, zero, lambda0, opts);
      model.diagnostics.epFailures += step.epFailures;
      model.diagnostics.iterations = it;
      if (step.epGaveUp) {
        model.diagnostics.status = FitStatus::ep_failure;
        break;
      }
      const double moved = (step.w - w).norm();
      w = step.w;
      fw = step.value;
      model.objectiveTrace.push_back(fw + 0.5 * lambda0 * w.squaredNorm());
      if (step.gradNorm < opts.l2Tol || (step.step > 0.0 && moved < opts.l2Tol * (1.0 + w.norm())) ||
          step.step == 0.0) {
        model.diagnostics.status = FitStatus::converged;
        break;
      }
    }
    model.weights = w;
    model.diagnostics.seconds = clock.seconds();
    return model;
  }

  AdmmState state = AdmmState::origin(d, opts.admm.penalty);
  detail::admm_l1(
      loss, lambda0, state, f0, opts, model, [](AdmmState&, double fw) { return fw; },
      [&](const VectorXd& x, double fx) { return fx + lambda0 * x.lpNorm<1>(); }, [] {}, model.weights);
  model.diagnostics.seconds = clock.seconds();
  return model;
}

/// l1-penalized probit regression with noise variance lambda1, i.e. the
/// factorized objective -sum_i log Phi(Xt_i^T w / sqrt(lambda1)) + lambda0 |w|_1.
inline FittedModel fit_probit(const Dataset& raw, double lambda1, double lambda0,
                              const FitOptions& opts = {}) {
  detail::require(lambda1 > 0.0, "fit_probit: lambda1 must be positive");
  detail::require(lambda0 >= 0.0, "fit_probit: lambda0 must be non-negative");
  detail::Stopwatch clock;
  auto prep = detail::prepare(raw, opts.standardize);
  const MatrixXd Xt = prep.data.X * prep.data.y.asDiagonal();

  FittedModel model;
  model.method = Method::probit;
  model.lambda0 = lambda0;
  model.covariance = CovarianceModel::mixture(lambda1, 0.0);
  model.standardization = prep.params;
  model.seed = opts.seed;

  const Index d = prep.data.features();
  ProbitLoss loss(Xt, std::sqrt(lambda1));
  const double f0 = loss.value(VectorXd::Zero(d));
  loss.accept();
  AdmmState state = AdmmState::origin(d, opts.admm.penalty);
  detail::admm_l1(
      loss, lambda0, state, f0, opts, model, [](AdmmState&, double fw) { return fw; },
      [&](const VectorXd& x, double fx) { return fx + lambda0 * x.lpNorm<1>(); }, [] {}, model.weights);
  model.diagnostics.seconds = clock.seconds();
  return model;
}

/// MAP approximation: minimizes
///   -sum_i log Phi(Xt_i^T (w + w') / sqrt(lambda1)) + |w'|^2 / (2 lambda2) + lambda0 |w|_1
/// alternating a Newton step in w' with an ADMM-wrapped Newton step in w.
/// lambda1 and lambda2 are the identity and linear-kernel weights of `cov`.
inline FittedModel fit_cpr_map(const Dataset& raw, const CovarianceModel& cov, double lambda0,
                               const FitOptions& opts = {}) {
  cov.validate();
  const double lambda1 = cov.identity_weight();
  const double lambda2 = cov.linear_weight();
  detail::require(lambda1 > 0.0, "fit_cpr_map: lambda1 must be positive");
  detail::require(lambda2 > 0.0, "fit_cpr_map: lambda2 must be positive");
  detail::require(lambda0 >= 0.0, "fit_cpr_map: lambda0 must be non-negative");
  detail::Stopwatch clock;
  auto prep = detail::prepare(raw, opts.standardize);
  const MatrixXd Xt = prep.data.X * prep.data.y.asDiagonal();

  FittedModel model;
  model.method = Method::cpr_map;
  model.lambda0 = lambda0;
  model.covariance = CovarianceModel::mixture(lambda1, lambda2);
  model.standardization = prep.params;
  model.seed = opts.seed;

  const Index d = prep.data.features();
  const double scale = std::sqrt(lambda1);
  const double ridge = 1.0 / lambda2;
  ProbitLoss wloss(Xt, scale);     // in w, offset Xt^T w'
  ProbitLoss dense(Xt, scale);     // in w', offset Xt^T w
  VectorXd wPrime = VectorXd::Zero(d);
  const VectorXd zero = VectorXd::Zero(d);

  const double f0 = wloss.value(zero);
  wloss.accept();
  AdmmState state = AdmmState::origin(d, opts.admm.penalty);

  auto update_dense = [&](AdmmState& s, double) {
    dense.set_offset(Xt.transpose() * s.w);
    const double g0 = dense.value(wPrime);
    dense.accept();
    const auto step = detail::newton_step(dense, wPrime, g0, zero, ridge, opts);
    wPrime = step.w;
    wloss.set_offset(Xt.transpose() * wPrime);
    const double fw = wloss.value(s.w);
    wloss.accept();
    return fw;
  };
  auto objective = [&](const VectorXd& x, double fx) {
    return fx + 0.5 * ridge * wPrime.squaredNorm() + lambda0 * x.lpNorm<1>();
  };
  VectorXd bestPrime = wPrime;
  detail::admm_l1(wloss, lambda0, state, f0, opts, model, update_dense, objective,
                  [&] { bestPrime = wPrime; }, model.weights);
  model.wPrime = bestPrime;
  model.diagnostics.seconds = clock.seconds();
  return model;
}

/// Value of the MAP objective at (w, w') on label-absorbed data.
inline double map_objective(const MatrixXd& Xt, double lambda1, double lambda2, double lambda0,
                            const VectorXd& w, const VectorXd& wPrime) {
  const auto t = probit_terms(Xt.transpose() * (w + wPrime), std::sqrt(lambda1));
  return t.value + wPrime.squaredNorm() / (2.0 * lambda2) + lambda0 * w.lpNorm<1>();
}

/// Gradient of the smooth part of the MAP objective in (w, w').
inline std::pair<VectorXd, VectorXd> map_gradient(const MatrixXd& Xt, double lambda1, double lambda2,
                                                  const VectorXd& w, const VectorXd& wPrime) {
  const auto t = probit_terms(Xt.transpose() * (w + wPrime), std::sqrt(lambda1));
  const VectorXd g = Xt * t.dscore;
  return {g, g + wPrime / lambda2};
}

/// GP-classification limit: no fixed effect, prediction through the
/// correlated model only.
inline FittedModel fit_gp_limit(const Dataset& raw, const CovarianceModel& cov,
                                const FitOptions& opts = {}) {
  cov.validate();
  auto prep = detail::prepare(raw, opts.standardize);
  FittedModel model;
  model.method = Method::gp_limit;
  model.weights = VectorXd::Zero(prep.data.features());
  model.covariance = cov;
  model.standardization = prep.params;
  model.seed = opts.seed;
  model.diagnostics.status = FitStatus::converged;
  return model;
}

}  // namespace cpr
