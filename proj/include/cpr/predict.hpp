#pragma once

// Label prediction for fitted models: the independent rule sign(x^T w) and
// the correlated rule that picks the test labels maximizing the joint orthant
// mass of test and training samples.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "cpr/ep.hpp"
#include "cpr/error.hpp"
#include "cpr/fit.hpp"
#include "cpr/model.hpp"
#include "cpr/normal.hpp"

namespace cpr {

/// sign(s) with sign(0) = +1.
inline VectorXd sign_labels(const VectorXd& scores) {
  return scores.unaryExpr([](double s) { return s >= 0.0 ? 1.0 : -1.0; });
}

/// Linear scores of raw test samples (d x m).
inline VectorXd linear_scores(const FittedModel& model, const MatrixXd& testX) {
  detail::require(testX.rows() == model.weights.size(), "predict: feature count mismatch");
  return model.standardization.apply(testX).transpose() * model.score_weights();
}

inline VectorXd predict_independent(const FittedModel& model, const MatrixXd& testX) {
  return sign_labels(linear_scores(model, testX));
}

/// Test block first, training block second, both standardized with the
/// model's parameters; covariance from the model's kernels and lambdas.
struct PredictionJoin {
  Dataset joint;
  Index testCount = 0;
  MatrixXd covariance;

  Index trainCount() const { return joint.samples() - testCount; }
};

inline PredictionJoin make_join(const FittedModel& model, const Dataset& train, const Dataset& test) {
  detail::require(train.features() == test.features(), "predict: train/test feature mismatch");
  detail::require(test.samples() >= 1, "predict: empty test set");
  for (const auto& c : model.covariance.components)
    if (c.kind == KernelKind::precomputed)
      detail::require(!train.ids.empty() && !test.ids.empty(),
                      "predict: precomputed kernels need sample ids on train and test data");
  Dataset tr = train, te = test;
  tr.X = model.standardization.apply(train.X);
  te.X = model.standardization.apply(test.X);
  te.y = VectorXd::Ones(test.samples());  // placeholders; candidates fill these in
  PredictionJoin join;
  join.joint = concat(te, tr);
  join.testCount = test.samples();
  join.covariance = build_covariance(model.covariance, join.joint);
  return join;
}

enum class CorrelatedMode { automatic, exhaustive, per_sample };

struct CorrelatedOptions {
  CorrelatedMode mode = CorrelatedMode::automatic;
  /// Largest test block enumerated exactly in automatic mode.
  Index enumerationLimit = 10;
  /// Per-sample mode: rerun the full joint EP for each candidate instead of
  /// holding the training sites at their training-only fixed point.
  bool refineJoint = false;
  EpOptions ep;
};

struct CorrelatedPrediction {
  VectorXd labels;
  /// Per-sample log odds log Z(+1) - log Z(-1); empty in exhaustive mode.
  VectorXd logOdds;
  int failedCandidates = 0;
};

namespace detail {

inline double joint_log_mass(const PredictionJoin& join, const VectorXd& w, const VectorXd& labels,
                             const EpOptions& opts, const EpSiteState* warm = nullptr) {
  const auto absorbed = absorb_labels(join.joint.X, labels, join.covariance);
  return OrthantEp(absorbed.Sigma).run(absorbed.X.transpose() * w, warm, opts).moments.logMass;
}

}  // namespace detail

/// Correlated prediction. Exhaustive mode scores all 2^m test labelings by
/// the EP orthant mass of the joint model and returns the best (ties go to
/// the earliest candidate, all +1 first). Per-sample mode joins each test
/// point alone with the training block and compares its two labels.
inline CorrelatedPrediction predict_correlated(const FittedModel& model, const Dataset& train,
                                               const Dataset& test, const CorrelatedOptions& opts = {}) {
  train.validate();
  const PredictionJoin join = make_join(model, train, test);
  const VectorXd w = model.score_weights();
  const Index m = join.testCount, n = join.trainCount();
  const bool exhaustive = opts.mode == CorrelatedMode::exhaustive ||
                          (opts.mode == CorrelatedMode::automatic && m <= opts.enumerationLimit);
  CorrelatedPrediction out;
  out.labels = VectorXd::Ones(m);

  if (exhaustive) {
    detail::require(m <= 20, "predict_correlated: exhaustive mode limited to 20 test samples");
    VectorXd labels(m + n);
    labels.tail(n) = train.y;
    double best = -std::numeric_limits<double>::infinity();
    const std::uint64_t count = std::uint64_t{1} << m;
    for (std::uint64_t bits = 0; bits < count; ++bits) {
      for (Index j = 0; j < m; ++j) labels[j] = ((bits >> j) & 1U) ? -1.0 : 1.0;
      double lm;
      try {
        lm = detail::joint_log_mass(join, w, labels, opts.ep);
      } catch (const EpFailure&) {
        ++out.failedCandidates;
        continue;
      }
      if (lm > best) {
        best = lm;
        out.labels = labels.head(m);
      }
    }
    return out;
  }

  // Training block: absorbed labels and EP fixed point.
  const MatrixXd Xj = join.joint.X;
  const VectorXd mu_all = Xj.transpose() * w;
  const MatrixXd& K = join.covariance;
  const MatrixXd K_RR = K.bottomRightCorner(n, n);
  const VectorXd yR = train.y;
  const MatrixXd St_RR = yR.asDiagonal() * K_RR * yR.asDiagonal();
  const VectorXd mu_R = yR.cwiseProduct(mu_all.tail(n));
  const OrthantEp train_ep(St_RR);
  const EpResult train_fit = train_ep.run(mu_R, nullptr, opts.ep);
  out.logOdds.resize(m);

  if (!opts.refineJoint) {
    // Holding the training sites fixed, the joint EP differs from the
    // training-only one by the single test site, whose cavity is the
    // predictive N(a, b) of the test noise-plus-score. Then
    // log Z(y) = log Z_R + log Phi(y a / sqrt(b)).
    const auto& fac = train_ep.factor();
    const VectorXd delta = train_fit.moments.mean - mu_R;
    const VectorXd alpha = fac.solve(delta);
    const MatrixXd& S_R = train_fit.moments.covariance;
    for (Index j = 0; j < m; ++j) {
      // Absorbed cross covariance between test j (label +1) and training.
      const VectorXd k = yR.cwiseProduct(K.block(m, j, n, 1));
      const VectorXd pk = fac.solve(k);
      const double a = mu_all[j] + k.dot(alpha);
      const double b = K(j, j) - k.dot(pk) + pk.dot(S_R * pk);
      if (!(b > 0.0)) throw EpFailure("predict_correlated: non-positive predictive variance");
      const double z = a / std::sqrt(b);
      out.logOdds[j] = log_norm_cdf(z) - log_norm_cdf(-z);
      out.labels[j] = a >= 0.0 ? 1.0 : -1.0;
    }
    return out;
  }

  EpSiteState warm;
  warm.sitePrecisions = VectorXd::Zero(n + 1);
  warm.siteShifts = VectorXd::Zero(n + 1);
  warm.sitePrecisions.tail(n) = train_fit.sites.sitePrecisions;
  warm.siteShifts.tail(n) = train_fit.sites.siteShifts;
  std::vector<Index> cols(static_cast<std::size_t>(n + 1));
  for (Index j = 0; j < m; ++j) {
    cols[0] = j;
    for (Index i = 0; i < n; ++i) cols[static_cast<std::size_t>(i + 1)] = m + i;
    PredictionJoin single;
    single.joint = subset(join.joint, cols);
    single.testCount = 1;
    single.covariance = MatrixXd(n + 1, n + 1);
    for (Index a = 0; a <= n; ++a)
      for (Index b = 0; b <= n; ++b)
        single.covariance(a, b) = K(cols[static_cast<std::size_t>(a)], cols[static_cast<std::size_t>(b)]);
    VectorXd labels(n + 1);
    labels.tail(n) = yR;
    double lm[2];
    for (int c = 0; c < 2; ++c) {
      labels[0] = c == 0 ? 1.0 : -1.0;
      try {
        lm[c] = detail::joint_log_mass(single, w, labels, opts.ep, &warm);
      } catch (const EpFailure&) {
        ++out.failedCandidates;
        lm[c] = -std::numeric_limits<double>::infinity();
      }
    }
    out.logOdds[j] = lm[0] - lm[1];
    out.labels[j] = lm[0] >= lm[1] ? 1.0 : -1.0;
  }
  return out;
}

}  // namespace cpr
