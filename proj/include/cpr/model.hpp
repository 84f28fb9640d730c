#pragma once

// Problem setup for correlated probit regression: data container, noise
// kernels, covariance assembly, label-sign absorption and standardization.

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpr/error.hpp"

namespace cpr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Samples are columns: X is d x n, y has n entries in {+1, -1}.
struct Dataset {
  MatrixXd X;
  VectorXd y;
  /// Auxiliary per-sample features (d' x n) feeding the rbf-side kernel.
  std::optional<MatrixXd> side;
  std::vector<std::string> names;
  /// Row/column of each sample in a precomputed kernel. Empty means 0..n-1.
  std::vector<Index> ids;

  Index features() const { return X.rows(); }
  Index samples() const { return X.cols(); }

  Index id(Index i) const { return ids.empty() ? i : ids[static_cast<std::size_t>(i)]; }

  void validate() const {
    detail::require(y.size() == X.cols(), "label count does not match sample count");
    detail::require(X.allFinite(), "design matrix has non-finite entries");
    for (Index i = 0; i < y.size(); ++i)
      detail::require(y[i] == 1.0 || y[i] == -1.0, "labels must be +1 or -1");
    if (side) {
      detail::require(side->cols() == X.cols(), "side features must have one column per sample");
      detail::require(side->allFinite(), "side features have non-finite entries");
    }
    detail::require(ids.empty() || static_cast<Index>(ids.size()) == X.cols(),
                    "sample id count does not match sample count");
  }
};

/// Columns `cols` of `data`, in that order.
inline Dataset subset(const Dataset& data, std::span<const Index> cols) {
  Dataset out;
  const auto m = static_cast<Index>(cols.size());
  out.X.resize(data.X.rows(), m);
  out.y.resize(m);
  if (data.side) out.side = MatrixXd(data.side->rows(), m);
  out.names = data.names;
  out.ids.resize(cols.size());
  for (Index j = 0; j < m; ++j) {
    const Index c = cols[static_cast<std::size_t>(j)];
    detail::require(c >= 0 && c < data.samples(), "subset index out of range");
    out.X.col(j) = data.X.col(c);
    out.y[j] = data.y[c];
    if (data.side) out.side->col(j) = data.side->col(c);
    out.ids[static_cast<std::size_t>(j)] = data.id(c);
  }
  return out;
}

/// Samples of `first` followed by samples of `second`.
inline Dataset concat(const Dataset& first, const Dataset& second) {
  detail::require(first.features() == second.features(), "feature count mismatch in concat");
  detail::require(first.side.has_value() == second.side.has_value(),
                  "side features present in only one dataset");
  Dataset out;
  const Index n1 = first.samples(), n2 = second.samples();
  out.X.resize(first.features(), n1 + n2);
  out.X << first.X, second.X;
  out.y.resize(n1 + n2);
  out.y << first.y, second.y;
  if (first.side) {
    detail::require(first.side->rows() == second.side->rows(), "side feature count mismatch");
    out.side = MatrixXd(first.side->rows(), n1 + n2);
    *out.side << *first.side, *second.side;
  }
  out.names = first.names;
  for (Index i = 0; i < n1; ++i) out.ids.push_back(first.id(i));
  for (Index i = 0; i < n2; ++i) out.ids.push_back(second.id(i));
  return out;
}

// ---------------------------------------------------------------------------
// Kernels

enum class KernelKind { identity, linear, rbf_side, precomputed };

struct KernelComponent {
  KernelKind kind = KernelKind::identity;
  double lengthScale = 0.2;
  /// Sample-by-sample matrix indexed through Dataset::ids (precomputed only).
  std::shared_ptr<const MatrixXd> matrix;

  static KernelComponent identity() { return {}; }
  static KernelComponent linear() { return {KernelKind::linear, 0.2, nullptr}; }
  static KernelComponent rbf_side(double lengthScale) {
    return {KernelKind::rbf_side, lengthScale, nullptr};
  }
  static KernelComponent precomputed(std::shared_ptr<const MatrixXd> m) {
    return {KernelKind::precomputed, 0.0, std::move(m)};
  }
};

inline const char* to_string(KernelKind k) {
  switch (k) {
    case KernelKind::identity: return "identity";
    case KernelKind::linear: return "linear";
    case KernelKind::rbf_side: return "rbf-side";
    case KernelKind::precomputed: return "precomputed";
  }
  return "?";
}

/// X^T X for X of shape d x n.
inline MatrixXd linear_kernel(const MatrixXd& X) {
  detail::require(X.allFinite(), "linear_kernel: non-finite input");
  MatrixXd K = MatrixXd::Zero(X.cols(), X.cols());
  K.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
  return K.selfadjointView<Eigen::Lower>();
}

/// exp(-|a - b|^2 / (2 s^2)) between columns of `side`.
inline MatrixXd rbf_kernel(const MatrixXd& side, double lengthScale) {
  detail::require(lengthScale > 0.0 && std::isfinite(lengthScale),
                  "rbf_kernel: length scale must be positive");
  detail::require(side.allFinite(), "rbf_kernel: non-finite input");
  const Index n = side.cols();
  const double scale = -0.5 / (lengthScale * lengthScale);
  MatrixXd K(n, n);
  for (Index j = 0; j < n; ++j) {
    K(j, j) = 1.0;
    for (Index i = j + 1; i < n; ++i) {
      const double v = std::exp(scale * (side.col(i) - side.col(j)).squaredNorm());
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

inline MatrixXd kernel_matrix(const KernelComponent& c, const Dataset& data) {
  const Index n = data.samples();
  switch (c.kind) {
    case KernelKind::identity:
      return MatrixXd::Identity(n, n);
    case KernelKind::linear:
      return linear_kernel(data.X);
    case KernelKind::rbf_side:
      detail::require(data.side.has_value(), "rbf-side kernel requires side features");
      return rbf_kernel(*data.side, c.lengthScale);
    case KernelKind::precomputed: {
      detail::require(c.matrix != nullptr, "precomputed kernel has no matrix");
      const MatrixXd& full = *c.matrix;
      MatrixXd K(n, n);
      for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i) {
          const Index a = data.id(i), b = data.id(j);
          detail::require(a < full.rows() && b < full.cols(), "sample id outside precomputed kernel");
          K(i, j) = full(a, b);
        }
      return K;
    }
  }
  throw InvalidInput("unknown kernel kind");
}

// ---------------------------------------------------------------------------
// Covariance

/// Sigma = sum_i lambda_i K_i + jitter I. The identity weight regularizes
/// Sigma when the other kernels have small eigenvalues.
struct CovarianceModel {
  std::vector<KernelComponent> components;
  std::vector<double> lambdas;
  /// Jitter is jitterScale * trace(Sigma) / n.
  double jitterScale = 1e-8;

  /// lambda1 I + lambda2 X^T X (+ lambda3 K_side when `side` is given).
  static CovarianceModel mixture(double lambda1, double lambda2,
                                 std::optional<KernelComponent> side = std::nullopt,
                                 double lambda3 = 0.0) {
    CovarianceModel m;
    m.components = {KernelComponent::identity(), KernelComponent::linear()};
    m.lambdas = {lambda1, lambda2};
    if (side) {
      m.components.push_back(*side);
      m.lambdas.push_back(lambda3);
    }
    return m;
  }

  void validate() const {
    detail::require(components.size() == lambdas.size(),
                    "covariance model: one lambda per kernel component");
    bool identity_positive = false;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      detail::require(lambdas[i] >= 0.0 && std::isfinite(lambdas[i]),
                      "covariance model: lambdas must be non-negative");
      if (components[i].kind == KernelKind::identity && lambdas[i] > 0.0) identity_positive = true;
      if (components[i].kind == KernelKind::rbf_side)
        detail::require(components[i].lengthScale > 0.0, "rbf-side length scale must be positive");
    }
    detail::require(identity_positive, "covariance model: identity weight must be positive");
    detail::require(jitterScale >= 0.0, "covariance model: negative jitter");
  }

  /// True when every non-identity weight is zero.
  bool diagonal() const {
    for (std::size_t i = 0; i < lambdas.size(); ++i)
      if (components[i].kind != KernelKind::identity && lambdas[i] != 0.0) return false;
    return true;
  }

  double identity_weight() const {
    double s = 0.0;
    for (std::size_t i = 0; i < lambdas.size(); ++i)
      if (components[i].kind == KernelKind::identity) s += lambdas[i];
    return s;
  }

  double linear_weight() const {
    double s = 0.0;
    for (std::size_t i = 0; i < lambdas.size(); ++i)
      if (components[i].kind == KernelKind::linear) s += lambdas[i];
    return s;
  }
};

/// Assembles Sigma and checks that it admits a Cholesky factorization.
inline MatrixXd build_covariance(const CovarianceModel& model, const Dataset& data) {
  model.validate();
  const Index n = data.samples();
  MatrixXd sigma = MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < model.components.size(); ++i) {
    if (model.lambdas[i] == 0.0) continue;
    if (model.components[i].kind == KernelKind::identity) {
      sigma.diagonal().array() += model.lambdas[i];
    } else {
      sigma.noalias() += model.lambdas[i] * kernel_matrix(model.components[i], data);
    }
  }
  sigma = 0.5 * (sigma + sigma.transpose());
  if (n > 0) sigma.diagonal().array() += model.jitterScale * sigma.trace() / static_cast<double>(n);
  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw IndefiniteCovariance("covariance is not positive definite");
  return sigma;
}

// ---------------------------------------------------------------------------
// Label absorption

struct AbsorbedProblem {
  MatrixXd X;      // column i scaled by y_i
  MatrixXd Sigma;  // diag(y) Sigma diag(y)
};

/// After this transform every label is +1 and the likelihood is the mass of
/// N(X^T w, Sigma) on the positive orthant.
inline AbsorbedProblem absorb_labels(const MatrixXd& X, const VectorXd& y, const MatrixXd& sigma) {
  detail::require(X.cols() == y.size(), "absorb_labels: label count mismatch");
  detail::require(sigma.rows() == y.size() && sigma.cols() == y.size(),
                  "absorb_labels: covariance size mismatch");
  for (Index i = 0; i < y.size(); ++i)
    detail::require(y[i] == 1.0 || y[i] == -1.0, "absorb_labels: labels must be +1 or -1");
  AbsorbedProblem out;
  out.X = X * y.asDiagonal();
  out.Sigma = y.asDiagonal() * sigma * y.asDiagonal();
  return out;
}

inline AbsorbedProblem absorb_labels(const Dataset& data, const MatrixXd& sigma) {
  return absorb_labels(data.X, data.y, sigma);
}

// ---------------------------------------------------------------------------
// Standardization

struct StandardizationParams {
  VectorXd means;
  VectorXd scales;
  bool enabled = true;

  MatrixXd apply(const MatrixXd& X) const {
    if (!enabled) return X;
    detail::require(X.rows() == means.size(), "standardization: feature count mismatch");
    return (X.colwise() - means).array().colwise() / scales.array();
  }

  MatrixXd invert(const MatrixXd& Z) const {
    if (!enabled) return Z;
    detail::require(Z.rows() == means.size(), "standardization: feature count mismatch");
    return (Z.array().colwise() * scales.array()).matrix().colwise() + means;
  }

  static StandardizationParams identity(Index d) {
    return {VectorXd::Zero(d), VectorXd::Ones(d), false};
  }
};

/// Centers every feature and scales it to unit population standard deviation.
/// Constant features map to zero with scale 1.
inline std::pair<Dataset, StandardizationParams> standardize(const Dataset& data) {
  const Index d = data.features(), n = data.samples();
  StandardizationParams p{VectorXd::Zero(d), VectorXd::Ones(d), true};
  if (n > 0) {
    p.means = data.X.rowwise().mean();
    for (Index k = 0; k < d; ++k) {
      const double var = (data.X.row(k).array() - p.means[k]).square().sum() / static_cast<double>(n);
      const double sd = std::sqrt(var);
      // Round-off level spread counts as constant.
      const double ref = std::max(1.0, std::abs(p.means[k]));
      if (sd > 1e-12 * ref) p.scales[k] = sd;
    }
  }
  Dataset out = data;
  out.X = p.apply(data.X);
  for (Index k = 0; k < d; ++k)
    if (p.scales[k] == 1.0 && (data.X.row(k).array() == data.X(k, 0)).all()) out.X.row(k).setZero();
  return {std::move(out), std::move(p)};
}

}  // namespace cpr
