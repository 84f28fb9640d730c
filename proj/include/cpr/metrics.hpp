#pragma once

// Classification metrics and the confounder-correlation diagnostic.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <vector>

#include "cpr/error.hpp"
#include "cpr/model.hpp"
#include "cpr/rng.hpp"

namespace cpr {

inline double accuracy(const VectorXd& pred, const VectorXd& labels) {
  detail::require(pred.size() == labels.size() && labels.size() > 0, "accuracy: size mismatch or empty");
  Index hits = 0;
  for (Index i = 0; i < labels.size(); ++i) hits += (pred[i] == labels[i]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

namespace detail {

inline void require_two_classes(const VectorXd& scores, const VectorXd& labels, Index& pos, Index& neg) {
  require(scores.size() == labels.size(), "auc: size mismatch");
  require(scores.allFinite(), "auc: non-finite scores");
  pos = neg = 0;
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1.0) ++pos;
    else if (labels[i] == -1.0) ++neg;
    else throw InvalidInput("auc: labels must be +1 or -1");
  }
  require(pos > 0 && neg > 0, "auc: both classes must be present");
}

}  // namespace detail

/// Rank-based AUC; tied positive/negative pairs count 1/2.
inline double auc(const VectorXd& scores, const VectorXd& labels) {
  Index pos, neg;
  detail::require_two_classes(scores, labels, pos, neg);
  const Index n = scores.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return scores[a] < scores[b]; });
  // Sum of midranks of positives (Mann-Whitney).
  double rankSum = 0.0;
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index k = i; k <= j; ++k)
      if (labels[order[k]] == 1.0) rankSum += midrank;
    i = j + 1;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rankSum - p * (p + 1.0) / 2.0) / (p * q);
}

/// Area under the ROC curve over FPR in [0, upperFpr] by the trapezoid rule,
/// divided by upperFpr. Tied scores form one diagonal ROC segment, so
/// upperFpr = 1 reproduces auc().
inline double auc_partial(const VectorXd& scores, const VectorXd& labels, double upperFpr = 0.1) {
  detail::require(upperFpr > 0.0 && upperFpr <= 1.0, "auc_partial: upperFpr must lie in (0, 1]");
  Index pos, neg;
  detail::require_two_classes(scores, labels, pos, neg);
  const Index n = scores.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return scores[a] > scores[b]; });
  // Integer counts keep the full-range area exact.
  Index tp = 0, fp = 0;
  double area = 0.0;  // in units of pos * neg
  const double cap = upperFpr * static_cast<double>(neg);
  for (Index i = 0; i < n;) {
    Index j = i, dtp = 0, dfp = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1.0 ? dtp : dfp) += 1;
      ++j;
    }
    const double x0 = static_cast<double>(fp), x1 = static_cast<double>(fp + dfp);
    const double y0 = static_cast<double>(tp), y1 = static_cast<double>(tp + dtp);
    if (x1 <= cap) {
      area += 0.5 * (x1 - x0) * (y0 + y1);
    } else if (x0 < cap) {
      const double t = (cap - x0) / (x1 - x0);
      area += 0.5 * (cap - x0) * (y0 + y0 + t * (y1 - y0));
    }
    tp += dtp;
    fp += dfp;
    i = j;
  }
  return area / (static_cast<double>(pos) * cap);
}

inline double pearson(const VectorXd& a, const VectorXd& b) {
  detail::require(a.size() == b.size() && a.size() > 1, "pearson: size mismatch");
  const VectorXd ac = a.array() - a.mean();
  const VectorXd bc = b.array() - b.mean();
  const double den = ac.norm() * bc.norm();
  if (!(den > 0.0)) return 0.0;
  return ac.dot(bc) / den;
}

/// Leading eigenvector of a symmetric PSD matrix by power iteration from a
/// seeded random start. Sign fixed so the largest-magnitude entry is positive.
inline VectorXd top_eigenvector(const MatrixXd& K, std::uint64_t seed = 1, double tol = 1e-9,
                                int maxIter = 10000) {
  detail::require(K.rows() == K.cols() && K.rows() > 0, "top_eigenvector: square matrix required");
  Rng rng(seed);
  VectorXd v(K.rows());
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  v.normalize();
  for (int it = 0; it < maxIter; ++it) {
    VectorXd next = K * v;
    const double nn = next.norm();
    if (!(nn > 0.0)) break;
    next /= nn;
    if (next.dot(v) < 0.0) next = -next;
    const double change = (next - v).norm();
    v = next;
    if (change < tol) break;
  }
  Index arg;
  v.cwiseAbs().maxCoeff(&arg);
  if (v[arg] < 0.0) v = -v;
  return v;
}

/// |Pearson correlation| of every feature row of X with the top eigenvector
/// of the linear kernel X^T X.
inline VectorXd confounder_correlations(const MatrixXd& X, std::uint64_t seed = 1) {
  const VectorXd pc = top_eigenvector(linear_kernel(X), seed);
  VectorXd c(X.rows());
  for (Index k = 0; k < X.rows(); ++k) c[k] = std::abs(pearson(X.row(k).transpose(), pc));
  return c;
}

/// Running means of the correlations taken in order of decreasing |w|
/// (stable for ties, so equal weights keep feature order).
inline VectorXd correlation_running_mean(const VectorXd& weights, const VectorXd& correlations) {
  detail::require(weights.size() == correlations.size(), "correlation curve: size mismatch");
  std::vector<Index> order(static_cast<std::size_t>(weights.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return std::abs(weights[a]) > std::abs(weights[b]); });
  VectorXd curve(weights.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    sum += correlations[order[i]];
    curve[static_cast<Index>(i)] = sum / static_cast<double>(i + 1);
  }
  return curve;
}

struct CurveSummary {
  VectorXd mean;
  VectorXd stderr_;
};

/// Mean and standard error across repetitions (one curve per row).
inline CurveSummary summarize_curves(const std::vector<VectorXd>& curves) {
  detail::require(!curves.empty(), "correlation curve: no repetitions");
  const Index d = curves.front().size();
  const auto r = static_cast<double>(curves.size());
  CurveSummary s{VectorXd::Zero(d), VectorXd::Zero(d)};
  for (const auto& c : curves) {
    detail::require(c.size() == d, "correlation curve: inconsistent lengths");
    s.mean += c;
  }
  s.mean /= r;
  if (curves.size() > 1) {
    for (const auto& c : curves) s.stderr_ += (c - s.mean).cwiseAbs2();
    s.stderr_ = (s.stderr_ / (r - 1.0)).cwiseSqrt() / std::sqrt(r);
  }
  return s;
}

inline void write_curve_csv(std::ostream& os, const CurveSummary& s) {
  os << "index,mean,stderr\n";
  os.precision(10);
  for (Index i = 0; i < s.mean.size(); ++i)
    os << (i + 1) << ',' << s.mean[i] << ',' << s.stderr_[i] << '\n';
}

}  // namespace cpr
