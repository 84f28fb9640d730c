#pragma once

// Test-side oracles, written independently of the library code under test.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "cpr/rng.hpp"

namespace cpr::testing {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double Phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace detail {
inline double simpson_rec(const std::function<double(double)>& f, double a, double b, double fa, double fm,
                          double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}
}  // namespace detail

/// Adaptive Simpson quadrature on [a, b].
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-13,
                        int depth = 30) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth);
}

/// P(s1 * Z1 > 0, s2 * Z2 > 0) for Z ~ N(m, S) in two dimensions, by
/// integrating the conditional normal CDF of Z2 over the admissible Z1.
inline double bivariate_sign_probability(const VectorXd& m, const MatrixXd& S, double s1, double s2) {
  const double sd1 = std::sqrt(S(0, 0));
  const double beta = S(0, 1) / S(0, 0);
  const double condVar = S(1, 1) - S(0, 1) * S(0, 1) / S(0, 0);
  const double condSd = std::sqrt(condVar);
  auto f = [&](double z1) {
    const double dens = phi((z1 - m[0]) / sd1) / sd1;
    const double cm = m[1] + beta * (z1 - m[0]);
    const double p2 = s2 > 0 ? Phi(cm / condSd) : Phi(-cm / condSd);
    return dens * p2;
  };
  const double span = 14.0 * sd1;
  const double lo = s1 > 0 ? 0.0 : std::min(0.0, m[0] - span);
  const double hi = s1 > 0 ? std::max(0.0, m[0] + span) : 0.0;
  // Split at the mean so the peak is resolved.
  const double mid = std::clamp(m[0], lo, hi);
  return integrate(f, lo, mid, 1e-14) + integrate(f, mid, hi, 1e-14);
}

inline MatrixXd random_matrix(Rng& rng, Index r, Index c, double scale = 1.0) {
  MatrixXd A(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) A(i, j) = scale * rng.normal();
  return A;
}

inline VectorXd random_vector(Rng& rng, Index n, double scale = 1.0) {
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

/// A A^T / n + ridge I with Gaussian A.
inline MatrixXd random_spd(Rng& rng, Index n, double ridge = 0.5) {
  const MatrixXd A = random_matrix(rng, n, n);
  MatrixXd S = A * A.transpose() / static_cast<double>(n);
  S.diagonal().array() += ridge;
  return S;
}

inline VectorXd random_labels(Rng& rng, Index n) {
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) y[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
  return y;
}

inline double diagonal_objective(const VectorXd& w, const MatrixXd& Xt, double lambda1) {
  const VectorXd s = Xt.transpose() * w / std::sqrt(lambda1);
  double v = 0.0;
  for (Index i = 0; i < s.size(); ++i) v -= std::log(Phi(s[i]));
  return v;
}

// Independent l1-probit solver: FISTA with backtracking on
// -sum log Phi(Xt_i^T w / sqrt(lambda1)) + lambda0 |w|_1.
inline VectorXd fista_l1_probit(const MatrixXd& Xt, double lambda1, double lambda0, int iters = 20000) {
  const Index d = Xt.rows();
  const double s = std::sqrt(lambda1);
  auto value = [&](const VectorXd& w) {
    const VectorXd z = Xt.transpose() * w / s;
    double v = 0.0;
    for (Index i = 0; i < z.size(); ++i) v -= std::log(0.5 * std::erfc(-z[i] / std::sqrt(2.0)));
    return v;
  };
  auto grad = [&](const VectorXd& w) {
    const VectorXd z = Xt.transpose() * w / s;
    VectorXd g(z.size());
    for (Index i = 0; i < z.size(); ++i) g[i] = -phi(z[i]) / (0.5 * std::erfc(-z[i] / std::sqrt(2.0))) / s;
    return VectorXd(Xt * g);
  };
  auto prox = [&](const VectorXd& v, double t) {
    VectorXd out(v.size());
    for (Index i = 0; i < v.size(); ++i) {
      const double a = std::abs(v[i]) - t * lambda0;
      out[i] = a > 0 ? std::copysign(a, v[i]) : 0.0;
    }
    return out;
  };
  VectorXd w = VectorXd::Zero(d), y = w;
  double t = 1.0, L = 1.0;
  for (int k = 0; k < iters; ++k) {
    const VectorXd g = grad(y);
    const double fy = value(y);
    VectorXd next;
    while (true) {
      next = prox(y - g / L, 1.0 / L);
      const VectorXd diff = next - y;
      if (value(next) <= fy + g.dot(diff) + 0.5 * L * diff.squaredNorm() + 1e-15) break;
      L *= 2.0;
    }
    const double tNext = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / tNext) * (next - w);
    if ((next - w).lpNorm<Eigen::Infinity>() < 1e-13 && k > 10) {
      w = next;
      break;
    }
    w = next;
    t = tNext;
  }
  return w;
}

}  // namespace cpr::testing
