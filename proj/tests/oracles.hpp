// Independent test oracles. These deliberately avoid the library's
// implementation paths: brute-force enumeration, tiny-step gradient descent,
// exhaustive scans. Expected values asserted in the tests come from here.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "cascade/types.hpp"

namespace oracles {

using cascade::Index;
using cascade::Matrix;
using cascade::Real;
using cascade::Vector;

// Minimum weighted-SSE nondecreasing fit by enumerating every contiguous
// partition (2^(m-1) candidates) whose block means are monotone.
inline Vector brute_force_isotonic(const Vector& values, const Vector& weights) {
  const auto m = static_cast<std::size_t>(values.size());
  Real best_sse = std::numeric_limits<Real>::infinity();
  Vector best = values;
  for (std::size_t mask = 0; mask < (std::size_t{1} << (m - 1)); ++mask) {
    std::vector<std::size_t> cuts{0};
    for (std::size_t i = 0; i + 1 < m; ++i)
      if (mask & (std::size_t{1} << i)) cuts.push_back(i + 1);
    cuts.push_back(m);

    Vector fit(values.size());
    bool monotone = true;
    Real prev_mean = -std::numeric_limits<Real>::infinity();
    Real sse = 0.0;
    for (std::size_t b = 0; b + 1 < cuts.size() && monotone; ++b) {
      Real wsum = 0.0, vsum = 0.0;
      for (std::size_t i = cuts[b]; i < cuts[b + 1]; ++i) {
        wsum += weights[static_cast<Index>(i)];
        vsum += weights[static_cast<Index>(i)] * values[static_cast<Index>(i)];
      }
      const Real mean = vsum / wsum;
      if (mean < prev_mean - 1e-12) {
        monotone = false;
        break;
      }
      prev_mean = mean;
      for (std::size_t i = cuts[b]; i < cuts[b + 1]; ++i) {
        fit[static_cast<Index>(i)] = mean;
        const Real d = values[static_cast<Index>(i)] - mean;
        sse += weights[static_cast<Index>(i)] * d * d;
      }
    }
    if (monotone && sse < best_sse) {
      best_sse = sse;
      best = fit;
    }
  }
  return best;
}

// Iterative ridge minimizer (gradient descent on the penalized least-squares
// objective, intercept unpenalized); independent of the closed-form solve.
inline std::pair<Vector, Real> ridge_gradient_descent(const Matrix& X, const Vector& y,
                                                      Real penalty, int iters = 200000,
                                                      Real lr = 1e-3) {
  const Index n = X.rows();
  const Index d = X.cols();
  Vector w = Vector::Zero(d);
  Real b = 0.0;
  for (int it = 0; it < iters; ++it) {
    const Vector r = X * w + Vector::Constant(n, b) - y;
    const Vector grad_w = 2.0 * (X.transpose() * r) + 2.0 * penalty * w;
    const Real grad_b = 2.0 * r.sum();
    w -= lr * grad_w;
    b -= lr * grad_b;
  }
  return {w, b};
}

// Tiny-step full-batch log-loss minimizer; returns the achieved mean log-loss.
inline Real logistic_descent_loss(const Matrix& X, const Vector& labels, int iters,
                                  Real lr) {
  const Index n = X.rows();
  Vector w = Vector::Zero(X.cols());
  Real b = 0.0;
  for (int it = 0; it < iters; ++it) {
    const Vector eta = ((X * w).array() + b).matrix();
    const Vector p = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
    const Vector err = (p - labels) / static_cast<Real>(n);
    w -= lr * (X.transpose() * err);
    b -= lr * err.sum();
  }
  Real loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Real eta = w.dot(X.row(i).transpose()) + b;
    const Real p = std::clamp(1.0 / (1.0 + std::exp(-eta)), 1e-15, 1.0 - 1e-15);
    loss += labels[i] == 1.0 ? -std::log(p) : -std::log(1.0 - p);
  }
  return loss / static_cast<Real>(n);
}

// Exhaustive k-nearest-neighbour scan with (distance, index) ordering.
inline Real knn_scan(const Matrix& X, const Vector& y, Index k, const Vector& q) {
  std::vector<std::pair<Real, Index>> d(static_cast<std::size_t>(X.rows()));
  for (Index i = 0; i < X.rows(); ++i)
    d[static_cast<std::size_t>(i)] = {(X.row(i).transpose() - q).squaredNorm(), i};
  std::sort(d.begin(), d.end());
  Real sum = 0.0;
  for (Index j = 0; j < k; ++j) sum += y[d[static_cast<std::size_t>(j)].second];
  return sum / static_cast<Real>(k);
}

// Spearman rho by the direct definition: mean ranks, then the explicit
// Pearson formula over them.
inline Real spearman_rank_formula(const Vector& x, const Vector& y) {
  const Index n = x.size();
  auto ranks = [n](const Vector& v) {
    Vector r(n);
    for (Index i = 0; i < n; ++i) {
      Real below = 0.0, equal = 0.0;
      for (Index j = 0; j < n; ++j) {
        if (v[j] < v[i]) below += 1.0;
        if (v[j] == v[i]) equal += 1.0;
      }
      r[i] = below + 0.5 * (equal + 1.0);
    }
    return r;
  };
  const Vector rx = ranks(x);
  const Vector ry = ranks(y);
  const Real mx = rx.mean();
  const Real my = ry.mean();
  Real num = 0.0, vx = 0.0, vy = 0.0;
  for (Index i = 0; i < n; ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    vx += (rx[i] - mx) * (rx[i] - mx);
    vy += (ry[i] - my) * (ry[i] - my);
  }
  return num / std::sqrt(vx * vy);
}

// KS D by evaluating both ECDFs at every pooled sample point; integer counts
// keep the supremum exact.
inline Real ks_statistic_pointwise(const Vector& a, const Vector& b) {
  std::vector<Real> points(a.begin(), a.end());
  points.insert(points.end(), b.begin(), b.end());
  const auto na = static_cast<long long>(a.size());
  const auto nb = static_cast<long long>(b.size());
  long long max_num = 0;
  for (Real x : points) {
    long long ca = 0, cb = 0;
    for (Index i = 0; i < a.size(); ++i)
      if (a[i] <= x) ++ca;
    for (Index i = 0; i < b.size(); ++i)
      if (b[i] <= x) ++cb;
    max_num = std::max(max_num, std::abs(ca * nb - cb * na));
  }
  return static_cast<Real>(max_num) / (static_cast<Real>(na) * static_cast<Real>(nb));
}

}  // namespace oracles
