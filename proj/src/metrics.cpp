#include "cascade/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cascade/errors.hpp"
#include "cascade/parallel.hpp"
#include "cascade/random.hpp"

namespace cascade::metrics {

namespace {

// Regularized incomplete beta via Lentz continued fraction; standard
// Numerical-Recipes-style evaluation, adequate for t-distribution tails.
Real betacf(Real a, Real b, Real x) {
  constexpr int kMaxIter = 300;
  constexpr Real kEps = 3e-16;
  constexpr Real kTiny = 1e-300;
  const Real qab = a + b;
  const Real qap = a + 1.0;
  const Real qam = a - 1.0;
  Real c = 1.0;
  Real d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  Real h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const Real m2 = 2.0 * m;
    Real aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const Real del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

Real incomplete_beta(Real a, Real b, Real x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const Real ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                        a * std::log(x) + b * std::log1p(-x);
  const Real front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

// P(|T| > t) for Student t with nu degrees of freedom.
Real t_two_sided_p(Real t, Real nu) {
  return incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t));
}

Real kolmogorov_p(Real lambda) {
  if (lambda < 1e-3) return 1.0;
  Real sum = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const Real term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += (j % 2 == 1 ? term : -term);
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

std::vector<Real> sorted(const VectorRef& v) {
  std::vector<Real> out(v.begin(), v.end());
  std::sort(out.begin(), out.end());
  return out;
}

// mean ranks (average rank on ties), 1-based
Vector average_ranks(const VectorRef& v, bool* has_ties) {
  const Index n = v.size();
  IndexList order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return v[a] < v[b]; });
  Vector ranks(n);
  *has_ties = false;
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j < n && v[order[static_cast<std::size_t>(j)]] ==
                        v[order[static_cast<std::size_t>(i)]])
      ++j;
    const Real rank = 0.5 * static_cast<Real>(i + j - 1) + 1.0;
    if (j - i > 1) *has_ties = true;
    for (Index r = i; r < j; ++r) ranks[order[static_cast<std::size_t>(r)]] = rank;
    i = j;
  }
  return ranks;
}

}  // namespace

Real marginal_coverage(const VectorRef& lower, const VectorRef& upper,
                       const VectorRef& truths) {
  const Index n = truths.size();
  if (n == 0) throw ArgumentError("marginal_coverage: empty input");
  if (lower.size() != n || upper.size() != n)
    throw ArgumentError("marginal_coverage: length mismatch");
  Index covered = 0;
  for (Index i = 0; i < n; ++i)
    if (lower[i] <= truths[i] && truths[i] <= upper[i]) ++covered;
  return static_cast<Real>(covered) / static_cast<Real>(n);
}

Real marginal_coverage(const std::vector<conformal::PredictionInterval>& intervals,
                       const VectorRef& truths) {
  const auto n = static_cast<Index>(intervals.size());
  Vector lo(n), hi(n);
  for (Index i = 0; i < n; ++i) {
    lo[i] = intervals[static_cast<std::size_t>(i)].lower;
    hi[i] = intervals[static_cast<std::size_t>(i)].upper;
  }
  return marginal_coverage(lo, hi, truths);
}

Real cascade_ratio(const VectorRef& lengths, const VectorRef& u_values, int K) {
  const Index n = lengths.size();
  if (n == 0) throw ArgumentError("cascade_ratio: empty input");
  if (n != u_values.size()) throw ArgumentError("cascade_ratio: length mismatch");
  if (K < 2) throw ArgumentError("cascade_ratio: K must be >= 2");

  const auto u_sorted = sorted(u_values);
  const auto m = static_cast<std::size_t>(
      std::ceil(static_cast<Real>(n) / static_cast<Real>(K) - 1e-9));
  const Real low_cut = u_sorted[m - 1];
  const Real high_cut = u_sorted[static_cast<std::size_t>(n) - m];

  Real low_sum = 0.0, high_sum = 0.0;
  Index low_n = 0, high_n = 0;
  Real member_min = std::numeric_limits<Real>::infinity();
  Real member_max = -std::numeric_limits<Real>::infinity();
  for (Index i = 0; i < n; ++i) {
    const bool in_low = u_values[i] <= low_cut;
    const bool in_high = u_values[i] >= high_cut;
    if (in_low) {
      low_sum += lengths[i];
      ++low_n;
    }
    if (in_high) {
      high_sum += lengths[i];
      ++high_n;
    }
    if (in_low || in_high) {
      member_min = std::min(member_min, lengths[i]);
      member_max = std::max(member_max, lengths[i]);
    }
  }
  if (low_n == 0 || high_n == 0) return kUndefined;
  // fixed-length methods must come out at exactly 1, independent of how the
  // two stratum sums round
  if (member_min == member_max) return 1.0;
  return (high_sum / static_cast<Real>(high_n)) /
         (low_sum / static_cast<Real>(low_n));
}

Real winkler_score(Real lower, Real upper, Real truth, Real alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ArgumentError("winkler_score: alpha must be in (0,1)");
  if (lower > upper) throw ArgumentError("winkler_score: lower > upper");
  Real score = upper - lower;
  if (truth < lower) score += (2.0 / alpha) * (lower - truth);
  if (truth > upper) score += (2.0 / alpha) * (truth - upper);
  return score;
}

Real winkler_score(const conformal::PredictionInterval& interval, Real truth,
                   Real alpha) {
  return winkler_score(interval.lower, interval.upper, truth, alpha);
}

KsResult ks_two_sample(const VectorRef& a, const VectorRef& b) {
  if (a.size() == 0 || b.size() == 0)
    throw ArgumentError("ks_two_sample: empty sample");
  const auto sa = sorted(a);
  const auto sb = sorted(b);
  const Real na = static_cast<Real>(sa.size());
  const Real nb = static_cast<Real>(sb.size());

  // sweep the pooled distinct values tracking the integer numerator
  // |i*nb - j*na|, so D = max/(na*nb) is computed with a single division;
  // once one sample is exhausted the remaining ECDF gaps only shrink
  long long max_num = 0;
  const auto ia = static_cast<long long>(sa.size());
  const auto ib = static_cast<long long>(sb.size());
  std::size_t i = 0, j = 0;
  while (i < sa.size() && j < sb.size()) {
    const Real x = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] == x) ++i;
    while (j < sb.size() && sb[j] == x) ++j;
    max_num = std::max(max_num, std::abs(static_cast<long long>(i) * ib -
                                         static_cast<long long>(j) * ia));
  }
  const Real d = static_cast<Real>(max_num) / (na * nb);

  KsResult out;
  out.d = d;
  const Real n_eff = na * nb / (na + nb);
  out.p = kolmogorov_p(std::sqrt(n_eff) * d);
  return out;
}

SpearmanResult spearman(const VectorRef& x, const VectorRef& y) {
  const Index n = x.size();
  if (n < 3) throw ArgumentError("spearman: need at least 3 points");
  if (n != y.size()) throw ArgumentError("spearman: length mismatch");

  bool ties_x = false, ties_y = false;
  const Vector rx = average_ranks(x, &ties_x);
  const Vector ry = average_ranks(y, &ties_y);

  SpearmanResult out;
  if (!ties_x && !ties_y) {
    Real d2 = 0.0;
    for (Index i = 0; i < n; ++i) {
      const Real d = rx[i] - ry[i];
      d2 += d * d;
    }
    const Real nn = static_cast<Real>(n);
    out.rho = 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
  } else {
    const Real mean_rank = (static_cast<Real>(n) + 1.0) / 2.0;
    const Vector cx = rx.array() - mean_rank;
    const Vector cy = ry.array() - mean_rank;
    const Real vx = cx.squaredNorm();
    const Real vy = cy.squaredNorm();
    if (vx == 0.0 || vy == 0.0) return out;  // zero rank variance: undefined
    out.rho = cx.dot(cy) / std::sqrt(vx * vy);
  }

  const Real r = std::clamp(out.rho, -1.0, 1.0);
  if (std::abs(r) == 1.0) {
    out.p = 0.0;
  } else {
    const Real nu = static_cast<Real>(n) - 2.0;
    const Real t = r * std::sqrt(nu / (1.0 - r * r));
    out.p = t_two_sided_p(std::abs(t), nu);
  }
  return out;
}

ConfidenceInterval bootstrap_ci(Index n,
                                const std::function<Real(const IndexList&)>& statistic,
                                int n_replicates, Real level, std::uint64_t seed,
                                int threads) {
  if (n <= 0) throw ArgumentError("bootstrap_ci: empty sample");
  if (n_replicates < 200) throw ArgumentError("bootstrap_ci: need >= 200 replicates");
  if (!(level > 0.0 && level < 1.0))
    throw ArgumentError("bootstrap_ci: level must be in (0,1)");

  std::vector<Real> stats(static_cast<std::size_t>(n_replicates));
  parallel_for(n_replicates, threads, [&](Index rep) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(rep)));
    std::uniform_int_distribution<Index> pick(0, n - 1);
    IndexList idx(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = pick(rng);
    stats[static_cast<std::size_t>(rep)] = statistic(idx);
  });
  // replicates on which the statistic is undefined drop out of the percentile
  stats.erase(std::remove_if(stats.begin(), stats.end(),
                             [](Real x) { return std::isnan(x); }),
              stats.end());
  if (stats.empty()) return {kUndefined, kUndefined};
  std::sort(stats.begin(), stats.end());

  const Real tail = (1.0 - level) / 2.0;
  const auto m = static_cast<Real>(stats.size());
  auto order_stat = [&](Real q) {
    auto k = static_cast<std::size_t>(std::clamp(std::ceil(q * m - 1e-9), 1.0, m));
    return stats[k - 1];
  };
  return {order_stat(tail), order_stat(1.0 - tail)};
}

ConfidenceInterval bootstrap_ci_mean(const VectorRef& values, int n_replicates,
                                     Real level, std::uint64_t seed, int threads) {
  return bootstrap_ci(
      values.size(),
      [&](const IndexList& idx) {
        Real sum = 0.0;
        for (Index i : idx) sum += values[i];
        return sum / static_cast<Real>(idx.size());
      },
      n_replicates, level, seed, threads);
}

Real youden_threshold(const VectorRef& scores, const std::vector<int>& labels) {
  const Index n = scores.size();
  if (n != static_cast<Index>(labels.size()))
    throw ArgumentError("youden_threshold: length mismatch");
  Index pos_total = 0;
  for (int label : labels) {
    if (label != 0 && label != 1)
      throw ArgumentError("youden_threshold: labels must be 0 or 1");
    pos_total += label;
  }
  const Index neg_total = n - pos_total;
  if (pos_total == 0 || neg_total == 0)
    throw ArgumentError("youden_threshold: both classes must be present");

  IndexList order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(),
            [&](Index a, Index b) { return scores[a] < scores[b]; });

  // sweep cut positions between distinct scores; below the cut counts as
  // predicted negative
  Real best_j = -2.0;
  Real best_threshold = 0.0;
  Index pos_below = 0, neg_below = 0;
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j < n && scores[order[static_cast<std::size_t>(j)]] ==
                        scores[order[static_cast<std::size_t>(i)]])
      ++j;
    for (Index r = i; r < j; ++r) {
      if (labels[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] == 1)
        ++pos_below;
      else
        ++neg_below;
    }
    if (j == n) break;
    const Real sensitivity =
        static_cast<Real>(pos_total - pos_below) / static_cast<Real>(pos_total);
    const Real specificity =
        static_cast<Real>(neg_below) / static_cast<Real>(neg_total);
    const Real youden_j = sensitivity + specificity - 1.0;
    if (youden_j > best_j) {
      best_j = youden_j;
      best_threshold = 0.5 * (scores[order[static_cast<std::size_t>(j - 1)]] +
                              scores[order[static_cast<std::size_t>(j)]]);
    }
    i = j;
  }
  if (best_j < -1.0)
    throw ArgumentError("youden_threshold: need at least two distinct scores");
  return best_threshold;
}

std::vector<StratumRow> stratified_rows(
    const std::vector<conformal::PredictionInterval>& intervals,
    const VectorRef& truths, const VectorRef& u_values, int K) {
  const auto n = static_cast<Index>(intervals.size());
  if (truths.size() != n || u_values.size() != n)
    throw ArgumentError("stratified_rows: length mismatch");
  if (K < 2) throw ArgumentError("stratified_rows: K must be >= 2");

  IndexList order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    return u_values[a] != u_values[b] ? u_values[a] < u_values[b] : a < b;
  });

  std::vector<StratumRow> rows;
  rows.reserve(static_cast<std::size_t>(K));
  char label[32];
  for (int r = 0; r < K; ++r) {
    const auto begin = static_cast<Index>((static_cast<long long>(r) * n) / K);
    const auto end = static_cast<Index>((static_cast<long long>(r + 1) * n) / K);
    StratumRow row;
    std::snprintf(label, sizeof(label), "u_q%.2f-%.2f",
                  static_cast<Real>(r) / K, static_cast<Real>(r + 1) / K);
    row.label = label;
    row.count = end - begin;
    if (row.count > 0) {
      Index covered = 0;
      Real length_sum = 0.0;
      for (Index pos = begin; pos < end; ++pos) {
        const auto& iv = intervals[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])];
        const Real y = truths[order[static_cast<std::size_t>(pos)]];
        if (iv.lower <= y && y <= iv.upper) ++covered;
        length_sum += iv.length;
      }
      row.coverage = static_cast<Real>(covered) / static_cast<Real>(row.count);
      row.mean_length = length_sum / static_cast<Real>(row.count);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace cascade::metrics
