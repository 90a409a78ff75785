#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cascade/conformal.hpp"
#include "cascade/types.hpp"

namespace cascade::metrics {

// Undefined-sentinel for metrics without a value (empty stratum, zero rank
// variance).
inline constexpr Real kUndefined = std::numeric_limits<Real>::quiet_NaN();
inline bool is_defined(Real x) { return !std::isnan(x); }

// Fraction of truths inside the closed interval [lower, upper].
Real marginal_coverage(const VectorRef& lower, const VectorRef& upper,
                       const VectorRef& truths);
Real marginal_coverage(const std::vector<conformal::PredictionInterval>& intervals,
                       const VectorRef& truths);

// Mean interval length in the top 1/K uncertainty fraction over the mean in
// the bottom 1/K fraction. Stratum thresholds are the ceil(n/K)-th smallest
// and ceil(n/K)-th largest u; membership is by value, so ties can enlarge a
// stratum.
Real cascade_ratio(const VectorRef& lengths, const VectorRef& u_values, int K);

// Interval score: length plus 2/alpha times the distance by which the truth
// misses the closed interval.
Real winkler_score(Real lower, Real upper, Real truth, Real alpha);
Real winkler_score(const conformal::PredictionInterval& interval, Real truth,
                   Real alpha);

struct KsResult {
  Real d = 0.0;
  Real p = 1.0;
};

// Two-sample Kolmogorov-Smirnov; p from the asymptotic Kolmogorov
// distribution at effective size n_a*n_b/(n_a+n_b).
KsResult ks_two_sample(const VectorRef& a, const VectorRef& b);

struct SpearmanResult {
  Real rho = kUndefined;
  Real p = kUndefined;
};

// Rank correlation with mean ranks on ties; when neither input has ties the
// exact 1 - 6*sum(d^2)/(n(n^2-1)) form is used so perfect monotone data gives
// exactly +/-1. p-value via the t approximation with n-2 degrees of freedom.
SpearmanResult spearman(const VectorRef& x, const VectorRef& y);

struct ConfidenceInterval {
  Real lo = 0.0;
  Real hi = 0.0;
};

// Percentile bootstrap for the mean of `values`.
ConfidenceInterval bootstrap_ci_mean(const VectorRef& values, int n_replicates,
                                     Real level, std::uint64_t seed,
                                     int threads = 1);
// Generic percentile bootstrap: `statistic` is evaluated on resampled index
// multisets, so joint structures (e.g. (length, u) pairs for the cascade
// ratio) resample together.
ConfidenceInterval bootstrap_ci(Index n,
                                const std::function<Real(const IndexList&)>& statistic,
                                int n_replicates, Real level, std::uint64_t seed,
                                int threads = 1);

// Threshold maximizing sensitivity + specificity - 1 over midpoints between
// consecutive distinct scores; ties broken toward the lower threshold.
// Predicted positive means score strictly above the threshold.
Real youden_threshold(const VectorRef& scores, const std::vector<int>& labels);

struct StratumRow {
  std::string label;
  Real coverage = kUndefined;
  Real mean_length = kUndefined;
  Index count = 0;
};

// Per-stratum coverage and mean length over K uncertainty-rank strata
// (low to high); empty strata yield undefined-sentinel rows.
std::vector<StratumRow> stratified_rows(
    const std::vector<conformal::PredictionInterval>& intervals,
    const VectorRef& truths, const VectorRef& u_values, int K);

}  // namespace cascade::metrics
