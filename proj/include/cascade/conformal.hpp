#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "cascade/learners.hpp"
#include "cascade/types.hpp"

namespace cascade::conformal {

// Finite-sample conformal quantile: the ceil((n+1)(1-alpha))-th smallest
// score, +inf when that index exceeds n.
Real conformal_quantile(const VectorRef& scores, Real alpha);

// Mean-centered uncertainty scaling sigma(u) = max(floor, 1 + beta(u/u_bar - 1)).
struct ScalingConfig {
  Real beta = 0.7;       // sensitivity factor, >= 0
  Real u_bar = 1.0;      // mean calibration u_VA, > 0
  Real sigma_floor = 1e-3;
};

Real sigma(Real u, const ScalingConfig& cfg);

struct PredictionInterval {
  std::string id;
  Real center = 0.0;
  Real lower = 0.0;
  Real upper = 0.0;
  Real length = 0.0;
  Real sigma = 1.0;
  Real u_va = std::numeric_limits<Real>::quiet_NaN();
  std::string method;
};

// Calibration state of one fitted method. For unscaled methods sigmas are all
// 1 and scaled_scores equal the residuals; Mondrian stores per-bin quantiles
// and the bin edges instead of the single global quantile.
struct CalibrationSummary {
  std::string method;
  Vector residuals;
  Vector sigmas;
  Vector scaled_scores;
  Real quantile = std::numeric_limits<Real>::quiet_NaN();
  Vector bin_quantiles;
  Vector bin_edges;  // lower edges of bins 1..m-1
  std::vector<Index> bin_counts;
  Real alpha = 0.2;
  ScalingConfig scaling;
  std::string warning;
};

// --- baselines ---------------------------------------------------------

// Plain (1-alpha) empirical quantile of training residuals, no finite-sample
// correction: the ceil(n(1-alpha))-th smallest (lower order statistic,
// no interpolation).
PredictionInterval naive_interval(const VectorRef& train_residuals, Real alpha,
                                  Real f_hat_new);

PredictionInterval split_conformal(const VectorRef& cal_residuals, Real alpha,
                                   Real f_hat_new);

struct CvPlusModel {
  std::vector<std::unique_ptr<learners::Regressor>> fold_models;
  IndexList fold_of_point;  // fold index per training point
  Vector loo_residuals;     // |y_i - mu_{-k(i)}(x_i)|
  Real alpha = 0.2;
};

CvPlusModel cv_plus_fit(const MatrixRef& features, const VectorRef& targets,
                        const learners::RegressorFactory& factory, int k_folds,
                        Real alpha, std::uint64_t seed);
PredictionInterval cv_plus_predict(const CvPlusModel& model, const VectorRef& x_new);
PredictionInterval cv_plus(const MatrixRef& features, const VectorRef& targets,
                           const learners::RegressorFactory& factory, int k_folds,
                           Real alpha, const VectorRef& x_new, std::uint64_t seed);

// Bootstrap resamples of size n with replacement; shared with the test oracle
// so an independent re-implementation sees the same inclusion matrix.
std::vector<IndexList> bootstrap_resamples(Index n, int n_bootstrap,
                                           std::uint64_t seed);

struct JackknifeAbModel {
  std::vector<std::unique_ptr<learners::Regressor>> models;
  std::vector<std::vector<int>> oob_models;  // per usable point: models excluding it
  IndexList usable;                          // training points with nonempty OOB set
  Vector loo_residuals;                      // aligned to usable
  Index dropped = 0;
  Real alpha = 0.2;
};

JackknifeAbModel jackknife_plus_ab_fit(const MatrixRef& features,
                                       const VectorRef& targets,
                                       const learners::RegressorFactory& factory,
                                       int n_bootstrap, Real alpha,
                                       std::uint64_t seed);
JackknifeAbModel jackknife_plus_ab_fit_with_resamples(
    const MatrixRef& features, const VectorRef& targets,
    const learners::RegressorFactory& factory,
    const std::vector<IndexList>& resamples, Real alpha);
PredictionInterval jackknife_plus_ab_predict(const JackknifeAbModel& model,
                                             const VectorRef& x_new);
PredictionInterval jackknife_plus_ab(const MatrixRef& features,
                                     const VectorRef& targets,
                                     const learners::RegressorFactory& factory,
                                     int n_bootstrap, Real alpha,
                                     const VectorRef& x_new, std::uint64_t seed);

// --- CASCADE ------------------------------------------------------------

// Stratifies calibration residuals by K-quantiles of the uncertainty score.
// Quantile cuts that fall inside a tied group of u values merge the adjacent
// bins, so identical u values always share a stratum.
CalibrationSummary mondrian_calibrate(const VectorRef& cal_residuals,
                                      const VectorRef& cal_u, int k_bins,
                                      Real alpha);
// Bin assignment by value against the calibration-derived edges; u below or
// above the calibrated range clamps to the first or last bin.
Index mondrian_bin_of(const CalibrationSummary& summary, Real u);
PredictionInterval mondrian_predict(const CalibrationSummary& summary, Real test_u,
                                    Real f_hat_new);
PredictionInterval mondrian_cascade(const VectorRef& cal_residuals,
                                    const VectorRef& cal_u, Real test_u,
                                    Real f_hat_new, int k_bins, Real alpha);

CalibrationSummary continuous_cascade_calibrate(const VectorRef& cal_residuals,
                                                const VectorRef& cal_u, Real beta,
                                                Real alpha,
                                                Real sigma_floor = 1e-3);
PredictionInterval continuous_cascade_predict(const CalibrationSummary& summary,
                                              Real u_new, Real f_hat_new);

}  // namespace cascade::conformal
