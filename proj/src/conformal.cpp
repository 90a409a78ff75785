#include "cascade/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cascade/errors.hpp"
#include "cascade/random.hpp"

namespace cascade::conformal {

namespace {

constexpr Real kInf = std::numeric_limits<Real>::infinity();

Real kth_smallest(std::vector<Real> v, std::size_t k) {  // 1-indexed
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k - 1), v.end());
  return v[k - 1];
}

void check_alpha(Real alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ArgumentError("alpha must be in (0,1)");
}

PredictionInterval symmetric_interval(Real f_hat, Real radius, std::string method) {
  PredictionInterval out;
  out.center = f_hat;
  out.lower = f_hat - radius;
  out.upper = f_hat + radius;
  // 2*radius rather than upper-lower: equal radii must give bitwise-equal
  // lengths regardless of the center, so fixed-length methods have a cascade
  // ratio of exactly 1 and scaled lengths order exactly like sigma
  out.length = 2.0 * radius;
  out.method = std::move(method);
  return out;
}

}  // namespace

Real conformal_quantile(const VectorRef& scores, Real alpha) {
  check_alpha(alpha);
  const auto n = static_cast<std::size_t>(scores.size());
  if (n == 0) throw ArgumentError("conformal_quantile: empty scores");
  // small slack keeps exact-integer ranks exact under float rounding
  const Real rank = (static_cast<Real>(n) + 1.0) * (1.0 - alpha);
  const auto k = static_cast<std::size_t>(std::max(1.0, std::ceil(rank - 1e-9)));
  if (k > n) return kInf;
  return kth_smallest({scores.begin(), scores.end()}, k);
}

Real sigma(Real u, const ScalingConfig& cfg) {
  if (u < 0.0) throw ArgumentError("sigma: u must be >= 0");
  if (cfg.beta < 0.0 || !(cfg.u_bar > 0.0) ||
      !(cfg.sigma_floor > 0.0 && cfg.sigma_floor <= 1.0))
    throw ArgumentError("sigma: invalid scaling config");
  return std::max(cfg.sigma_floor, 1.0 + cfg.beta * (u / cfg.u_bar - 1.0));
}

PredictionInterval naive_interval(const VectorRef& train_residuals, Real alpha,
                                  Real f_hat_new) {
  check_alpha(alpha);
  const auto n = static_cast<std::size_t>(train_residuals.size());
  if (n == 0) throw ArgumentError("naive_interval: empty residuals");
  const auto k = static_cast<std::size_t>(
      std::max(1.0, std::ceil(static_cast<Real>(n) * (1.0 - alpha) - 1e-9)));
  const Real q = kth_smallest({train_residuals.begin(), train_residuals.end()}, k);
  auto out = symmetric_interval(f_hat_new, q, "naive");
  return out;
}

PredictionInterval split_conformal(const VectorRef& cal_residuals, Real alpha,
                                   Real f_hat_new) {
  const Real q = conformal_quantile(cal_residuals, alpha);
  return symmetric_interval(f_hat_new, q, "split");
}

// --- CV+ ----------------------------------------------------------------

CvPlusModel cv_plus_fit(const MatrixRef& features, const VectorRef& targets,
                        const learners::RegressorFactory& factory, int k_folds,
                        Real alpha, std::uint64_t seed) {
  check_alpha(alpha);
  const Index n = features.rows();
  if (n != targets.size()) throw ArgumentError("cv_plus: size mismatch");
  if (k_folds < 2) throw ConfigError("cv_plus: need at least 2 folds");
  if (n / k_folds < 2)
    throw ConfigError("cv_plus: folds would hold fewer than 2 points");

  IndexList order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  CvPlusModel model;
  model.alpha = alpha;
  model.fold_of_point.assign(static_cast<std::size_t>(n), 0);
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    model.fold_of_point[static_cast<std::size_t>(order[pos])] =
        static_cast<Index>(pos % static_cast<std::size_t>(k_folds));

  model.fold_models.resize(static_cast<std::size_t>(k_folds));
  for (int k = 0; k < k_folds; ++k) {
    IndexList keep;
    for (Index i = 0; i < n; ++i)
      if (model.fold_of_point[static_cast<std::size_t>(i)] != k) keep.push_back(i);
    Matrix Xk(static_cast<Index>(keep.size()), features.cols());
    Vector yk(static_cast<Index>(keep.size()));
    for (std::size_t r = 0; r < keep.size(); ++r) {
      Xk.row(static_cast<Index>(r)) = features.row(keep[r]);
      yk[static_cast<Index>(r)] = targets[keep[r]];
    }
    model.fold_models[static_cast<std::size_t>(k)] = factory(Xk, yk);
  }

  model.loo_residuals.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto& m = *model.fold_models[static_cast<std::size_t>(
        model.fold_of_point[static_cast<std::size_t>(i)])];
    model.loo_residuals[i] = std::abs(targets[i] - m.predict(features.row(i).transpose()));
  }
  return model;
}

namespace {

// Lower/upper jackknife+-style quantiles of {center_i -/+ R_i}. Order
// statistic ranks floor((n+1)alpha) and ceil((n+1)(1-alpha)) are clamped into
// [1, n], so a tiny calibration set yields the extremes of the V sets rather
// than infinite bounds.
PredictionInterval plus_interval(const std::vector<Real>& centers,
                                 const VectorRef& residuals, Real alpha,
                                 std::string method) {
  const std::size_t n = centers.size();
  std::vector<Real> lo(n), hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = centers[i] - residuals[static_cast<Index>(i)];
    hi[i] = centers[i] + residuals[static_cast<Index>(i)];
  }
  const Real nn = static_cast<Real>(n) + 1.0;
  const auto k_lo = static_cast<std::size_t>(
      std::clamp(std::floor(nn * alpha + 1e-9), 1.0, static_cast<Real>(n)));
  const auto k_hi = static_cast<std::size_t>(
      std::clamp(std::ceil(nn * (1.0 - alpha) - 1e-9), 1.0, static_cast<Real>(n)));

  PredictionInterval out;
  out.lower = kth_smallest(lo, k_lo);
  out.upper = kth_smallest(hi, k_hi);
  out.center =
      std::accumulate(centers.begin(), centers.end(), 0.0) / static_cast<Real>(n);
  out.length = out.upper - out.lower;
  out.method = std::move(method);
  return out;
}

}  // namespace

PredictionInterval cv_plus_predict(const CvPlusModel& model, const VectorRef& x_new) {
  const std::size_t n = model.fold_of_point.size();
  std::vector<Real> fold_pred(model.fold_models.size());
  for (std::size_t k = 0; k < model.fold_models.size(); ++k)
    fold_pred[k] = model.fold_models[k]->predict(x_new);
  std::vector<Real> centers(n);
  for (std::size_t i = 0; i < n; ++i)
    centers[i] = fold_pred[static_cast<std::size_t>(model.fold_of_point[i])];
  return plus_interval(centers, model.loo_residuals, model.alpha, "cv_plus");
}

PredictionInterval cv_plus(const MatrixRef& features, const VectorRef& targets,
                           const learners::RegressorFactory& factory, int k_folds,
                           Real alpha, const VectorRef& x_new, std::uint64_t seed) {
  return cv_plus_predict(cv_plus_fit(features, targets, factory, k_folds, alpha, seed),
                         x_new);
}

// --- J+aB ---------------------------------------------------------------

std::vector<IndexList> bootstrap_resamples(Index n, int n_bootstrap,
                                           std::uint64_t seed) {
  std::vector<IndexList> resamples(static_cast<std::size_t>(n_bootstrap));
  for (int b = 0; b < n_bootstrap; ++b) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    std::uniform_int_distribution<Index> pick(0, n - 1);
    auto& sample = resamples[static_cast<std::size_t>(b)];
    sample.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) sample[static_cast<std::size_t>(i)] = pick(rng);
  }
  return resamples;
}

JackknifeAbModel jackknife_plus_ab_fit_with_resamples(
    const MatrixRef& features, const VectorRef& targets,
    const learners::RegressorFactory& factory,
    const std::vector<IndexList>& resamples, Real alpha) {
  check_alpha(alpha);
  const Index n = features.rows();
  if (n != targets.size()) throw ArgumentError("jackknife_plus_ab: size mismatch");
  if (resamples.empty()) throw ConfigError("jackknife_plus_ab: no resamples");

  JackknifeAbModel model;
  model.alpha = alpha;
  const int B = static_cast<int>(resamples.size());
  std::vector<std::vector<bool>> in_sample(
      static_cast<std::size_t>(B), std::vector<bool>(static_cast<std::size_t>(n), false));
  model.models.resize(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    const auto& sample = resamples[static_cast<std::size_t>(b)];
    Matrix Xb(static_cast<Index>(sample.size()), features.cols());
    Vector yb(static_cast<Index>(sample.size()));
    for (std::size_t r = 0; r < sample.size(); ++r) {
      Xb.row(static_cast<Index>(r)) = features.row(sample[r]);
      yb[static_cast<Index>(r)] = targets[sample[r]];
      in_sample[static_cast<std::size_t>(b)][static_cast<std::size_t>(sample[r])] = true;
    }
    model.models[static_cast<std::size_t>(b)] = factory(Xb, yb);
  }

  std::vector<Real> residuals;
  for (Index i = 0; i < n; ++i) {
    std::vector<int> oob;
    for (int b = 0; b < B; ++b)
      if (!in_sample[static_cast<std::size_t>(b)][static_cast<std::size_t>(i)])
        oob.push_back(b);
    if (oob.empty()) {
      ++model.dropped;
      continue;
    }
    Real pred = 0.0;
    for (int b : oob)
      pred += model.models[static_cast<std::size_t>(b)]->predict(
          features.row(i).transpose());
    pred /= static_cast<Real>(oob.size());
    model.usable.push_back(i);
    model.oob_models.push_back(std::move(oob));
    residuals.push_back(std::abs(targets[i] - pred));
  }
  // the 10-point floor applies once 10 usable points were possible at all;
  // deliberately tiny training sets keep whatever calibrates
  if (model.dropped > 0 && model.usable.size() < 10 && n >= 10)
    throw CalibrationError(
        "jackknife_plus_ab: only " + std::to_string(model.usable.size()) +
        " usable out-of-bag points remain (" + std::to_string(model.dropped) +
        " dropped); increase n_bootstrap");
  if (model.usable.empty())
    throw CalibrationError("jackknife_plus_ab: no point is excluded by any resample");

  model.loo_residuals =
      Eigen::Map<const Vector>(residuals.data(), static_cast<Index>(residuals.size()));
  return model;
}

JackknifeAbModel jackknife_plus_ab_fit(const MatrixRef& features,
                                       const VectorRef& targets,
                                       const learners::RegressorFactory& factory,
                                       int n_bootstrap, Real alpha,
                                       std::uint64_t seed) {
  if (n_bootstrap < 1) throw ConfigError("jackknife_plus_ab: n_bootstrap must be >= 1");
  return jackknife_plus_ab_fit_with_resamples(
      features, targets, factory, bootstrap_resamples(features.rows(), n_bootstrap, seed),
      alpha);
}

PredictionInterval jackknife_plus_ab_predict(const JackknifeAbModel& model,
                                             const VectorRef& x_new) {
  std::vector<Real> model_pred(model.models.size());
  for (std::size_t b = 0; b < model.models.size(); ++b)
    model_pred[b] = model.models[b]->predict(x_new);
  std::vector<Real> centers(model.usable.size());
  for (std::size_t i = 0; i < model.usable.size(); ++i) {
    Real pred = 0.0;
    for (int b : model.oob_models[i]) pred += model_pred[static_cast<std::size_t>(b)];
    centers[i] = pred / static_cast<Real>(model.oob_models[i].size());
  }
  return plus_interval(centers, model.loo_residuals, model.alpha, "jab");
}

PredictionInterval jackknife_plus_ab(const MatrixRef& features,
                                     const VectorRef& targets,
                                     const learners::RegressorFactory& factory,
                                     int n_bootstrap, Real alpha,
                                     const VectorRef& x_new, std::uint64_t seed) {
  return jackknife_plus_ab_predict(
      jackknife_plus_ab_fit(features, targets, factory, n_bootstrap, alpha, seed),
      x_new);
}

// --- Mondrian CASCADE ----------------------------------------------------

CalibrationSummary mondrian_calibrate(const VectorRef& cal_residuals,
                                      const VectorRef& cal_u, int k_bins,
                                      Real alpha) {
  check_alpha(alpha);
  const Index n = cal_residuals.size();
  if (n == 0) throw ArgumentError("mondrian: empty calibration set");
  if (n != cal_u.size()) throw ArgumentError("mondrian: residuals/u size mismatch");
  if (k_bins < 2) throw ArgumentError("mondrian: K must be >= 2");
  if (n < k_bins)
    throw StratificationError("mondrian: " + std::to_string(n) +
                              " calibration points cannot fill " +
                              std::to_string(k_bins) + " bins; use a smaller K");

  IndexList order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    return cal_u[a] != cal_u[b] ? cal_u[a] < cal_u[b] : a < b;
  });

  // positions where the sorted u value changes; quantile cuts may only land
  // on these so tied u values always share a stratum
  IndexList boundaries{0};
  for (Index i = 1; i < n; ++i)
    if (cal_u[order[static_cast<std::size_t>(i)]] !=
        cal_u[order[static_cast<std::size_t>(i - 1)]])
      boundaries.push_back(i);
  boundaries.push_back(n);

  // quantile cuts at floor(r*n/K), each moved to the nearest tie boundary;
  // cuts swallowed by a tie group merge the adjacent bins (all-identical u
  // collapses to split CP)
  IndexList cuts{0};
  for (int r = 1; r < k_bins; ++r) {
    const auto c = static_cast<Index>((static_cast<long long>(r) * n) / k_bins);
    const auto it = std::lower_bound(boundaries.begin(), boundaries.end(), c);
    const Index hi = *it;
    const Index lo = it == boundaries.begin() ? *it : *(it - 1);
    const Index pick = (c - lo < hi - c) ? lo : hi;
    if (pick <= cuts.back() || pick >= n) continue;
    cuts.push_back(pick);
  }
  cuts.push_back(n);

  CalibrationSummary summary;
  summary.method = "mondrian";
  summary.alpha = alpha;
  summary.residuals = cal_residuals;
  summary.sigmas = Vector::Ones(n);
  summary.scaled_scores = cal_residuals;

  const auto m = cuts.size() - 1;
  summary.bin_quantiles.resize(static_cast<Index>(m));
  summary.bin_edges.resize(static_cast<Index>(m) - 1);
  summary.bin_counts.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    const Index begin = cuts[j];
    const Index end = cuts[j + 1];
    Vector pool(end - begin);
    for (Index r = begin; r < end; ++r)
      pool[r - begin] = cal_residuals[order[static_cast<std::size_t>(r)]];
    summary.bin_quantiles[static_cast<Index>(j)] = conformal_quantile(pool, alpha);
    summary.bin_counts[j] = end - begin;
    if (j > 0)
      summary.bin_edges[static_cast<Index>(j) - 1] =
          cal_u[order[static_cast<std::size_t>(begin)]];
  }
  return summary;
}

Index mondrian_bin_of(const CalibrationSummary& summary, Real u) {
  // number of edges <= u; clamps below the first and above the last edge
  return std::upper_bound(summary.bin_edges.begin(), summary.bin_edges.end(), u) -
         summary.bin_edges.begin();
}

PredictionInterval mondrian_predict(const CalibrationSummary& summary, Real test_u,
                                    Real f_hat_new) {
  const Index bin = mondrian_bin_of(summary, test_u);
  auto out = symmetric_interval(f_hat_new, summary.bin_quantiles[bin], "mondrian");
  out.u_va = test_u;
  return out;
}

PredictionInterval mondrian_cascade(const VectorRef& cal_residuals,
                                    const VectorRef& cal_u, Real test_u,
                                    Real f_hat_new, int k_bins, Real alpha) {
  return mondrian_predict(mondrian_calibrate(cal_residuals, cal_u, k_bins, alpha),
                          test_u, f_hat_new);
}

// --- Continuous CASCADE --------------------------------------------------

CalibrationSummary continuous_cascade_calibrate(const VectorRef& cal_residuals,
                                                const VectorRef& cal_u, Real beta,
                                                Real alpha, Real sigma_floor) {
  check_alpha(alpha);
  const Index n = cal_residuals.size();
  if (n == 0) throw ArgumentError("continuous_cascade: empty calibration set");
  if (n != cal_u.size())
    throw ArgumentError("continuous_cascade: residuals/u size mismatch");
  if (beta < 0.0) throw ArgumentError("continuous_cascade: beta must be >= 0");
  if (!(sigma_floor > 0.0 && sigma_floor <= 1.0))
    throw ArgumentError("continuous_cascade: sigma_floor must be in (0,1]");

  CalibrationSummary summary;
  summary.method = "cascade";
  summary.alpha = alpha;
  summary.residuals = cal_residuals;

  const Real u_bar = cal_u.mean();
  if (!(u_bar > 0.0)) {
    // no epistemic signal: every u is zero, so fall back to sigma = 1
    summary.warning =
        "mean calibration u_VA is zero; proceeding without uncertainty scaling";
    summary.scaling = {0.0, 1.0, sigma_floor};
  } else {
    summary.scaling = {beta, u_bar, sigma_floor};
  }

  summary.sigmas.resize(n);
  for (Index i = 0; i < n; ++i) summary.sigmas[i] = sigma(cal_u[i], summary.scaling);
  summary.scaled_scores = (cal_residuals.array() / summary.sigmas.array()).matrix();
  summary.quantile = conformal_quantile(summary.scaled_scores, alpha);
  return summary;
}

PredictionInterval continuous_cascade_predict(const CalibrationSummary& summary,
                                              Real u_new, Real f_hat_new) {
  const Real s = sigma(u_new, summary.scaling);
  auto out = symmetric_interval(f_hat_new, summary.quantile * s, "cascade");
  out.sigma = s;
  out.u_va = u_new;
  return out;
}

}  // namespace cascade::conformal
