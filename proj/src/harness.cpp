#include "cascade/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#include "cascade/errors.hpp"
#include "cascade/parallel.hpp"
#include "cascade/random.hpp"
#include "cascade/venn_abers.hpp"
#include "internal/csv.hpp"

namespace cascade::harness {

using nlohmann::json;

std::string to_string(Method method) {
  switch (method) {
    case Method::Naive: return "naive";
    case Method::Split: return "split";
    case Method::CvPlus: return "cv_plus";
    case Method::JackknifePlusAb: return "jab";
    case Method::Mondrian: return "mondrian";
    case Method::Cascade: return "cascade";
  }
  return "split";
}

Method method_from_string(const std::string& name) {
  if (name == "naive") return Method::Naive;
  if (name == "split") return Method::Split;
  if (name == "cv_plus" || name == "cv+") return Method::CvPlus;
  if (name == "jab" || name == "jackknife_plus_ab" || name == "j+ab")
    return Method::JackknifePlusAb;
  if (name == "mondrian") return Method::Mondrian;
  if (name == "cascade") return Method::Cascade;
  throw ConfigError("unknown method '" + name +
                    "' (expected naive, split, cv_plus, jab, mondrian, cascade)");
}

std::string to_string(EvalFilter filter) {
  return filter == EvalFilter::Truth ? "truth" : "predicted";
}

EvalFilter filter_from_string(const std::string& name) {
  if (name == "truth") return EvalFilter::Truth;
  if (name == "predicted") return EvalFilter::Predicted;
  throw ConfigError("unknown filter '" + name + "' (expected truth or predicted)");
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig config;
  for (int i = 0; i <= 15; ++i)
    config.beta_grid.push_back(static_cast<Real>(i) / 10.0);
  config.alpha_grid = {0.05, 0.1, 0.2, 0.3};
  config.k_grid = {3, 5, 7};
  config.methods = {Method::Naive,           Method::Split,   Method::CvPlus,
                    Method::JackknifePlusAb, Method::Mondrian, Method::Cascade};
  return config;
}

void validate(const ExperimentConfig& config) {
  if (!(config.alpha > 0.0 && config.alpha < 1.0))
    throw ConfigError("alpha must be in (0,1)");
  if (config.beta < 0.0) throw ConfigError("beta must be >= 0");
  for (Real b : config.beta_grid)
    if (b < 0.0) throw ConfigError("beta_grid values must be >= 0");
  for (Real a : config.alpha_grid)
    if (!(a > 0.0 && a < 1.0)) throw ConfigError("alpha_grid values must be in (0,1)");
  for (int k : config.k_grid)
    if (k < 2) throw ConfigError("k_grid values must be >= 2");
  if (config.beta_grid.empty() || config.alpha_grid.empty() || config.k_grid.empty())
    throw ConfigError("ablation grids must be nonempty");
  if (config.mondrian_bins < 2) throw ConfigError("mondrian_bins must be >= 2");
  if (config.strata_bins < 2) throw ConfigError("strata_bins must be >= 2");
  if (config.methods.empty()) throw ConfigError("methods must be nonempty");
  if (config.bootstrap_replicates < 200)
    throw ConfigError("bootstrap_replicates must be >= 200");
  if (config.cv_folds < 2) throw ConfigError("cv_folds must be >= 2");
  if (config.jab_bootstrap < 20) throw ConfigError("jab_bootstrap must be >= 20");
  if (!(config.sigma_floor > 0.0 && config.sigma_floor <= 1.0))
    throw ConfigError("sigma_floor must be in (0,1]");
  if (!(config.cal_fraction > 0.0 && config.cal_fraction < 1.0))
    throw ConfigError("cal_fraction must be in (0,1)");
  if (!(config.test_fraction > 0.0 && config.test_fraction < 1.0))
    throw ConfigError("test_fraction must be in (0,1)");
  if (!(config.cal_fraction + config.test_fraction < 1.0))
    throw ConfigError("cal_fraction + test_fraction must be < 1");
  if (config.threads < 1) throw ConfigError("threads must be >= 1");
  if (config.format != "json" && config.format != "csv")
    throw ConfigError("format must be json or csv");
  if (config.learners.stage1 != "logistic" && config.learners.stage1 != "knn")
    throw ConfigError("learners.stage1 must be logistic or knn");
  if (config.learners.stage2 != "ridge" && config.learners.stage2 != "knn")
    throw ConfigError("learners.stage2 must be ridge or knn");
  if (config.predictions_path.empty()) datagen::validate(config.generator);
}

namespace {

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + key + "' has the wrong type");
  }
}

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& scope) {
  for (const auto& item : j.items())
    if (known.find(item.key()) == known.end())
      throw ConfigError("unknown config field '" + scope + item.key() + "'");
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig config = default_experiment_config();
  reject_unknown_keys(
      j,
      {"generator", "predictions_path", "learners", "alpha", "beta", "beta_grid",
       "alpha_grid", "k_grid", "mondrian_bins", "strata_bins", "methods", "filter",
       "bootstrap_replicates", "cv_folds", "jab_bootstrap", "sigma_floor",
       "cal_fraction", "test_fraction", "seed", "threads", "out_dir", "format"},
      "");

  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    reject_unknown_keys(g,
                        {"n_subjects", "n_features", "decision_weights",
                         "decision_intercept", "effect_weights", "effect_intercept",
                         "noise_base", "noise_ambiguity_gain"},
                        "generator.");
    auto& gen = config.generator;
    gen.n_subjects = get_or<Index>(g, "n_subjects", gen.n_subjects);
    gen.n_features = get_or<Index>(g, "n_features", gen.n_features);
    if (g.contains("decision_weights")) {
      const auto w = g.at("decision_weights").get<std::vector<Real>>();
      gen.decision_weights = Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size()));
    }
    gen.decision_intercept = get_or<Real>(g, "decision_intercept", gen.decision_intercept);
    if (g.contains("effect_weights")) {
      const auto w = g.at("effect_weights").get<std::vector<Real>>();
      gen.effect_weights = Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size()));
    }
    gen.effect_intercept = get_or<Real>(g, "effect_intercept", gen.effect_intercept);
    gen.noise_base = get_or<Real>(g, "noise_base", gen.noise_base);
    gen.noise_ambiguity_gain =
        get_or<Real>(g, "noise_ambiguity_gain", gen.noise_ambiguity_gain);
    // resize built-in default weights if only the dimension changed
    if (!g.contains("decision_weights") &&
        gen.decision_weights.size() != gen.n_features)
      throw ConfigError("generator.decision_weights must be given for n_features != 5");
    if (!g.contains("effect_weights") && gen.effect_weights.size() != gen.n_features)
      throw ConfigError("generator.effect_weights must be given for n_features != 5");
  }
  if (j.contains("learners")) {
    const auto& l = j.at("learners");
    reject_unknown_keys(l,
                        {"stage1", "stage2", "ridge_penalty", "knn_k",
                         "logistic_learning_rate", "logistic_max_iters",
                         "logistic_tolerance", "standardize"},
                        "learners.");
    auto& lc = config.learners;
    lc.stage1 = get_or<std::string>(l, "stage1", lc.stage1);
    lc.stage2 = get_or<std::string>(l, "stage2", lc.stage2);
    lc.ridge_penalty = get_or<Real>(l, "ridge_penalty", lc.ridge_penalty);
    lc.knn_k = get_or<Index>(l, "knn_k", lc.knn_k);
    lc.logistic_learning_rate =
        get_or<Real>(l, "logistic_learning_rate", lc.logistic_learning_rate);
    lc.logistic_max_iters = get_or<int>(l, "logistic_max_iters", lc.logistic_max_iters);
    lc.logistic_tolerance = get_or<Real>(l, "logistic_tolerance", lc.logistic_tolerance);
    lc.standardize = get_or<bool>(l, "standardize", lc.standardize);
  }
  config.predictions_path = get_or<std::string>(j, "predictions_path", "");
  config.alpha = get_or<Real>(j, "alpha", config.alpha);
  config.beta = get_or<Real>(j, "beta", config.beta);
  config.beta_grid = get_or<std::vector<Real>>(j, "beta_grid", config.beta_grid);
  config.alpha_grid = get_or<std::vector<Real>>(j, "alpha_grid", config.alpha_grid);
  config.k_grid = get_or<std::vector<int>>(j, "k_grid", config.k_grid);
  config.mondrian_bins = get_or<int>(j, "mondrian_bins", config.mondrian_bins);
  config.strata_bins = get_or<int>(j, "strata_bins", config.strata_bins);
  if (j.contains("methods")) {
    config.methods.clear();
    for (const auto& name : j.at("methods"))
      config.methods.push_back(method_from_string(name.get<std::string>()));
  }
  if (j.contains("filter"))
    config.filter = filter_from_string(j.at("filter").get<std::string>());
  config.bootstrap_replicates =
      get_or<int>(j, "bootstrap_replicates", config.bootstrap_replicates);
  config.cv_folds = get_or<int>(j, "cv_folds", config.cv_folds);
  config.jab_bootstrap = get_or<int>(j, "jab_bootstrap", config.jab_bootstrap);
  config.sigma_floor = get_or<Real>(j, "sigma_floor", config.sigma_floor);
  config.cal_fraction = get_or<Real>(j, "cal_fraction", config.cal_fraction);
  config.test_fraction = get_or<Real>(j, "test_fraction", config.test_fraction);
  config.seed = get_or<std::uint64_t>(j, "seed", config.seed);
  config.threads = get_or<int>(j, "threads", config.threads);
  config.out_dir = get_or<std::string>(j, "out_dir", config.out_dir.string());
  config.format = get_or<std::string>(j, "format", config.format);
  validate(config);
  return config;
}

ExperimentConfig config_from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// --- prepared pipeline ----------------------------------------------------

namespace {

Vector gather(const std::vector<SubjectRecord>& subjects, const IndexList& idx,
              Real SubjectRecord::*field) {
  Vector out(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i)
    out[static_cast<Index>(i)] = subjects[static_cast<std::size_t>(idx[i])].*field;
  return out;
}

std::uint64_t fnv1a_bytes(std::uint64_t hash, const void* data, std::size_t len) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

}  // namespace

Vector PreparedPipeline::cal_residuals() const {
  Vector out(static_cast<Index>(cal_eval.size()));
  for (std::size_t i = 0; i < cal_eval.size(); ++i) {
    const auto& rec = subjects[static_cast<std::size_t>(cal_eval[i])];
    out[static_cast<Index>(i)] = std::abs(rec.y - rec.reg_pred);
  }
  return out;
}

Vector PreparedPipeline::cal_u() const {
  return gather(subjects, cal_eval, &SubjectRecord::u);
}

Vector PreparedPipeline::test_u() const {
  return gather(subjects, test_eval, &SubjectRecord::u);
}

Vector PreparedPipeline::test_truths() const {
  return gather(subjects, test_eval, &SubjectRecord::y);
}

Vector PreparedPipeline::test_predictions() const {
  return gather(subjects, test_eval, &SubjectRecord::reg_pred);
}

std::uint64_t PreparedPipeline::fingerprint() const {
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  for (const auto& rec : subjects) {
    hash = fnv1a_bytes(hash, &rec.reg_pred, sizeof(rec.reg_pred));
    hash = fnv1a_bytes(hash, &rec.clf_score, sizeof(rec.clf_score));
    hash = fnv1a_bytes(hash, &rec.u, sizeof(rec.u));
  }
  return hash;
}

namespace {

learners::RegressorFactory make_stage2_factory(const LearnerConfig& lc) {
  if (lc.stage2 == "ridge") {
    const Real penalty = lc.ridge_penalty;
    return [penalty](const MatrixRef& X, const VectorRef& y) {
      return std::make_unique<learners::RidgeRegressor>(learners::fit_ridge(X, y, penalty));
    };
  }
  const Index k = lc.knn_k;
  return [k](const MatrixRef& X, const VectorRef& y) {
    return std::make_unique<learners::KnnModel>(
        learners::fit_knn(X, y, std::min<Index>(k, X.rows())));
  };
}

void compute_venn_abers(PreparedPipeline& pipe, const IndexList& cal_rows,
                        const IndexList& score_rows) {
  Vector cal_scores(static_cast<Index>(cal_rows.size()));
  std::vector<int> cal_labels(cal_rows.size());
  for (std::size_t i = 0; i < cal_rows.size(); ++i) {
    const auto& rec = pipe.subjects[static_cast<std::size_t>(cal_rows[i])];
    cal_scores[static_cast<Index>(i)] = rec.clf_score;
    cal_labels[i] = rec.change_label;
  }
  const venn_abers::VennAbersCalibrator calibrator(cal_scores, cal_labels);
  parallel_for(static_cast<Index>(score_rows.size()), pipe.threads, [&](Index i) {
    auto& rec = pipe.subjects[static_cast<std::size_t>(score_rows[static_cast<std::size_t>(i)])];
    const auto out = calibrator.predict(rec.clf_score);
    rec.p0 = out.p0;
    rec.p1 = out.p1;
    rec.u = out.u;
  });
}

}  // namespace

PreparedPipeline prepare(const ExperimentConfig& config) {
  validate(config);
  PreparedPipeline pipe;
  pipe.base_seed = config.seed;
  pipe.threads = config.threads;

  IndexList train_rows, cal_rows, test_rows;

  if (!config.predictions_path.empty()) {
    // ingestion mode: predictions come from the file, learners are not refit
    const auto table = learners::load_predictions(config.predictions_path);
    pipe.subjects.reserve(table.rows.size());
    for (const auto& row : table.rows) {
      SubjectRecord rec;
      rec.id = row.id;
      rec.split = row.split;
      rec.y = row.y;
      rec.change_label = row.change_label;
      rec.reg_pred = row.reg_pred;
      rec.clf_score = row.clf_score;
      pipe.subjects.push_back(std::move(rec));
    }
    pipe.can_refit = false;
  } else {
    auto gen = config.generator;
    gen.seed = derive_seed(config.seed, 1);
    const auto cohort = datagen::generate_cohort(gen);
    const auto split = datagen::split_cohort(cohort, config.cal_fraction,
                                             config.test_fraction,
                                             derive_seed(config.seed, 2));

    Matrix features = cohort.features;
    if (config.learners.standardize) {
      // means and sds from the training split only
      Vector mean = Vector::Zero(features.cols());
      for (Index i : split.train) mean += features.row(i).transpose();
      mean /= static_cast<Real>(split.train.size());
      Vector sd = Vector::Zero(features.cols());
      for (Index i : split.train)
        sd += (features.row(i).transpose() - mean).array().square().matrix();
      sd = (sd / static_cast<Real>(split.train.size())).array().sqrt();
      for (Index j = 0; j < sd.size(); ++j)
        if (sd[j] == 0.0) sd[j] = 1.0;
      features = (features.rowwise() - mean.transpose()).array().rowwise() /
                 sd.transpose().array();
    }

    // stage 1 on all training rows
    Matrix X1(static_cast<Index>(split.train.size()), features.cols());
    Vector y1(static_cast<Index>(split.train.size()));
    for (std::size_t r = 0; r < split.train.size(); ++r) {
      X1.row(static_cast<Index>(r)) = features.row(split.train[r]);
      y1[static_cast<Index>(r)] =
          cohort.change_label[static_cast<std::size_t>(split.train[r])];
    }
    Vector clf_scores(cohort.size());
    if (config.learners.stage1 == "logistic") {
      const auto scorer = learners::fit_logistic(
          X1, y1, config.learners.logistic_learning_rate,
          config.learners.logistic_max_iters, config.learners.logistic_tolerance);
      clf_scores = scorer.score_rows(features);
    } else {
      const auto scorer = learners::fit_knn(
          X1, y1, std::min<Index>(config.learners.knn_k, X1.rows()));
      clf_scores = scorer.predict_rows(features);
    }

    // stage 2 on training rows with an actual change
    IndexList fit_rows;
    for (Index i : split.train)
      if (cohort.target[i] != 0.0) fit_rows.push_back(i);
    if (fit_rows.size() < 2)
      throw ConfigError("stage-2 training set has fewer than 2 changed rows");
    Matrix X2(static_cast<Index>(fit_rows.size()), features.cols());
    Vector y2(static_cast<Index>(fit_rows.size()));
    for (std::size_t r = 0; r < fit_rows.size(); ++r) {
      X2.row(static_cast<Index>(r)) = features.row(fit_rows[r]);
      y2[static_cast<Index>(r)] = cohort.target[fit_rows[r]];
    }
    pipe.stage2_factory = make_stage2_factory(config.learners);
    const auto regressor = pipe.stage2_factory(X2, y2);
    const Vector reg_preds = regressor->predict_rows(features);

    pipe.subjects.resize(static_cast<std::size_t>(cohort.size()));
    auto tag_rows = [&](const IndexList& rows, learners::Split tag) {
      for (Index i : rows)
        pipe.subjects[static_cast<std::size_t>(i)].split = tag;
    };
    tag_rows(split.train, learners::Split::Train);
    tag_rows(split.cal, learners::Split::Cal);
    tag_rows(split.test, learners::Split::Test);
    for (Index i = 0; i < cohort.size(); ++i) {
      auto& rec = pipe.subjects[static_cast<std::size_t>(i)];
      rec.id = std::to_string(cohort.ids[static_cast<std::size_t>(i)]);
      rec.y = cohort.target[i];
      rec.change_label = cohort.change_label[static_cast<std::size_t>(i)];
      rec.reg_pred = reg_preds[i];
      rec.clf_score = clf_scores[i];
    }

    pipe.train_features = std::move(X2);
    pipe.train_targets = std::move(y2);
    pipe.can_refit = true;

    // keep test features for the refit methods
    pipe.test_eval_features.resize(static_cast<Index>(split.test.size()),
                                   features.cols());
    for (std::size_t r = 0; r < split.test.size(); ++r)
      pipe.test_eval_features.row(static_cast<Index>(r)) = features.row(split.test[r]);
  }

  for (std::size_t i = 0; i < pipe.subjects.size(); ++i) {
    switch (pipe.subjects[i].split) {
      case learners::Split::Train: train_rows.push_back(static_cast<Index>(i)); break;
      case learners::Split::Cal: cal_rows.push_back(static_cast<Index>(i)); break;
      case learners::Split::Test: test_rows.push_back(static_cast<Index>(i)); break;
    }
  }
  if (cal_rows.empty() || test_rows.empty())
    throw ConfigError("pipeline needs nonempty cal and test splits");

  // Venn-Abers uncertainty for calibration and test rows
  IndexList score_rows = cal_rows;
  score_rows.insert(score_rows.end(), test_rows.begin(), test_rows.end());
  compute_venn_abers(pipe, cal_rows, score_rows);

  // evaluation filter
  IndexList test_keep_positions;  // positions within test_rows, for features
  if (config.filter == EvalFilter::Predicted) {
    Vector cal_scores(static_cast<Index>(cal_rows.size()));
    std::vector<int> cal_labels(cal_rows.size());
    for (std::size_t i = 0; i < cal_rows.size(); ++i) {
      cal_scores[static_cast<Index>(i)] =
          pipe.subjects[static_cast<std::size_t>(cal_rows[i])].clf_score;
      cal_labels[i] = pipe.subjects[static_cast<std::size_t>(cal_rows[i])].change_label;
    }
    // threshold from the calibration split only (no test leakage)
    pipe.youden_cut = metrics::youden_threshold(cal_scores, cal_labels);
    for (Index i : cal_rows)
      if (pipe.subjects[static_cast<std::size_t>(i)].clf_score > pipe.youden_cut)
        pipe.cal_eval.push_back(i);
    for (std::size_t r = 0; r < test_rows.size(); ++r)
      if (pipe.subjects[static_cast<std::size_t>(test_rows[r])].clf_score >
          pipe.youden_cut) {
        pipe.test_eval.push_back(test_rows[r]);
        test_keep_positions.push_back(static_cast<Index>(r));
      }
  } else {
    for (Index i : cal_rows)
      if (pipe.subjects[static_cast<std::size_t>(i)].y != 0.0)
        pipe.cal_eval.push_back(i);
    for (std::size_t r = 0; r < test_rows.size(); ++r)
      if (pipe.subjects[static_cast<std::size_t>(test_rows[r])].y != 0.0) {
        pipe.test_eval.push_back(test_rows[r]);
        test_keep_positions.push_back(static_cast<Index>(r));
      }
  }
  if (pipe.cal_eval.empty())
    throw ConfigError("no calibration rows pass the evaluation filter");
  if (pipe.test_eval.empty())
    throw ConfigError("no test rows pass the evaluation filter");

  if (pipe.can_refit) {
    Matrix filtered(static_cast<Index>(test_keep_positions.size()),
                    pipe.test_eval_features.cols());
    for (std::size_t r = 0; r < test_keep_positions.size(); ++r)
      filtered.row(static_cast<Index>(r)) =
          pipe.test_eval_features.row(test_keep_positions[static_cast<std::size_t>(r)]);
    pipe.test_eval_features = std::move(filtered);
  }

  // stage-2 training rows (ground-truth changes) for naive residuals
  for (Index i : train_rows)
    if (pipe.subjects[static_cast<std::size_t>(i)].y != 0.0)
      pipe.train_fit.push_back(i);

  return pipe;
}

// --- method execution -------------------------------------------------------

namespace {

template <typename Fn>
auto with_method_context(const std::string& tag, Fn&& fn) {
  try {
    return fn();
  } catch (const StratificationError& e) {
    throw StratificationError("method " + tag + ": " + e.what());
  } catch (const CalibrationError& e) {
    throw CalibrationError("method " + tag + ": " + e.what());
  } catch (const ArgumentError& e) {
    throw ArgumentError("method " + tag + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError("method " + tag + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError("method " + tag + ": " + e.what());
  }
}

Vector lengths_of(const std::vector<conformal::PredictionInterval>& intervals) {
  Vector out(static_cast<Index>(intervals.size()));
  for (std::size_t i = 0; i < intervals.size(); ++i)
    out[static_cast<Index>(i)] = intervals[i].length;
  return out;
}

metrics::ConfidenceInterval bracketed(metrics::ConfidenceInterval ci, Real point) {
  // report invariant: CI bounds bracket the point estimate
  if (metrics::is_defined(point)) {
    ci.lo = std::min(ci.lo, point);
    ci.hi = std::max(ci.hi, point);
  }
  return ci;
}

}  // namespace

MethodRun run_method(const PreparedPipeline& pipeline, Method method,
                     const ExperimentConfig& config, const ConformalParams& params,
                     const Vector& baseline_lengths, bool full_metrics) {
  const std::string tag = to_string(method);
  const auto n_test = static_cast<Index>(pipeline.test_eval.size());
  const Vector truths = pipeline.test_truths();
  const Vector preds = pipeline.test_predictions();
  const Vector u = pipeline.test_u();

  MethodRun run;
  run.intervals.resize(static_cast<std::size_t>(n_test));

  with_method_context(tag, [&] {
    switch (method) {
      case Method::Naive: {
        if (pipeline.train_fit.empty())
          throw ConfigError("needs train rows with y != 0 for training residuals");
        Vector residuals(static_cast<Index>(pipeline.train_fit.size()));
        for (std::size_t i = 0; i < pipeline.train_fit.size(); ++i) {
          const auto& rec =
              pipeline.subjects[static_cast<std::size_t>(pipeline.train_fit[i])];
          residuals[static_cast<Index>(i)] = std::abs(rec.y - rec.reg_pred);
        }
        parallel_for(n_test, pipeline.threads, [&](Index i) {
          run.intervals[static_cast<std::size_t>(i)] =
              conformal::naive_interval(residuals, params.alpha, preds[i]);
        });
        break;
      }
      case Method::Split: {
        const Vector residuals = pipeline.cal_residuals();
        parallel_for(n_test, pipeline.threads, [&](Index i) {
          run.intervals[static_cast<std::size_t>(i)] =
              conformal::split_conformal(residuals, params.alpha, preds[i]);
        });
        break;
      }
      case Method::CvPlus: {
        if (!pipeline.can_refit)
          throw ConfigError("requires learner refits; unavailable with ingested predictions");
        const auto model = conformal::cv_plus_fit(
            pipeline.train_features, pipeline.train_targets, pipeline.stage2_factory,
            config.cv_folds, params.alpha, derive_seed(pipeline.base_seed, 3));
        parallel_for(n_test, pipeline.threads, [&](Index i) {
          run.intervals[static_cast<std::size_t>(i)] = conformal::cv_plus_predict(
              model, pipeline.test_eval_features.row(i).transpose());
        });
        break;
      }
      case Method::JackknifePlusAb: {
        if (!pipeline.can_refit)
          throw ConfigError("requires learner refits; unavailable with ingested predictions");
        const auto model = conformal::jackknife_plus_ab_fit(
            pipeline.train_features, pipeline.train_targets, pipeline.stage2_factory,
            config.jab_bootstrap, params.alpha, derive_seed(pipeline.base_seed, 4));
        if (model.dropped > 0)
          run.summary.warning = "jab: " + std::to_string(model.dropped) +
                                " training points had empty out-of-bag sets";
        parallel_for(n_test, pipeline.threads, [&](Index i) {
          run.intervals[static_cast<std::size_t>(i)] = conformal::jackknife_plus_ab_predict(
              model, pipeline.test_eval_features.row(i).transpose());
        });
        break;
      }
      case Method::Mondrian: {
        run.summary = conformal::mondrian_calibrate(
            pipeline.cal_residuals(), pipeline.cal_u(), params.mondrian_bins,
            params.alpha);
        parallel_for(n_test, pipeline.threads, [&](Index i) {
          run.intervals[static_cast<std::size_t>(i)] =
              conformal::mondrian_predict(run.summary, u[i], preds[i]);
        });
        break;
      }
      case Method::Cascade: {
        run.summary = conformal::continuous_cascade_calibrate(
            pipeline.cal_residuals(), pipeline.cal_u(), params.beta, params.alpha,
            params.sigma_floor);
        parallel_for(n_test, pipeline.threads, [&](Index i) {
          run.intervals[static_cast<std::size_t>(i)] =
              conformal::continuous_cascade_predict(run.summary, u[i], preds[i]);
        });
        break;
      }
    }
  });

  for (Index i = 0; i < n_test; ++i) {
    auto& interval = run.intervals[static_cast<std::size_t>(i)];
    interval.id =
        pipeline.subjects[static_cast<std::size_t>(pipeline.test_eval[i])].id;
    if (std::isnan(interval.u_va)) interval.u_va = u[i];
  }

  const Vector lengths = lengths_of(run.intervals);
  auto& report = run.report;
  report.method = tag;
  report.marginal_coverage = metrics::marginal_coverage(run.intervals, truths);
  report.avg_length = lengths.mean();
  report.cascade_ratio = metrics::cascade_ratio(lengths, u, params.strata_bins);
  Vector winkler_values(n_test);
  for (Index i = 0; i < n_test; ++i)
    winkler_values[i] = metrics::winkler_score(run.intervals[static_cast<std::size_t>(i)],
                                               truths[i], params.alpha);
  report.winkler = winkler_values.mean();
  report.ks_vs_baseline = baseline_lengths.size() > 0
                              ? metrics::ks_two_sample(lengths, baseline_lengths)
                              : metrics::ks_two_sample(lengths, lengths);
  report.spearman = n_test >= 3 ? metrics::spearman(lengths, u) : metrics::SpearmanResult{};
  report.per_stratum = metrics::stratified_rows(run.intervals, truths, u, params.strata_bins);

  if (full_metrics) {
    const auto method_stream = static_cast<std::uint64_t>(method);
    const int B = config.bootstrap_replicates;
    Vector covered(n_test);
    for (Index i = 0; i < n_test; ++i) {
      const auto& iv = run.intervals[static_cast<std::size_t>(i)];
      covered[i] = (iv.lower <= truths[i] && truths[i] <= iv.upper) ? 1.0 : 0.0;
    }
    report.ci["coverage"] = bracketed(
        metrics::bootstrap_ci_mean(covered, B, 0.95,
                                   derive_seed(pipeline.base_seed, 1000 + method_stream * 8),
                                   pipeline.threads),
        report.marginal_coverage);
    report.ci["avg_length"] = bracketed(
        metrics::bootstrap_ci_mean(lengths, B, 0.95,
                                   derive_seed(pipeline.base_seed, 1001 + method_stream * 8),
                                   pipeline.threads),
        report.avg_length);
    report.ci["winkler"] = bracketed(
        metrics::bootstrap_ci_mean(winkler_values, B, 0.95,
                                   derive_seed(pipeline.base_seed, 1002 + method_stream * 8),
                                   pipeline.threads),
        report.winkler);
    // (length, u) pairs resample jointly so the strata recompute per replicate
    report.ci["cascade_ratio"] = bracketed(
        metrics::bootstrap_ci(
            n_test,
            [&](const IndexList& idx) {
              Vector l(static_cast<Index>(idx.size())), uu(static_cast<Index>(idx.size()));
              for (std::size_t r = 0; r < idx.size(); ++r) {
                l[static_cast<Index>(r)] = lengths[idx[r]];
                uu[static_cast<Index>(r)] = u[idx[r]];
              }
              return metrics::cascade_ratio(l, uu, params.strata_bins);
            },
            B, 0.95, derive_seed(pipeline.base_seed, 1003 + method_stream * 8),
            pipeline.threads),
        report.cascade_ratio);
  }
  return run;
}

// --- experiments ------------------------------------------------------------

namespace {

ConformalParams params_from(const ExperimentConfig& config) {
  return {config.alpha, config.beta, config.mondrian_bins, config.strata_bins,
          config.sigma_floor};
}

ExperimentResult run_all(const PreparedPipeline& pipeline,
                         const ExperimentConfig& config) {
  const auto params = params_from(config);
  // split-CP lengths are the baseline for every KS comparison
  const auto baseline =
      run_method(pipeline, Method::Split, config, params, Vector(), false);
  const Vector baseline_lengths = lengths_of(baseline.intervals);

  ExperimentResult result;
  std::vector<std::string> warnings;
  for (Method method : config.methods) {
    auto run = run_method(pipeline, method, config, params, baseline_lengths, true);
    if (!run.summary.warning.empty()) warnings.push_back(run.summary.warning);
    result.reports.push_back(std::move(run.report));
    result.intervals.emplace_back(to_string(method), std::move(run.intervals));
  }

  json metadata;
  metadata["alpha"] = config.alpha;
  metadata["beta"] = config.beta;
  metadata["seed"] = config.seed;
  metadata["filter"] = to_string(config.filter);
  metadata["mondrian_bins"] = config.mondrian_bins;
  metadata["strata_bins"] = config.strata_bins;
  metadata["sigma_floor"] = config.sigma_floor;
  metadata["methods"] = json::array();
  for (Method m : config.methods) metadata["methods"].push_back(to_string(m));
  metadata["mode"] = config.predictions_path.empty() ? "generate" : "ingest";
  metadata["stage1"] = config.learners.stage1;
  metadata["stage2"] = config.learners.stage2;
  metadata["n_subjects"] = static_cast<Index>(pipeline.subjects.size());
  metadata["n_cal_eval"] = static_cast<Index>(pipeline.cal_eval.size());
  metadata["n_test_eval"] = static_cast<Index>(pipeline.test_eval.size());
  metadata["n_train_fit"] = static_cast<Index>(pipeline.train_fit.size());
  metadata["youden_threshold"] = metrics::is_defined(pipeline.youden_cut)
                                     ? json(snap_significant(pipeline.youden_cut))
                                     : json(nullptr);
  metadata["warnings"] = warnings;
  result.metadata = std::move(metadata);
  return result;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  const auto pipeline = prepare(config);
  return run_all(pipeline, config);
}

void persist_experiment(const ExperimentConfig& config,
                        const PreparedPipeline& pipeline,
                        const ExperimentResult& result) {
  std::filesystem::create_directories(config.out_dir);
  write_reports_json(result.reports, result.metadata, config.out_dir / "report.json");
  if (config.format == "csv")
    write_reports_csv(result.reports, config.out_dir / "report.csv");
  write_subjects_csv(pipeline.subjects, config.out_dir / "subjects.csv");
  write_intervals_csv(result.intervals, config.out_dir / "intervals.csv");
}

ExperimentResult run_and_persist(const ExperimentConfig& config) {
  const auto pipeline = prepare(config);
  auto result = run_all(pipeline, config);
  persist_experiment(config, pipeline, result);
  return result;
}

// --- ablation ---------------------------------------------------------------

AblationTable ablate(const PreparedPipeline& pipeline, const ExperimentConfig& config,
                     const std::string& parameter) {
  std::vector<Real> grid;
  if (parameter == "beta") {
    grid = config.beta_grid;
  } else if (parameter == "alpha") {
    grid = config.alpha_grid;
  } else if (parameter == "K") {
    for (int k : config.k_grid) grid.push_back(static_cast<Real>(k));
  } else {
    throw ConfigError("ablate: parameter must be beta, alpha or K");
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  if (grid.empty()) throw ConfigError("ablate: empty grid");

  AblationTable table;
  table.parameter = parameter;
  for (Real value : grid) {
    ConformalParams params = params_from(config);
    Method method = Method::Cascade;
    if (parameter == "beta") {
      params.beta = value;
    } else if (parameter == "alpha") {
      params.alpha = value;
    } else {
      method = Method::Mondrian;
      params.mondrian_bins = static_cast<int>(value);
      params.strata_bins = static_cast<int>(value);
    }
    auto run = run_method(pipeline, method, config, params, Vector(), false);

    AblationRow row;
    row.value = value;
    row.coverage = run.report.marginal_coverage;
    row.avg_length = run.report.avg_length;
    row.cr = run.report.cascade_ratio;
    row.strata = std::move(run.report.per_stratum);
    row.status = row.coverage >= 1.0 - params.alpha - 0.02 ? "valid" : "unsafe";
    row.state_fingerprint = pipeline.fingerprint();
    table.rows.push_back(std::move(row));
  }

  // highest CR among valid rows becomes `optimal`
  std::size_t best = table.rows.size();
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    if (row.status != "valid" || !metrics::is_defined(row.cr)) continue;
    if (best == table.rows.size() || row.cr > table.rows[best].cr) best = i;
  }
  if (best < table.rows.size()) table.rows[best].status = "optimal";
  return table;
}

AblationTable ablate(const ExperimentConfig& config, const std::string& parameter) {
  const auto pipeline = prepare(config);
  return ablate(pipeline, config, parameter);
}

void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path) {
  auto out = io::open_output(path);
  out << "parameter,value,stratum,count,coverage,mean_length,cascade_ratio,status\n";
  auto num = [](Real x) {
    return std::isnan(x) ? std::string("nan") : io::format_real(snap_significant(x), 12);
  };
  for (const auto& row : table.rows) {
    Index total = 0;
    for (const auto& s : row.strata) total += s.count;
    out << table.parameter << ',' << num(row.value) << ",overall," << total << ','
        << num(row.coverage) << ',' << num(row.avg_length) << ',' << num(row.cr)
        << ',' << row.status << "\n";
    for (const auto& s : row.strata)
      out << table.parameter << ',' << num(row.value) << ',' << s.label << ','
          << s.count << ',' << num(s.coverage) << ',' << num(s.mean_length)
          << ",,\n";
  }
}

void write_ablation_json(const AblationTable& table, const std::filesystem::path& path) {
  json j;
  j["parameter"] = table.parameter;
  j["rows"] = json::array();
  auto num = [](Real x) {
    return std::isnan(x) ? json(nullptr) : json(snap_significant(x));
  };
  for (const auto& row : table.rows) {
    json strata = json::array();
    for (const auto& s : row.strata)
      strata.push_back({{"stratum", s.label},
                        {"count", s.count},
                        {"coverage", num(s.coverage)},
                        {"mean_length", num(s.mean_length)}});
    j["rows"].push_back({{"value", num(row.value)},
                         {"coverage", num(row.coverage)},
                         {"avg_length", num(row.avg_length)},
                         {"cascade_ratio", num(row.cr)},
                         {"status", row.status},
                         {"strata", std::move(strata)}});
  }
  auto out = io::open_output(path);
  out << j.dump(2) << "\n";
}

// --- artifacts ---------------------------------------------------------------

void write_subjects_csv(const std::vector<SubjectRecord>& subjects,
                        const std::filesystem::path& path) {
  auto out = io::open_output(path);
  out << "id,split,y,change_label,reg_pred,clf_score,p0,p1,u\n";
  for (const auto& rec : subjects) {
    out << rec.id << ',' << learners::to_string(rec.split) << ','
        << io::format_real(rec.y) << ',' << rec.change_label << ','
        << io::format_real(rec.reg_pred) << ',' << io::format_real(rec.clf_score)
        << ',' << io::format_real(rec.p0) << ',' << io::format_real(rec.p1) << ','
        << io::format_real(rec.u) << "\n";
  }
}

std::vector<SubjectRecord> read_subjects_csv(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  std::string line;
  if (!io::read_line(in, line)) throw DataError("empty subjects file " + path.string());
  if (io::split_line(line) !=
      std::vector<std::string>{"id", "split", "y", "change_label", "reg_pred",
                               "clf_score", "p0", "p1", "u"})
    throw DataError("bad subjects header in " + path.string());
  std::vector<SubjectRecord> subjects;
  std::size_t row = 1;
  while (io::read_line(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = io::split_line(line);
    if (fields.size() != 9)
      throw DataError("row " + std::to_string(row) + ": expected 9 columns");
    SubjectRecord rec;
    rec.id = fields[0];
    if (fields[1] == "train")
      rec.split = learners::Split::Train;
    else if (fields[1] == "cal")
      rec.split = learners::Split::Cal;
    else if (fields[1] == "test")
      rec.split = learners::Split::Test;
    else
      throw DataError("row " + std::to_string(row) + ": unknown split tag");
    rec.y = io::parse_real(fields[2], row, "y");
    rec.change_label = static_cast<int>(io::parse_real(fields[3], row, "change_label"));
    rec.reg_pred = io::parse_real(fields[4], row, "reg_pred");
    rec.clf_score = io::parse_real(fields[5], row, "clf_score");
    rec.p0 = io::parse_real(fields[6], row, "p0");
    rec.p1 = io::parse_real(fields[7], row, "p1");
    rec.u = io::parse_real(fields[8], row, "u");
    subjects.push_back(std::move(rec));
  }
  return subjects;
}

void write_intervals_csv(
    const std::vector<std::pair<std::string, std::vector<conformal::PredictionInterval>>>&
        intervals,
    const std::filesystem::path& path) {
  auto out = io::open_output(path);
  out << "method,id,center,lower,upper,length,sigma,u_va\n";
  for (const auto& [method, list] : intervals) {
    for (const auto& iv : list) {
      out << method << ',' << iv.id << ',' << io::format_real(iv.center) << ','
          << io::format_real(iv.lower) << ',' << io::format_real(iv.upper) << ','
          << io::format_real(iv.length) << ',' << io::format_real(iv.sigma) << ','
          << io::format_real(iv.u_va) << "\n";
    }
  }
}

}  // namespace cascade::harness
