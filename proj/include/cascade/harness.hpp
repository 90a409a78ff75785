#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cascade/conformal.hpp"
#include "cascade/datagen.hpp"
#include "cascade/learners.hpp"
#include "cascade/report.hpp"
#include "cascade/types.hpp"

namespace cascade::harness {

enum class Method { Naive, Split, CvPlus, JackknifePlusAb, Mondrian, Cascade };
std::string to_string(Method method);
Method method_from_string(const std::string& name);

enum class EvalFilter { Truth, Predicted };
std::string to_string(EvalFilter filter);
EvalFilter filter_from_string(const std::string& name);

struct LearnerConfig {
  std::string stage1 = "logistic";  // logistic | knn
  std::string stage2 = "ridge";     // ridge | knn
  Real ridge_penalty = 1e-6;
  Index knn_k = 25;
  Real logistic_learning_rate = 1.0;
  int logistic_max_iters = 500;
  Real logistic_tolerance = 1e-8;
  bool standardize = false;
};

struct ExperimentConfig {
  datagen::GenConfig generator = datagen::default_gen_config();
  std::filesystem::path predictions_path;  // nonempty switches to ingestion mode
  LearnerConfig learners;
  Real alpha = 0.2;
  Real beta = 0.7;
  std::vector<Real> beta_grid;   // default 0.0 .. 1.5 step 0.1
  std::vector<Real> alpha_grid;  // default {0.05, 0.1, 0.2, 0.3}
  std::vector<int> k_grid;       // default {3, 5, 7}
  int mondrian_bins = 3;
  int strata_bins = 3;  // evaluation strata for CR and per-stratum rows
  std::vector<Method> methods;  // default: all six
  EvalFilter filter = EvalFilter::Truth;
  int bootstrap_replicates = 1000;
  int cv_folds = 10;
  int jab_bootstrap = 50;
  Real sigma_floor = 1e-3;
  Real cal_fraction = 0.2;
  Real test_fraction = 0.2;
  std::uint64_t seed = 7;
  int threads = 1;
  std::filesystem::path out_dir = "out";
  std::string format = "json";  // json | csv (csv adds report.csv)
};

ExperimentConfig default_experiment_config();
void validate(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig config_from_file(const std::filesystem::path& path);

struct SubjectRecord {
  std::string id;
  learners::Split split = learners::Split::Train;
  Real y = 0.0;
  int change_label = 0;
  Real reg_pred = 0.0;
  Real clf_score = 0.0;
  Real p0 = metrics::kUndefined;
  Real p1 = metrics::kUndefined;
  Real u = metrics::kUndefined;
};

// State shared by every conformal method and every ablation grid point:
// learner predictions and Venn-Abers scores are computed once here and never
// mutated afterwards.
struct PreparedPipeline {
  std::vector<SubjectRecord> subjects;
  IndexList train_fit;  // stage-2 regression training rows (train with y != 0)
  IndexList cal_eval;   // calibration rows passing the eval filter
  IndexList test_eval;  // test rows passing the eval filter
  Real youden_cut = metrics::kUndefined;  // clf_score scale, predicted mode
  Matrix train_features;  // stage-2 training rows; empty in ingestion mode
  Vector train_targets;
  Matrix test_eval_features;  // aligned to test_eval; empty in ingestion mode
  bool can_refit = false;
  learners::RegressorFactory stage2_factory;
  std::uint64_t base_seed = 0;
  int threads = 1;

  Vector cal_residuals() const;
  Vector cal_u() const;
  Vector test_u() const;
  Vector test_truths() const;
  Vector test_predictions() const;
  // FNV-1a over the bytes of all reg_pred, clf_score and u values; ablation
  // rows assert this never changes.
  std::uint64_t fingerprint() const;
};

PreparedPipeline prepare(const ExperimentConfig& config);

struct ConformalParams {
  Real alpha = 0.2;
  Real beta = 0.7;
  int mondrian_bins = 3;
  int strata_bins = 3;
  Real sigma_floor = 1e-3;
};

struct MethodRun {
  MetricsReport report;
  std::vector<conformal::PredictionInterval> intervals;
  conformal::CalibrationSummary summary;  // populated for mondrian / cascade
};

// Runs one interval constructor over the filtered test rows and computes its
// metrics. `baseline_lengths` (split-CP lengths, same row order) feed the KS
// comparison; pass empty to compare against the method itself.
// `full_metrics` adds bootstrap CIs; ablation rows skip them.
MethodRun run_method(const PreparedPipeline& pipeline, Method method,
                     const ExperimentConfig& config, const ConformalParams& params,
                     const Vector& baseline_lengths, bool full_metrics);

struct ExperimentResult {
  std::vector<MetricsReport> reports;
  std::vector<std::pair<std::string, std::vector<conformal::PredictionInterval>>>
      intervals;  // per method, in config order
  nlohmann::json metadata;
};

ExperimentResult run_experiment(const ExperimentConfig& config);
// Writes report.json (+ report.csv when format == csv), subjects.csv and
// intervals.csv under config.out_dir.
void persist_experiment(const ExperimentConfig& config,
                        const PreparedPipeline& pipeline,
                        const ExperimentResult& result);
// prepare + run + persist; returns the result.
ExperimentResult run_and_persist(const ExperimentConfig& config);

struct AblationRow {
  Real value = 0.0;
  Real coverage = 0.0;
  Real avg_length = 0.0;
  Real cr = metrics::kUndefined;
  std::vector<metrics::StratumRow> strata;
  std::string status;  // valid | unsafe | optimal
  std::uint64_t state_fingerprint = 0;
};

struct AblationTable {
  std::string parameter;  // beta | alpha | K
  std::vector<AblationRow> rows;
};

AblationTable ablate(const PreparedPipeline& pipeline, const ExperimentConfig& config,
                     const std::string& parameter);
AblationTable ablate(const ExperimentConfig& config, const std::string& parameter);
void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path);
void write_ablation_json(const AblationTable& table, const std::filesystem::path& path);

void write_subjects_csv(const std::vector<SubjectRecord>& subjects,
                        const std::filesystem::path& path);
std::vector<SubjectRecord> read_subjects_csv(const std::filesystem::path& path);
void write_intervals_csv(
    const std::vector<std::pair<std::string, std::vector<conformal::PredictionInterval>>>&
        intervals,
    const std::filesystem::path& path);

}  // namespace cascade::harness
