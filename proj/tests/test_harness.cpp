#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cascade/errors.hpp"
#include "cascade/harness.hpp"
#include "cascade/learners.hpp"
#include "cascade/metrics.hpp"
#include "cascade/report.hpp"

using namespace cascade;
using namespace cascade::harness;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config() {
  auto config = default_experiment_config();
  config.generator.n_subjects = 1200;
  config.seed = 7;
  config.bootstrap_replicates = 300;
  config.jab_bootstrap = 25;
  return config;
}

}  // namespace

TEST_SUITE("harness_run") {
  TEST_CASE("split-only run has a cascade ratio of exactly one") {
    auto config = small_config();
    config.methods = {Method::Split};
    const auto result = run_experiment(config);
    REQUIRE(result.reports.size() == 1);
    CHECK(result.reports[0].method == "split");
    CHECK(result.reports[0].cascade_ratio == 1.0);
    CHECK(result.reports[0].marginal_coverage > 0.70);
    CHECK(result.reports[0].marginal_coverage < 0.90);
    CHECK(result.reports[0].ks_vs_baseline.d == 0.0);
    // fixed-length construction: spearman rho is the undefined sentinel
    CHECK(!metrics::is_defined(result.reports[0].spearman.rho));
  }

  TEST_CASE("cascade at beta zero reproduces split intervals exactly") {
    auto config = small_config();
    config.methods = {Method::Split, Method::Cascade};
    config.beta = 0.0;
    const auto result = run_experiment(config);
    const auto& split_ivs = result.intervals[0].second;
    const auto& cascade_ivs = result.intervals[1].second;
    REQUIRE(split_ivs.size() == cascade_ivs.size());
    for (std::size_t i = 0; i < split_ivs.size(); ++i) {
      CHECK(std::abs(split_ivs[i].lower - cascade_ivs[i].lower) <= 1e-12);
      CHECK(std::abs(split_ivs[i].upper - cascade_ivs[i].upper) <= 1e-12);
    }
  }

  TEST_CASE("truth filter keeps exactly the rows with nonzero target") {
    const auto pipeline = prepare(small_config());
    for (Index i : pipeline.test_eval)
      CHECK(pipeline.subjects[static_cast<std::size_t>(i)].y != 0.0);
    Index nonzero_test = 0;
    for (const auto& rec : pipeline.subjects)
      if (rec.split == learners::Split::Test && rec.y != 0.0) ++nonzero_test;
    CHECK(static_cast<Index>(pipeline.test_eval.size()) == nonzero_test);
    CHECK(!metrics::is_defined(pipeline.youden_cut));
  }

  TEST_CASE("predicted filter thresholds on the calibration split only") {
    auto config = small_config();
    config.filter = EvalFilter::Predicted;
    config.methods = {Method::Split, Method::Cascade};
    config.out_dir = temp_dir("cascade_predicted_filter");
    run_and_persist(config);

    // recompute the Youden threshold from the persisted calibration artifacts
    const auto subjects = read_subjects_csv(config.out_dir / "subjects.csv");
    Vector cal_scores;
    std::vector<int> cal_labels;
    std::vector<Real> scores;
    for (const auto& rec : subjects) {
      if (rec.split != learners::Split::Cal) continue;
      scores.push_back(rec.clf_score);
      cal_labels.push_back(rec.change_label);
    }
    cal_scores = Eigen::Map<const Vector>(scores.data(), static_cast<Index>(scores.size()));
    const Real recomputed = metrics::youden_threshold(cal_scores, cal_labels);

    nlohmann::json metadata;
    read_reports_json(config.out_dir / "report.json", &metadata);
    REQUIRE(!metadata.at("youden_threshold").is_null());
    const Real persisted = metadata.at("youden_threshold").get<Real>();
    CHECK(persisted == doctest::Approx(recomputed).epsilon(1e-9));

    // eval rows are exactly the test rows above the threshold
    const auto pipeline = prepare(config);
    for (Index i : pipeline.test_eval)
      CHECK(pipeline.subjects[static_cast<std::size_t>(i)].clf_score >
            pipeline.youden_cut);
    std::filesystem::remove_all(config.out_dir);
  }

  TEST_CASE("runs are deterministic and thread-count independent") {
    auto config = small_config();
    config.methods = {Method::Split, Method::Mondrian, Method::Cascade};

    config.out_dir = temp_dir("cascade_det_a");
    run_and_persist(config);
    const auto report_a = slurp(config.out_dir / "report.json");
    const auto subjects_a = slurp(config.out_dir / "subjects.csv");
    const auto intervals_a = slurp(config.out_dir / "intervals.csv");

    config.out_dir = temp_dir("cascade_det_b");
    run_and_persist(config);
    CHECK(slurp(config.out_dir / "report.json") == report_a);
    CHECK(slurp(config.out_dir / "subjects.csv") == subjects_a);
    CHECK(slurp(config.out_dir / "intervals.csv") == intervals_a);

    config.out_dir = temp_dir("cascade_det_c");
    config.threads = 4;
    run_and_persist(config);
    CHECK(slurp(config.out_dir / "report.json") == report_a);
    CHECK(slurp(config.out_dir / "subjects.csv") == subjects_a);
    CHECK(slurp(config.out_dir / "intervals.csv") == intervals_a);

    std::filesystem::remove_all(temp_dir("cascade_det_a"));
    std::filesystem::remove_all(temp_dir("cascade_det_b"));
    std::filesystem::remove_all(temp_dir("cascade_det_c"));
  }

  TEST_CASE("interval structural invariants hold for every method") {
    auto config = small_config();
    config.methods = {Method::Naive,           Method::Split,    Method::CvPlus,
                      Method::JackknifePlusAb, Method::Mondrian, Method::Cascade};
    const auto result = run_experiment(config);
    for (const auto& [method, intervals] : result.intervals) {
      const bool symmetric = method != "cv_plus" && method != "jab";
      for (const auto& iv : intervals) {
        CHECK(iv.lower <= iv.upper);
        if (symmetric) {
          CHECK(iv.lower <= iv.center);
          CHECK(iv.center <= iv.upper);
          CHECK(iv.length ==
                doctest::Approx(iv.upper - iv.lower).scale(1.0).epsilon(1e-12));
        }
        CHECK(!iv.id.empty());
        CHECK(iv.sigma > 0.0);
      }
    }
  }

  TEST_CASE("ingestion mode consumes an external prediction table") {
    // persist a generated pipeline as a prediction file, then ingest it
    auto config = small_config();
    const auto pipeline = prepare(config);
    learners::PredictionTable table;
    for (const auto& rec : pipeline.subjects) {
      learners::PredictionRow row;
      row.id = rec.id;
      row.split = rec.split;
      row.y = rec.y;
      row.change_label = rec.change_label;
      row.reg_pred = rec.reg_pred;
      row.clf_score = rec.clf_score;
      table.rows.push_back(row);
    }
    const auto dir = temp_dir("cascade_ingest");
    const auto preds_path = dir / "preds.csv";
    learners::save_predictions(table, preds_path);

    auto ingest = small_config();
    ingest.predictions_path = preds_path;
    ingest.methods = {Method::Naive, Method::Split, Method::Mondrian, Method::Cascade};
    const auto result = run_experiment(ingest);
    REQUIRE(result.reports.size() == 4);
    // same predictions must give the same split coverage as the generated run
    auto base = small_config();
    base.methods = {Method::Split};
    const auto base_result = run_experiment(base);
    CHECK(result.reports[1].marginal_coverage ==
          doctest::Approx(base_result.reports[0].marginal_coverage).epsilon(1e-12));

    // refit-based methods cannot run on ingested predictions
    ingest.methods = {Method::CvPlus};
    CHECK_THROWS_WITH_AS(run_experiment(ingest), doctest::Contains("cv_plus"),
                         ConfigError);
    std::filesystem::remove_all(dir);
  }
}

TEST_SUITE("harness_ablate") {
  TEST_CASE("beta grid: zero row is exact, CR nondecreasing, state untouched") {
    auto config = small_config();
    const auto pipeline = prepare(config);
    const auto table = ablate(pipeline, config, "beta");
    REQUIRE(table.rows.size() == config.beta_grid.size());
    CHECK(table.rows[0].value == 0.0);
    CHECK(table.rows[0].cr == 1.0);
    for (std::size_t i = 0; i + 1 < table.rows.size(); ++i) {
      CHECK(table.rows[i].value < table.rows[i + 1].value);  // sorted
      CHECK(table.rows[i].cr <= table.rows[i + 1].cr + 1e-12);
    }
    for (const auto& row : table.rows)
      CHECK(row.state_fingerprint == pipeline.fingerprint());
  }

  TEST_CASE("ablation rows are reproducible across invocations") {
    auto config = small_config();
    const auto a = ablate(config, "beta");
    const auto b = ablate(config, "beta");
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      CHECK(a.rows[i].coverage == b.rows[i].coverage);
      CHECK(a.rows[i].cr == b.rows[i].cr);
      CHECK(a.rows[i].status == b.rows[i].status);
    }
  }

  TEST_CASE("K ablation fragments the calibration pool") {
    auto config = small_config();
    const auto pipeline = prepare(config);
    const auto table = ablate(pipeline, config, "K");
    REQUIRE(table.rows.size() == 3);
    for (std::size_t i = 0; i < table.rows.size(); ++i)
      CHECK(table.rows[i].strata.size() == static_cast<std::size_t>(config.k_grid[i]));
  }

  TEST_CASE("alpha ablation re-runs the conformal layer per level") {
    auto config = small_config();
    const auto table = ablate(config, "alpha");
    REQUIRE(table.rows.size() == 4);
    // wider intervals at stricter alpha
    CHECK(table.rows[0].value == 0.05);
    CHECK(table.rows[0].avg_length > table.rows[3].avg_length);
  }

  TEST_CASE("exactly one optimal row among valid rows") {
    auto config = small_config();
    const auto table = ablate(config, "beta");
    int optimal = 0;
    for (const auto& row : table.rows) optimal += row.status == "optimal" ? 1 : 0;
    CHECK(optimal == 1);
  }

  TEST_CASE("unknown parameter is rejected") {
    CHECK_THROWS_AS(ablate(small_config(), "gamma"), ConfigError);
  }
}

TEST_SUITE("harness_reports") {
  TEST_CASE("empty report list never writes a file") {
    const auto dir = temp_dir("cascade_empty_reports");
    CHECK_THROWS_AS(write_reports_json({}, nlohmann::json::object(), dir / "r.json"),
                    ArgumentError);
    CHECK(!std::filesystem::exists(dir / "r.json"));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("JSON round trip is byte-stable") {
    auto config = small_config();
    config.methods = {Method::Split, Method::Cascade};
    config.out_dir = temp_dir("cascade_roundtrip");
    run_and_persist(config);
    const auto original = slurp(config.out_dir / "report.json");

    nlohmann::json metadata;
    const auto reports = read_reports_json(config.out_dir / "report.json", &metadata);
    write_reports_json(reports, metadata, config.out_dir / "report2.json");
    CHECK(slurp(config.out_dir / "report2.json") == original);
    std::filesystem::remove_all(config.out_dir);
  }

  TEST_CASE("CSV column order is the documented contract") {
    auto config = small_config();
    config.methods = {Method::Split};
    config.format = "csv";
    config.out_dir = temp_dir("cascade_csv");
    run_and_persist(config);
    const auto csv = slurp(config.out_dir / "report.csv");
    const std::string expected_header =
        "method,stratum,count,coverage,avg_length,cascade_ratio,winkler,"
        "ks_d,ks_p,spearman_rho,spearman_p,"
        "coverage_ci_lo,coverage_ci_hi,avg_length_ci_lo,avg_length_ci_hi,"
        "cascade_ratio_ci_lo,cascade_ratio_ci_hi,winkler_ci_lo,winkler_ci_hi";
    CHECK(csv.substr(0, expected_header.size()) == expected_header);
    CHECK(csv.back() == '\n');
    // one overall row + strata rows
    CHECK(csv.find("split,overall,") != std::string::npos);
    CHECK(csv.find("split,u_q0.00-0.33,") != std::string::npos);
    std::filesystem::remove_all(config.out_dir);
  }

  TEST_CASE("ci bounds bracket the point estimates") {
    auto config = small_config();
    config.methods = {Method::Split, Method::Cascade};
    const auto result = run_experiment(config);
    for (const auto& report : result.reports) {
      CHECK(report.ci.at("coverage").lo <= report.marginal_coverage);
      CHECK(report.ci.at("coverage").hi >= report.marginal_coverage);
      CHECK(report.ci.at("avg_length").lo <= report.avg_length);
      CHECK(report.ci.at("avg_length").hi >= report.avg_length);
      CHECK(report.ci.at("winkler").lo <= report.winkler);
      CHECK(report.ci.at("winkler").hi >= report.winkler);
      if (metrics::is_defined(report.cascade_ratio)) {
        CHECK(report.ci.at("cascade_ratio").lo <= report.cascade_ratio);
        CHECK(report.ci.at("cascade_ratio").hi >= report.cascade_ratio);
      }
    }
  }

  TEST_CASE("subjects CSV carries the venn-abers columns for cal and test") {
    auto config = small_config();
    config.methods = {Method::Split};
    config.out_dir = temp_dir("cascade_subjects");
    run_and_persist(config);
    const auto subjects = read_subjects_csv(config.out_dir / "subjects.csv");
    REQUIRE(subjects.size() == 1200);
    for (const auto& rec : subjects) {
      if (rec.split == learners::Split::Train) {
        CHECK(!metrics::is_defined(rec.u));
      } else {
        CHECK(metrics::is_defined(rec.u));
        CHECK(rec.p0 <= rec.p1);
        CHECK(rec.u == rec.p1 - rec.p0);
      }
    }
    std::filesystem::remove_all(config.out_dir);
  }
}

TEST_SUITE("harness_config") {
  TEST_CASE("unknown keys and wrong types are configuration errors") {
    CHECK_THROWS_WITH_AS(config_from_json({{"alhpa", 0.2}}), doctest::Contains("alhpa"),
                         ConfigError);
    CHECK_THROWS_AS(config_from_json({{"alpha", "not-a-number"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"alpha", 1.5}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"methods", nlohmann::json::array()}}),
                    ConfigError);
    CHECK_THROWS_AS(config_from_json({{"filter", "sometimes"}}), ConfigError);
  }

  TEST_CASE("round trip through a config file") {
    const auto dir = temp_dir("cascade_config");
    const auto path = dir / "config.json";
    {
      std::ofstream out(path);
      out << R"({"alpha": 0.1, "beta": 0.4, "seed": 99,
                 "methods": ["split", "cascade"],
                 "generator": {"n_subjects": 500},
                 "learners": {"stage2": "knn", "knn_k": 10}})";
    }
    const auto config = config_from_file(path);
    CHECK(config.alpha == 0.1);
    CHECK(config.beta == 0.4);
    CHECK(config.seed == 99);
    CHECK(config.methods == std::vector<Method>{Method::Split, Method::Cascade});
    CHECK(config.generator.n_subjects == 500);
    CHECK(config.learners.stage2 == "knn");
    std::filesystem::remove_all(dir);
  }
}
