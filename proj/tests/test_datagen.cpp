#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "cascade/datagen.hpp"
#include "cascade/errors.hpp"
#include "cascade/metrics.hpp"

using namespace cascade;
using namespace cascade::datagen;

namespace {

Real correlation(const Vector& a, const Vector& b) {
  const Vector ca = a.array() - a.mean();
  const Vector cb = b.array() - b.mean();
  return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_SUITE("datagen") {
  TEST_CASE("same config and seed give byte-identical cohorts") {
    auto cfg = default_gen_config();
    cfg.n_subjects = 300;
    cfg.seed = 42;
    const auto a = generate_cohort(cfg);
    const auto b = generate_cohort(cfg);
    CHECK(a.features == b.features);
    CHECK(a.target == b.target);
    CHECK(a.change_label == b.change_label);
    CHECK(a.ids == b.ids);
  }

  TEST_CASE("config errors name the offending field") {
    auto cfg = default_gen_config();
    cfg.n_subjects = 5;
    CHECK_THROWS_WITH_AS(generate_cohort(cfg),
                         doctest::Contains("n_subjects"), ConfigError);
    cfg = default_gen_config();
    cfg.decision_weights = Vector::Ones(3);
    CHECK_THROWS_WITH_AS(generate_cohort(cfg),
                         doctest::Contains("decision_weights"), ConfigError);
    cfg = default_gen_config();
    cfg.noise_base = 0.0;
    CHECK_THROWS_WITH_AS(generate_cohort(cfg), doctest::Contains("noise_base"),
                         ConfigError);
  }

  TEST_CASE("change label marks exactly the nonzero targets") {
    auto cfg = default_gen_config();
    cfg.n_subjects = 2000;
    cfg.seed = 7;
    const auto cohort = generate_cohort(cfg);
    for (Index i = 0; i < cohort.size(); ++i)
      CHECK(cohort.change_label[static_cast<std::size_t>(i)] ==
            (cohort.target[i] != 0.0 ? 1 : 0));
  }

  TEST_CASE("zero ambiguity gain decouples residual spread from ambiguity") {
    auto cfg = default_gen_config();
    cfg.n_subjects = 10000;
    cfg.noise_ambiguity_gain = 0.0;
    cfg.seed = 3;
    const auto cohort = generate_cohort(cfg);
    const Vector p = decision_probabilities(cfg, cohort.features);
    const Vector oracle_mean =
        (cohort.features * cfg.effect_weights).array() + cfg.effect_intercept;

    std::vector<Real> residual, ambiguity;
    for (Index i = 0; i < cohort.size(); ++i) {
      if (cohort.target[i] == 0.0) continue;
      residual.push_back(std::abs(cohort.target[i] - oracle_mean[i]));
      ambiguity.push_back(1.0 - std::abs(2.0 * p[i] - 1.0));
    }
    const Real r = correlation(
        Eigen::Map<const Vector>(residual.data(), static_cast<Index>(residual.size())),
        Eigen::Map<const Vector>(ambiguity.data(), static_cast<Index>(ambiguity.size())));
    CHECK(std::abs(r) < 0.05);
  }

  TEST_CASE("positive ambiguity gain couples residual spread to ambiguity") {
    auto cfg = default_gen_config();
    cfg.n_subjects = 10000;
    cfg.noise_ambiguity_gain = 0.12;
    cfg.seed = 3;
    const auto cohort = generate_cohort(cfg);
    const Vector p = decision_probabilities(cfg, cohort.features);
    const Vector oracle_mean =
        (cohort.features * cfg.effect_weights).array() + cfg.effect_intercept;

    std::vector<Real> residual, ambiguity;
    for (Index i = 0; i < cohort.size(); ++i) {
      if (cohort.target[i] == 0.0) continue;
      residual.push_back(std::abs(cohort.target[i] - oracle_mean[i]));
      ambiguity.push_back(1.0 - std::abs(2.0 * p[i] - 1.0));
    }
    const Real r = correlation(
        Eigen::Map<const Vector>(residual.data(), static_cast<Index>(residual.size())),
        Eigen::Map<const Vector>(ambiguity.data(), static_cast<Index>(ambiguity.size())));
    CHECK(r > 0.1);
  }

  TEST_CASE("zero-inflation rate matches the Monte-Carlo integral of 1 - p(x)") {
    auto cfg = default_gen_config();
    cfg.n_subjects = 50000;
    cfg.seed = 5;
    const auto cohort = generate_cohort(cfg);
    Real zero_rate = 0.0;
    for (Index i = 0; i < cohort.size(); ++i)
      if (cohort.target[i] == 0.0) zero_rate += 1.0;
    zero_rate /= static_cast<Real>(cohort.size());

    // independent estimate of E[1 - p(x)] over the feature distribution
    std::mt19937_64 rng(999);
    std::normal_distribution<Real> normal(0.0, 1.0);
    const Index m = 200000;
    Matrix X(m, cfg.n_features);
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < cfg.n_features; ++j) X(i, j) = normal(rng);
    const Real expected = 1.0 - decision_probabilities(cfg, X).mean();
    CHECK(zero_rate == doctest::Approx(expected).epsilon(0.02 / expected));
  }
}

TEST_SUITE("split_cohort") {
  TEST_CASE("floor arithmetic and remainder to train") {
    auto cfg = default_gen_config();
    cfg.n_subjects = 100;
    const auto cohort = generate_cohort(cfg);
    const auto split = split_cohort(cohort, 0.2, 0.2, 1);
    CHECK(split.train.size() == 60);
    CHECK(split.cal.size() == 20);
    CHECK(split.test.size() == 20);
  }

  TEST_CASE("rejects out-of-range fractions") {
    auto cfg = default_gen_config();
    cfg.n_subjects = 50;
    const auto cohort = generate_cohort(cfg);
    CHECK_THROWS_AS(split_cohort(cohort, 0.0, 0.2, 1), ConfigError);
    CHECK_THROWS_AS(split_cohort(cohort, 0.2, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(split_cohort(cohort, 0.6, 0.4, 1), ConfigError);
  }

  TEST_CASE("deterministic and a proper partition") {
    auto cfg = default_gen_config();
    cfg.n_subjects = 101;
    const auto cohort = generate_cohort(cfg);
    const auto a = split_cohort(cohort, 0.25, 0.1, 9);
    const auto b = split_cohort(cohort, 0.25, 0.1, 9);
    CHECK(a.train == b.train);
    CHECK(a.cal == b.cal);
    CHECK(a.test == b.test);

    std::vector<int> seen(static_cast<std::size_t>(cohort.size()), 0);
    for (Index i : a.train) ++seen[static_cast<std::size_t>(i)];
    for (Index i : a.cal) ++seen[static_cast<std::size_t>(i)];
    for (Index i : a.test) ++seen[static_cast<std::size_t>(i)];
    for (int count : seen) CHECK(count == 1);
  }

  TEST_CASE("cal and test targets are exchangeable across seeds") {
    auto cfg = default_gen_config();
    cfg.n_subjects = 2000;
    cfg.seed = 17;
    const auto cohort = generate_cohort(cfg);
    int below = 0;
    const int n_seeds = 100;
    for (int s = 0; s < n_seeds; ++s) {
      const auto split = split_cohort(cohort, 0.2, 0.2, static_cast<std::uint64_t>(s));
      Vector cal_y(static_cast<Index>(split.cal.size()));
      Vector test_y(static_cast<Index>(split.test.size()));
      for (std::size_t i = 0; i < split.cal.size(); ++i)
        cal_y[static_cast<Index>(i)] = cohort.target[split.cal[i]];
      for (std::size_t i = 0; i < split.test.size(); ++i)
        test_y[static_cast<Index>(i)] = cohort.target[split.test[i]];
      const auto ks = metrics::ks_two_sample(cal_y, test_y);
      const Real na = static_cast<Real>(cal_y.size());
      const Real nb = static_cast<Real>(test_y.size());
      const Real critical = 1.358 * std::sqrt((na + nb) / (na * nb));
      if (ks.d < critical) ++below;
    }
    CHECK(below >= 90);
  }
}

TEST_SUITE("cohort_csv") {
  TEST_CASE("round trip preserves every value") {
    auto cfg = default_gen_config();
    cfg.n_subjects = 150;
    cfg.seed = 8;
    const auto cohort = generate_cohort(cfg);
    const auto path = temp_file("cascade_test_cohort.csv");
    save_cohort_csv(cohort, path);
    const auto loaded = load_cohort_csv(path);
    REQUIRE(loaded.size() == cohort.size());
    CHECK(loaded.target == cohort.target);
    CHECK(loaded.features == cohort.features);
    CHECK(loaded.change_label == cohort.change_label);
    CHECK(loaded.ids == cohort.ids);
    std::filesystem::remove(path);
  }

  TEST_CASE("rejects duplicate ids and inconsistent labels") {
    const auto path = temp_file("cascade_test_bad_cohort.csv");
    {
      auto out = std::ofstream(path);
      out << "id,y,change_label,f0\n0,0.5,1,0.1\n0,0.0,0,0.2\n";
    }
    CHECK_THROWS_WITH_AS(load_cohort_csv(path), doctest::Contains("duplicate id"),
                         DataError);
    {
      auto out = std::ofstream(path);
      out << "id,y,change_label,f0\n0,0.5,0,0.1\n";
    }
    CHECK_THROWS_WITH_AS(load_cohort_csv(path), doctest::Contains("inconsistent"),
                         DataError);
    std::filesystem::remove(path);
  }
}
