#include "cascade/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_set>

#include "cascade/errors.hpp"
#include "internal/csv.hpp"

namespace cascade::datagen {

GenConfig default_gen_config() {
  GenConfig cfg;
  cfg.n_subjects = 5000;
  cfg.n_features = 5;
  cfg.decision_weights = (Vector(5) << 1.0, -0.8, 0.6, 0.5, -0.4).finished();
  cfg.decision_intercept = 0.0;
  cfg.effect_weights = (Vector(5) << 0.06, 0.05, -0.04, 0.03, 0.02).finished();
  cfg.effect_intercept = 0.10;
  cfg.noise_base = 0.02;
  cfg.noise_ambiguity_gain = 0.12;
  cfg.seed = 0;
  return cfg;
}

void validate(const GenConfig& config) {
  if (config.n_subjects < 10)
    throw ConfigError("n_subjects must be >= 10, got " +
                      std::to_string(config.n_subjects));
  if (config.n_features < 1)
    throw ConfigError("n_features must be >= 1, got " +
                      std::to_string(config.n_features));
  if (config.decision_weights.size() != config.n_features)
    throw ConfigError("decision_weights length " +
                      std::to_string(config.decision_weights.size()) +
                      " does not match n_features " +
                      std::to_string(config.n_features));
  if (config.effect_weights.size() != config.n_features)
    throw ConfigError("effect_weights length " +
                      std::to_string(config.effect_weights.size()) +
                      " does not match n_features " +
                      std::to_string(config.n_features));
  if (!(config.noise_base > 0.0))
    throw ConfigError("noise_base must be > 0");
  if (config.noise_ambiguity_gain < 0.0)
    throw ConfigError("noise_ambiguity_gain must be >= 0");
}

Vector decision_probabilities(const GenConfig& config, const MatrixRef& features) {
  Vector eta =
      (features * config.decision_weights).array() + config.decision_intercept;
  return (1.0 / (1.0 + (-eta.array()).exp())).matrix();
}

Cohort generate_cohort(const GenConfig& config) {
  validate(config);
  const Index n = config.n_subjects;
  const Index d = config.n_features;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<Real> normal(0.0, 1.0);
  std::uniform_real_distribution<Real> unif(0.0, 1.0);

  Cohort cohort;
  cohort.features.resize(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) cohort.features(i, j) = normal(rng);

  const Vector p = decision_probabilities(config, cohort.features);
  const Vector mean_effect =
      (cohort.features * config.effect_weights).array() + config.effect_intercept;

  cohort.target.resize(n);
  cohort.change_label.resize(static_cast<std::size_t>(n));
  cohort.ids.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    cohort.ids[static_cast<std::size_t>(i)] = i;
    const bool changed = unif(rng) < p[i];
    if (!changed) {
      cohort.target[i] = 0.0;  // exact zero: no intervention
      cohort.change_label[static_cast<std::size_t>(i)] = 0;
      continue;
    }
    const Real ambiguity = 1.0 - std::abs(2.0 * p[i] - 1.0);
    const Real scale = config.noise_base + config.noise_ambiguity_gain * ambiguity;
    cohort.target[i] = mean_effect[i] + scale * normal(rng);
    cohort.change_label[static_cast<std::size_t>(i)] = 1;
  }
  return cohort;
}

SplitIndices split_cohort(const Cohort& cohort, Real cal_fraction,
                          Real test_fraction, std::uint64_t seed) {
  if (!(cal_fraction > 0.0 && cal_fraction < 1.0))
    throw ConfigError("cal_fraction must be in (0,1)");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must be in (0,1)");
  if (!(cal_fraction + test_fraction < 1.0))
    throw ConfigError("cal_fraction + test_fraction must be < 1");

  const Index n = cohort.size();
  IndexList order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_cal = static_cast<std::size_t>(std::floor(cal_fraction * static_cast<Real>(n)));
  const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<Real>(n)));

  SplitIndices split;
  split.cal.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_cal));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_cal),
                    order.begin() + static_cast<std::ptrdiff_t>(n_cal + n_test));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_cal + n_test), order.end());
  std::sort(split.cal.begin(), split.cal.end());
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

void save_cohort_csv(const Cohort& cohort, const std::filesystem::path& path) {
  auto out = io::open_output(path);
  const Index d = cohort.features.cols();
  out << "id,y,change_label";
  for (Index j = 0; j < d; ++j) out << ",f" << j;
  out << "\n";
  for (Index i = 0; i < cohort.size(); ++i) {
    out << cohort.ids[static_cast<std::size_t>(i)] << ','
        << io::format_real(cohort.target[i]) << ','
        << cohort.change_label[static_cast<std::size_t>(i)];
    for (Index j = 0; j < d; ++j)
      out << ',' << io::format_real(cohort.features(i, j));
    out << "\n";
  }
}

Cohort load_cohort_csv(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  std::string line;
  if (!io::read_line(in, line)) throw DataError("empty cohort file " + path.string());
  const auto header = io::split_line(line);
  if (header.size() < 4 || header[0] != "id" || header[1] != "y" ||
      header[2] != "change_label")
    throw DataError("bad cohort header in " + path.string());
  const Index d = static_cast<Index>(header.size()) - 3;
  for (Index j = 0; j < d; ++j) {
    if (header[static_cast<std::size_t>(j + 3)] != "f" + std::to_string(j))
      throw DataError("bad cohort header: expected f" + std::to_string(j));
  }

  std::vector<std::int64_t> ids;
  std::vector<Real> targets;
  std::vector<int> labels;
  std::vector<Real> feats;
  std::unordered_set<std::int64_t> seen;
  std::size_t row = 1;
  while (io::read_line(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = io::split_line(line);
    if (fields.size() != header.size())
      throw DataError("row " + std::to_string(row) + ": expected " +
                      std::to_string(header.size()) + " columns, got " +
                      std::to_string(fields.size()));
    std::int64_t id;
    try {
      id = std::stoll(fields[0]);
    } catch (const std::exception&) {
      throw DataError("row " + std::to_string(row) + ": bad id '" + fields[0] + "'");
    }
    if (!seen.insert(id).second)
      throw DataError("row " + std::to_string(row) + ": duplicate id " +
                      std::to_string(id));
    const Real y = io::parse_real(fields[1], row, "y");
    const Real lbl = io::parse_real(fields[2], row, "change_label");
    if (lbl != 0.0 && lbl != 1.0)
      throw DataError("row " + std::to_string(row) + ": change_label must be 0 or 1");
    if ((lbl != 0.0) != (y != 0.0))
      throw DataError("row " + std::to_string(row) +
                      ": change_label inconsistent with y");
    ids.push_back(id);
    targets.push_back(y);
    labels.push_back(static_cast<int>(lbl));
    for (Index j = 0; j < d; ++j)
      feats.push_back(io::parse_real(fields[static_cast<std::size_t>(j + 3)], row,
                                     "f" + std::to_string(j)));
  }

  const Index n = static_cast<Index>(ids.size());
  Cohort cohort;
  cohort.ids = std::move(ids);
  cohort.change_label = std::move(labels);
  cohort.target = Eigen::Map<const Vector>(targets.data(), n);
  cohort.features.resize(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j)
      cohort.features(i, j) = feats[static_cast<std::size_t>(i * d + j)];
  return cohort;
}

}  // namespace cascade::datagen
