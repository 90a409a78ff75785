#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cascade/types.hpp"

namespace cascade::datagen {

// Synthetic two-stage cohort: a latent intervention decision followed by a
// zero-inflated continuous change target. The noise scale of changed subjects
// grows with the ambiguity of the decision, 1 - |2p(x) - 1|, which is what
// makes downstream uncertainty scaling observable on synthetic data.
struct GenConfig {
  Index n_subjects = 5000;
  Index n_features = 5;
  Vector decision_weights;  // length n_features
  Real decision_intercept = 0.0;
  Vector effect_weights;  // length n_features
  Real effect_intercept = 0.0;
  Real noise_base = 0.02;           // c0 > 0
  Real noise_ambiguity_gain = 0.0;  // c1 >= 0
  std::uint64_t seed = 0;
};

// Cohort generator defaults used by the harness (ambiguity-linked noise on).
GenConfig default_gen_config();

struct Cohort {
  Matrix features;                // n x d
  Vector target;                  // y, fraction units; exactly 0 = no change
  std::vector<int> change_label;  // 1 iff target != 0
  std::vector<std::int64_t> ids;  // unique
  Index size() const { return target.size(); }
};

struct SplitIndices {
  IndexList train;
  IndexList cal;
  IndexList test;
};

void validate(const GenConfig& config);

Cohort generate_cohort(const GenConfig& config);

// Latent decision probability p(x) under the generating process. Exposed so
// tests can use the generator's own oracle.
Vector decision_probabilities(const GenConfig& config, const MatrixRef& features);

// Uniform random partition without replacement. Sizes are floor(fraction * n)
// for cal and test; the remainder goes to train. Deterministic given seed.
SplitIndices split_cohort(const Cohort& cohort, Real cal_fraction,
                          Real test_fraction, std::uint64_t seed);

// CSV round trip: header `id,y,change_label,f0..f{d-1}`, 17 significant
// digits on floating values.
void save_cohort_csv(const Cohort& cohort, const std::filesystem::path& path);
Cohort load_cohort_csv(const std::filesystem::path& path);

}  // namespace cascade::datagen
