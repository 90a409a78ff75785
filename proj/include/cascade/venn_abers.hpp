#pragma once

#include <vector>

#include "cascade/types.hpp"

namespace cascade::venn_abers {

// Multiprobability pair of the inductive Venn-Abers predictor and its
// interval length u = p1 - p0.
struct VennAbersOutput {
  Real p0 = 0.0;
  Real p1 = 0.0;
  Real u = 0.0;
};

// Weighted pool-adjacent-violators: the unique nondecreasing sequence
// minimizing the weighted squared deviation from `values`.
Vector pava(const VectorRef& values, const VectorRef& weights);
Vector pava(const VectorRef& values);

// Isotonic step function fitted to (score, target) pairs; equal scores are
// pooled into a single weighted block.
struct IsotonicFit {
  Vector breakpoints;    // sorted distinct scores
  Vector fitted_values;  // nondecreasing, aligned to breakpoints
};

IsotonicFit fit_isotonic(const VectorRef& scores, const VectorRef& targets);

Real uncertainty_score(Real p0, Real p1);

// Inductive Venn-Abers predictor over a fixed calibration set. Each query
// refits the isotonic regression twice with the test score appended labeled
// 0 and 1; the result is the fitted value of the block containing the test
// point, so no interpolation between breakpoints is ever needed.
class VennAbersCalibrator {
 public:
  VennAbersCalibrator(const VectorRef& cal_scores, const std::vector<int>& cal_labels);
  VennAbersOutput predict(Real test_score) const;
  Index n_groups() const { return static_cast<Index>(scores_.size()); }

 private:
  // distinct calibration scores with pooled label statistics
  std::vector<Real> scores_;
  std::vector<Real> weights_;
  std::vector<Real> label_sums_;
};

VennAbersOutput venn_abers_predict(const VectorRef& cal_scores,
                                   const std::vector<int>& cal_labels,
                                   Real test_score);

}  // namespace cascade::venn_abers
