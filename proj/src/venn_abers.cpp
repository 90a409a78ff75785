#include "cascade/venn_abers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cascade/errors.hpp"

namespace cascade::venn_abers {

namespace {

struct Block {
  Real weight_sum;
  Real value_sum;  // sum of weight * value
  Index count;
  Real mean() const { return value_sum / weight_sum; }
};

// Stack-based PAVA over (value, weight) items; returns one block per pooled
// level set, in order.
std::vector<Block> pool(const VectorRef& values, const VectorRef& weights) {
  std::vector<Block> stack;
  stack.reserve(static_cast<std::size_t>(values.size()));
  for (Index i = 0; i < values.size(); ++i) {
    stack.push_back({weights[i], weights[i] * values[i], 1});
    while (stack.size() >= 2 &&
           stack[stack.size() - 1].mean() < stack[stack.size() - 2].mean()) {
      Block top = stack.back();
      stack.pop_back();
      stack.back().weight_sum += top.weight_sum;
      stack.back().value_sum += top.value_sum;
      stack.back().count += top.count;
    }
  }
  return stack;
}

}  // namespace

Vector pava(const VectorRef& values, const VectorRef& weights) {
  if (values.size() == 0) throw ArgumentError("pava: empty input");
  if (values.size() != weights.size())
    throw ArgumentError("pava: values/weights length mismatch");
  if ((weights.array() <= 0.0).any())
    throw ArgumentError("pava: weights must be positive");

  const auto blocks = pool(values, weights);
  Vector fitted(values.size());
  Index pos = 0;
  for (const auto& block : blocks) {
    fitted.segment(pos, block.count).setConstant(block.mean());
    pos += block.count;
  }
  return fitted;
}

Vector pava(const VectorRef& values) {
  return pava(values, Vector::Ones(values.size()));
}

IsotonicFit fit_isotonic(const VectorRef& scores, const VectorRef& targets) {
  if (scores.size() == 0) throw ArgumentError("fit_isotonic: empty input");
  if (scores.size() != targets.size())
    throw ArgumentError("fit_isotonic: scores/targets length mismatch");

  IndexList order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(),
            [&](Index a, Index b) { return scores[a] < scores[b]; });

  // pool ties into single weighted items
  std::vector<Real> distinct, means, weights;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    Real sum = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      sum += targets[order[j]];
      ++j;
    }
    distinct.push_back(scores[order[i]]);
    means.push_back(sum / static_cast<Real>(j - i));
    weights.push_back(static_cast<Real>(j - i));
    i = j;
  }

  const Index m = static_cast<Index>(distinct.size());
  IsotonicFit fit;
  fit.breakpoints = Eigen::Map<const Vector>(distinct.data(), m);
  fit.fitted_values = pava(Eigen::Map<const Vector>(means.data(), m),
                           Eigen::Map<const Vector>(weights.data(), m));
  return fit;
}

Real uncertainty_score(Real p0, Real p1) {
  if (!(p0 >= 0.0 && p0 <= 1.0 && p1 >= 0.0 && p1 <= 1.0))
    throw ArgumentError("uncertainty_score: p0, p1 must lie in [0,1]");
  if (p0 > p1) throw ArgumentError("uncertainty_score: p0 > p1");
  return p1 - p0;
}

VennAbersCalibrator::VennAbersCalibrator(const VectorRef& cal_scores,
                                         const std::vector<int>& cal_labels) {
  if (cal_scores.size() == 0)
    throw ArgumentError("venn_abers: empty calibration set");
  if (cal_scores.size() != static_cast<Index>(cal_labels.size()))
    throw ArgumentError("venn_abers: scores/labels length mismatch");
  for (int label : cal_labels)
    if (label != 0 && label != 1)
      throw ArgumentError("venn_abers: labels must be 0 or 1");

  IndexList order(static_cast<std::size_t>(cal_scores.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(),
            [&](Index a, Index b) { return cal_scores[a] < cal_scores[b]; });
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    Real positives = 0.0;
    while (j < order.size() && cal_scores[order[j]] == cal_scores[order[i]]) {
      positives += cal_labels[static_cast<std::size_t>(order[j])];
      ++j;
    }
    scores_.push_back(cal_scores[order[i]]);
    weights_.push_back(static_cast<Real>(j - i));
    label_sums_.push_back(positives);
    i = j;
  }
}

VennAbersOutput VennAbersCalibrator::predict(Real test_score) const {
  const std::size_t m = scores_.size();
  const auto at = static_cast<std::size_t>(
      std::lower_bound(scores_.begin(), scores_.end(), test_score) -
      scores_.begin());
  const bool tie = at < m && scores_[at] == test_score;
  const std::size_t n_groups = tie ? m : m + 1;

  Vector values(static_cast<Index>(n_groups));
  Vector weights(static_cast<Index>(n_groups));
  auto fill = [&](int test_label) {
    for (std::size_t g = 0; g < n_groups; ++g) {
      Real w, s;
      if (tie) {
        w = weights_[g];
        s = label_sums_[g];
        if (g == at) {
          w += 1.0;
          s += test_label;
        }
      } else if (g == at) {
        w = 1.0;
        s = test_label;
      } else {
        const std::size_t src = g < at ? g : g - 1;
        w = weights_[src];
        s = label_sums_[src];
      }
      values[static_cast<Index>(g)] = s / w;
      weights[static_cast<Index>(g)] = w;
    }
  };

  auto fitted_at = [&](int test_label) {
    fill(test_label);
    const Vector fitted = pava(values, weights);
    // binary labels imply [0,1]; the clamp guards against float drift
    return std::clamp(fitted[static_cast<Index>(at)], 0.0, 1.0);
  };

  VennAbersOutput out;
  out.p0 = fitted_at(0);
  out.p1 = fitted_at(1);
  if (out.p0 > out.p1) {  // only reachable through rounding noise
    const Real mid = 0.5 * (out.p0 + out.p1);
    out.p0 = mid;
    out.p1 = mid;
  }
  out.u = out.p1 - out.p0;
  return out;
}

VennAbersOutput venn_abers_predict(const VectorRef& cal_scores,
                                   const std::vector<int>& cal_labels,
                                   Real test_score) {
  return VennAbersCalibrator(cal_scores, cal_labels).predict(test_score);
}

}  // namespace cascade::venn_abers
