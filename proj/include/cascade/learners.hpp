#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cascade/types.hpp"

namespace cascade::learners {

class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual Real predict(const VectorRef& x) const = 0;
  Vector predict_rows(const MatrixRef& X) const;
};

// Factory used by refit-based conformal methods (CV+, J+aB) to train models
// on subsets of the training data.
using RegressorFactory =
    std::function<std::unique_ptr<Regressor>(const MatrixRef&, const VectorRef&)>;

class RidgeRegressor final : public Regressor {
 public:
  RidgeRegressor(Vector coefficients, Real intercept)
      : coefficients_(std::move(coefficients)), intercept_(intercept) {}
  Real predict(const VectorRef& x) const override {
    return coefficients_.dot(x) + intercept_;
  }
  const Vector& coefficients() const { return coefficients_; }
  Real intercept() const { return intercept_; }

 private:
  Vector coefficients_;
  Real intercept_;
};

// Closed-form normal-equations solve of squared error + penalty * ||w||^2,
// intercept unpenalized.
RidgeRegressor fit_ridge(const MatrixRef& features, const VectorRef& targets,
                         Real ridge_penalty);

class LogisticScorer {
 public:
  LogisticScorer(Vector coefficients, Real intercept, int iterations)
      : coefficients_(std::move(coefficients)),
        intercept_(intercept),
        iterations_(iterations) {}
  // Pre-sigmoid monotone score w.x + b; higher = more likely positive.
  Real score(const VectorRef& x) const { return coefficients_.dot(x) + intercept_; }
  Real probability(const VectorRef& x) const;
  Vector score_rows(const MatrixRef& X) const;
  const Vector& coefficients() const { return coefficients_; }
  Real intercept() const { return intercept_; }
  int iterations() const { return iterations_; }

 private:
  Vector coefficients_;
  Real intercept_;
  int iterations_;
};

// Full-batch gradient descent on mean log-loss until the gradient norm drops
// below tolerance or max_iters is reached.
LogisticScorer fit_logistic(const MatrixRef& features, const VectorRef& labels,
                            Real learning_rate = 1.0, int max_iters = 500,
                            Real tolerance = 1e-8);

Real mean_log_loss(const MatrixRef& features, const VectorRef& labels,
                   const LogisticScorer& model);

class KnnModel final : public Regressor {
 public:
  KnnModel(Matrix features, Vector targets, Index k);
  // Mean target of the k nearest training points under Euclidean distance;
  // distance ties broken by lower row index.
  Real predict(const VectorRef& x) const override;
  Index k() const { return k_; }

 private:
  Matrix features_;
  Vector targets_;
  Index k_;
};

KnnModel fit_knn(const MatrixRef& features, const VectorRef& targets, Index k);

enum class Split { Train, Cal, Test };
std::string to_string(Split split);

struct PredictionRow {
  std::string id;
  Split split = Split::Train;
  Real y = 0.0;
  int change_label = 0;
  Real reg_pred = 0.0;   // f_hat(x)
  Real clf_score = 0.0;  // monotone score, higher = more likely change
};

struct PredictionTable {
  std::vector<PredictionRow> rows;
  IndexList indices_of(Split split) const;
};

// Prediction CSV contract: header `id,split,y,change_label,reg_pred,clf_score`;
// split in {train,cal,test}; '.' decimal point; NaN/Inf rejected.
PredictionTable load_predictions(const std::filesystem::path& path);
void save_predictions(const PredictionTable& table,
                      const std::filesystem::path& path);

}  // namespace cascade::learners
