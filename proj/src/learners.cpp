#include "cascade/learners.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "cascade/errors.hpp"
#include "internal/csv.hpp"

namespace cascade::learners {

Vector Regressor::predict_rows(const MatrixRef& X) const {
  Vector out(X.rows());
  for (Index i = 0; i < X.rows(); ++i) out[i] = predict(X.row(i).transpose());
  return out;
}

RidgeRegressor fit_ridge(const MatrixRef& features, const VectorRef& targets,
                         Real ridge_penalty) {
  const Index n = features.rows();
  const Index d = features.cols();
  if (n != targets.size()) throw ArgumentError("features/targets size mismatch");
  if (n == 0) throw ArgumentError("fit_ridge: empty training set");
  if (ridge_penalty < 0.0) throw ArgumentError("ridge_penalty must be >= 0");
  if (ridge_penalty == 0.0 && n < d + 1)
    throw NumericalError(
        "fit_ridge: fewer rows than columns + 1 with zero penalty; "
        "set ridge_penalty > 0");

  // Augmented system [X 1]; only the weight block is penalized.
  Matrix gram(d + 1, d + 1);
  gram.topLeftCorner(d, d) = features.transpose() * features;
  gram.topLeftCorner(d, d).diagonal().array() += ridge_penalty;
  gram.block(0, d, d, 1) = features.colwise().sum().transpose();
  gram.block(d, 0, 1, d) = features.colwise().sum();
  gram(d, d) = static_cast<Real>(n);
  Vector rhs(d + 1);
  rhs.head(d) = features.transpose() * targets;
  rhs[d] = targets.sum();

  Vector solution;
  if (ridge_penalty == 0.0) {
    Eigen::ColPivHouseholderQR<Matrix> qr(gram);
    if (qr.rank() < d + 1)
      throw NumericalError(
          "fit_ridge: singular normal equations with zero penalty; "
          "set ridge_penalty > 0");
    solution = qr.solve(rhs);
  } else {
    solution = gram.ldlt().solve(rhs);
  }
  return RidgeRegressor(solution.head(d), solution[d]);
}

Real LogisticScorer::probability(const VectorRef& x) const {
  return 1.0 / (1.0 + std::exp(-score(x)));
}

Vector LogisticScorer::score_rows(const MatrixRef& X) const {
  return ((X * coefficients_).array() + intercept_).matrix();
}

LogisticScorer fit_logistic(const MatrixRef& features, const VectorRef& labels,
                            Real learning_rate, int max_iters, Real tolerance) {
  const Index n = features.rows();
  const Index d = features.cols();
  if (n != labels.size()) throw ArgumentError("features/labels size mismatch");
  if (n == 0) throw ArgumentError("fit_logistic: empty training set");
  for (Index i = 0; i < n; ++i)
    if (labels[i] != 0.0 && labels[i] != 1.0)
      throw ArgumentError("fit_logistic: labels must be 0 or 1");
  const Real positives = labels.sum();
  if (positives == 0.0 || positives == static_cast<Real>(n))
    throw ArgumentError("fit_logistic: both classes must be present");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be > 0");
  if (max_iters < 1) throw ArgumentError("max_iters must be >= 1");

  Vector w = Vector::Zero(d);
  Real b = 0.0;
  int iter = 0;
  const Real inv_n = 1.0 / static_cast<Real>(n);
  for (; iter < max_iters; ++iter) {
    const Vector eta = ((features * w).array() + b).matrix();
    const Vector p = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
    const Vector err = p - labels;
    const Vector grad_w = features.transpose() * err * inv_n;
    const Real grad_b = err.sum() * inv_n;
    const Real grad_norm = std::sqrt(grad_w.squaredNorm() + grad_b * grad_b);
    if (grad_norm < tolerance) break;
    w -= learning_rate * grad_w;
    b -= learning_rate * grad_b;
  }
  return LogisticScorer(std::move(w), b, iter);
}

Real mean_log_loss(const MatrixRef& features, const VectorRef& labels,
                   const LogisticScorer& model) {
  const Index n = features.rows();
  Real total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Real p = std::clamp(model.probability(features.row(i).transpose()),
                              1e-15, 1.0 - 1e-15);
    total += labels[i] == 1.0 ? -std::log(p) : -std::log(1.0 - p);
  }
  return total / static_cast<Real>(n);
}

KnnModel::KnnModel(Matrix features, Vector targets, Index k)
    : features_(std::move(features)), targets_(std::move(targets)), k_(k) {}

Real KnnModel::predict(const VectorRef& x) const {
  const Index n = features_.rows();
  std::vector<std::pair<Real, Index>> dist(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    dist[static_cast<std::size_t>(i)] = {
        (features_.row(i).transpose() - x).squaredNorm(), i};
  std::partial_sort(dist.begin(), dist.begin() + k_, dist.end());
  Real total = 0.0;
  for (Index j = 0; j < k_; ++j)
    total += targets_[dist[static_cast<std::size_t>(j)].second];
  return total / static_cast<Real>(k_);
}

KnnModel fit_knn(const MatrixRef& features, const VectorRef& targets, Index k) {
  if (features.rows() != targets.size())
    throw ArgumentError("features/targets size mismatch");
  if (k < 1) throw ConfigError("fit_knn: k must be >= 1");
  if (k > features.rows())
    throw ConfigError("fit_knn: k = " + std::to_string(k) +
                      " exceeds training size " + std::to_string(features.rows()));
  return KnnModel(features, targets, k);
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Cal: return "cal";
    case Split::Test: return "test";
  }
  return "train";
}

IndexList PredictionTable::indices_of(Split split) const {
  IndexList out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].split == split) out.push_back(static_cast<Index>(i));
  return out;
}

namespace {

Split parse_split(const std::string& tag, std::size_t row) {
  if (tag == "train") return Split::Train;
  if (tag == "cal") return Split::Cal;
  if (tag == "test") return Split::Test;
  throw DataError("row " + std::to_string(row) + ": unknown split tag '" + tag +
                  "' (expected train, cal or test)");
}

Real parse_finite(const std::string& field, std::size_t row,
                  const std::string& column) {
  const Real v = io::parse_real(field, row, column);
  if (!std::isfinite(v))
    throw DataError("row " + std::to_string(row) + ": non-finite value in column " +
                    column);
  return v;
}

}  // namespace

PredictionTable load_predictions(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  std::string line;
  if (!io::read_line(in, line))
    throw DataError("empty predictions file " + path.string());
  if (io::split_line(line) !=
      std::vector<std::string>{"id", "split", "y", "change_label", "reg_pred",
                               "clf_score"})
    throw DataError("bad predictions header in " + path.string() +
                    "; expected id,split,y,change_label,reg_pred,clf_score");

  PredictionTable table;
  std::unordered_set<std::string> seen;
  bool has_cal = false;
  bool has_test = false;
  std::size_t row = 1;
  while (io::read_line(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = io::split_line(line);
    if (fields.size() != 6)
      throw DataError("row " + std::to_string(row) + ": expected 6 columns, got " +
                      std::to_string(fields.size()));
    PredictionRow rec;
    rec.id = fields[0];
    if (rec.id.empty()) throw DataError("row " + std::to_string(row) + ": empty id");
    if (!seen.insert(rec.id).second)
      throw DataError("row " + std::to_string(row) + ": duplicate id '" + rec.id + "'");
    rec.split = parse_split(fields[1], row);
    rec.y = parse_finite(fields[2], row, "y");
    const Real lbl = parse_finite(fields[3], row, "change_label");
    if (lbl != 0.0 && lbl != 1.0)
      throw DataError("row " + std::to_string(row) + ": change_label must be 0 or 1");
    rec.change_label = static_cast<int>(lbl);
    rec.reg_pred = parse_finite(fields[4], row, "reg_pred");
    rec.clf_score = parse_finite(fields[5], row, "clf_score");
    has_cal = has_cal || rec.split == Split::Cal;
    has_test = has_test || rec.split == Split::Test;
    table.rows.push_back(std::move(rec));
  }
  if (!has_cal || !has_test)
    throw DataError("predictions file must contain both cal and test rows");
  return table;
}

void save_predictions(const PredictionTable& table,
                      const std::filesystem::path& path) {
  auto out = io::open_output(path);
  out << "id,split,y,change_label,reg_pred,clf_score\n";
  for (const auto& rec : table.rows) {
    out << rec.id << ',' << to_string(rec.split) << ',' << io::format_real(rec.y)
        << ',' << rec.change_label << ',' << io::format_real(rec.reg_pred) << ','
        << io::format_real(rec.clf_score) << "\n";
  }
}

}  // namespace cascade::learners
