#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace cascade {

using Real = double;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using IndexList = std::vector<Index>;

// Read-only views; bind Eigen expressions, blocks and maps without copying.
using VectorRef = Eigen::Ref<const Vector>;
using MatrixRef = Eigen::Ref<const Matrix>;

}  // namespace cascade
