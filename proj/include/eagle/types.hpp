#pragma once

#include <Eigen/Dense>

namespace eagle {

using Index = Eigen::Index;

// Row-major dense storage: one patch (or token) per row, so a single row can
// be handed around as a contiguous view.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixF = RowMatrix<float>;
using MatrixD = RowMatrix<double>;
using VectorF = Eigen::VectorXf;
using VectorD = Eigen::VectorXd;

}  // namespace eagle
