#pragma once

#include <Eigen/Core>

namespace ropebench {

using Index = Eigen::Index;

// All numerics run in double precision. Matrices are row-major: row t is the
// feature vector of frame t, so a [T x d] matrix is a sequence of T frames.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Binds whole matrices and row-major blocks (e.g. per-head column slices)
// without copying.
using MatrixRef = Eigen::Ref<const Matrix, 0, Eigen::OuterStride<>>;
using VectorRef = Eigen::Ref<const Vector>;

// Additive mask value for disallowed attention entries. Large enough that
// exp(x - rowmax) underflows to exactly 0.0 for any finite logit.
inline constexpr double kMaskFill = -1e30;

}  // namespace ropebench
