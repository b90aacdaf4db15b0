#pragma once

#include <utility>

#include "ropebench/types.hpp"

// Dense primitives with hand-written backward passes. Forward functions are
// pure; each backward takes the upstream gradient plus whatever forward
// values it needs and returns gradients of the same shapes as the inputs.

namespace ropebench {

Matrix matmul(const MatrixRef& a, const MatrixRef& b);

struct MatmulGrads {
  Matrix da, db;
};
MatmulGrads matmul_backward(const MatrixRef& grad_out, const MatrixRef& a,
                            const MatrixRef& b);

// Row-wise softmax, stabilized by per-row max subtraction.
Matrix softmax_rows(const MatrixRef& x);
// Backward in terms of the forward output y = softmax_rows(x).
Matrix softmax_rows_backward(const MatrixRef& grad_out, const MatrixRef& y);

// Per-row normalization to zero mean / unit variance (biased variance),
// followed by the affine map gain * xhat + bias.
Matrix layernorm(const MatrixRef& x, const VectorRef& gain,
                 const VectorRef& bias, double eps);

struct LayerNormGrads {
  Matrix dx;
  Vector dgain, dbias;
};
LayerNormGrads layernorm_backward(const MatrixRef& grad_out, const MatrixRef& x,
                                  const VectorRef& gain, double eps);

Matrix add(const MatrixRef& a, const MatrixRef& b);
std::pair<Matrix, Matrix> add_backward(const MatrixRef& grad_out);

Matrix mul(const MatrixRef& a, const MatrixRef& b);
std::pair<Matrix, Matrix> mul_backward(const MatrixRef& grad_out,
                                       const MatrixRef& a, const MatrixRef& b);

Matrix scale(const MatrixRef& x, double c);
Matrix scale_backward(const MatrixRef& grad_out, double c);

// x * sigmoid(x)
Matrix swish(const MatrixRef& x);
Matrix swish_backward(const MatrixRef& grad_out, const MatrixRef& x);

// Gated linear unit over a [T x 2d] input: left half gated by the sigmoid of
// the right half, yielding [T x d].
Matrix glu_split(const MatrixRef& x);
Matrix glu_split_backward(const MatrixRef& grad_out, const MatrixRef& x);

}  // namespace ropebench
