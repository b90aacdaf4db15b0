#include "ropebench/tensor_ops.hpp"

#include <stdexcept>
#include <string>

namespace ropebench {

namespace {

std::string shape_str(const MatrixRef& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const char* op, const MatrixRef& a, const MatrixRef& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch: " +
                                shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace

Matrix matmul(const MatrixRef& a, const MatrixRef& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                shape_str(a) + " * " + shape_str(b));
  }
  return a * b;
}

MatmulGrads matmul_backward(const MatrixRef& grad_out, const MatrixRef& a,
                            const MatrixRef& b) {
  MatmulGrads g;
  g.da.noalias() = grad_out * b.transpose();
  g.db.noalias() = a.transpose() * grad_out;
  return g;
}

Matrix softmax_rows(const MatrixRef& x) {
  Vector row_max = x.rowwise().maxCoeff();
  Matrix y = (x.array().colwise() - row_max.array()).exp();
  Vector row_sum = y.rowwise().sum();
  y.array().colwise() /= row_sum.array();
  return y;
}

Matrix softmax_rows_backward(const MatrixRef& grad_out, const MatrixRef& y) {
  Vector dot = (grad_out.array() * y.array()).rowwise().sum();
  return y.array() * (grad_out.array().colwise() - dot.array());
}

Matrix layernorm(const MatrixRef& x, const VectorRef& gain,
                 const VectorRef& bias, double eps) {
  if (gain.size() != x.cols() || bias.size() != x.cols()) {
    throw std::invalid_argument(
        "layernorm: gain/bias length " + std::to_string(gain.size()) + "/" +
        std::to_string(bias.size()) + " does not match width " +
        std::to_string(x.cols()));
  }
  Vector mu = x.rowwise().mean();
  Matrix centered = x.array().colwise() - mu.array();
  Vector inv_std =
      (centered.array().square().rowwise().mean() + eps).rsqrt();
  Matrix out = centered.array().colwise() * inv_std.array();
  out = out.array().rowwise() * gain.transpose().array();
  out.array().rowwise() += bias.transpose().array();
  return out;
}

LayerNormGrads layernorm_backward(const MatrixRef& grad_out, const MatrixRef& x,
                                  const VectorRef& gain, double eps) {
  Vector mu = x.rowwise().mean();
  Matrix centered = x.array().colwise() - mu.array();
  Vector inv_std =
      (centered.array().square().rowwise().mean() + eps).rsqrt();
  Matrix xhat = centered.array().colwise() * inv_std.array();

  LayerNormGrads g;
  g.dgain = (grad_out.array() * xhat.array()).colwise().sum();
  g.dbias = grad_out.colwise().sum();

  Matrix dxhat = grad_out.array().rowwise() * gain.transpose().array();
  Vector m1 = dxhat.rowwise().mean();
  Vector m2 = (dxhat.array() * xhat.array()).rowwise().mean();
  g.dx = ((dxhat.array().colwise() - m1.array()) -
          xhat.array().colwise() * m2.array())
             .colwise() *
         inv_std.array();
  return g;
}

Matrix add(const MatrixRef& a, const MatrixRef& b) {
  require_same_shape("add", a, b);
  return a + b;
}

std::pair<Matrix, Matrix> add_backward(const MatrixRef& grad_out) {
  return {grad_out, grad_out};
}

Matrix mul(const MatrixRef& a, const MatrixRef& b) {
  require_same_shape("mul", a, b);
  return a.array() * b.array();
}

std::pair<Matrix, Matrix> mul_backward(const MatrixRef& grad_out,
                                       const MatrixRef& a, const MatrixRef& b) {
  return {grad_out.array() * b.array(), grad_out.array() * a.array()};
}

Matrix scale(const MatrixRef& x, double c) { return x * c; }

Matrix scale_backward(const MatrixRef& grad_out, double c) {
  return grad_out * c;
}

namespace {
inline Matrix sigmoid(const MatrixRef& x) {
  return ((-x.array()).exp() + 1.0).inverse();
}
}  // namespace

Matrix swish(const MatrixRef& x) { return x.array() * sigmoid(x).array(); }

Matrix swish_backward(const MatrixRef& grad_out, const MatrixRef& x) {
  Matrix s = sigmoid(x);
  return grad_out.array() *
         (s.array() * (1.0 + x.array() * (1.0 - s.array())));
}

Matrix glu_split(const MatrixRef& x) {
  if (x.cols() % 2 != 0) {
    throw std::invalid_argument("glu_split: needs an even number of columns, got " +
                                shape_str(x));
  }
  const Index d = x.cols() / 2;
  Matrix gate = sigmoid(x.rightCols(d));
  return x.leftCols(d).array() * gate.array();
}

Matrix glu_split_backward(const MatrixRef& grad_out, const MatrixRef& x) {
  const Index d = x.cols() / 2;
  Matrix gate = sigmoid(x.rightCols(d));
  Matrix dx(x.rows(), x.cols());
  dx.leftCols(d) = grad_out.array() * gate.array();
  dx.rightCols(d) = grad_out.array() * x.leftCols(d).array() * gate.array() *
                    (1.0 - gate.array());
  return dx;
}

}  // namespace ropebench
