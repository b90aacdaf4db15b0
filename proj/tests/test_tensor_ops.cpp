#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ropebench/gradcheck.hpp"
#include "ropebench/init.hpp"
#include "ropebench/tensor_ops.hpp"
#include "ropebench/types.hpp"

using namespace ropebench;

namespace {

Matrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return uniform_matrix(rows, cols, rng);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

// Gradient check for one input of an op: f(x) = sum(w .* op(x)) so the
// analytic gradient is the op's backward evaluated at upstream gradient w.
void expect_grad(const std::string& name, const ScalarFn& f,
                 const Matrix& analytic, const Matrix& x) {
  const GradReport report = check_gradient(name, f, analytic, x, 1e-5);
  INFO(report.op, " max_rel_err=", report.max_rel_err);
  CHECK(report.pass);
}

}  // namespace

TEST_CASE("matmul identity leaves the other factor unchanged") {
  const Matrix m = random_matrix(3, 3, 11);
  const Matrix id = Matrix::Identity(3, 3);
  CHECK(max_abs_diff(matmul(id, m), m) == 0.0);
  CHECK(max_abs_diff(matmul(m, id), m) == 0.0);
}

TEST_CASE("matmul hand-computed 2x2 by 2x1") {
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  Matrix b(2, 1);
  b << 0, 1;
  const Matrix c = matmul(a, b);
  CHECK(c(0, 0) == 2.0);
  CHECK(c(1, 0) == 4.0);
}

TEST_CASE("matmul of all-ones 1xk by kx1 sums k") {
  const Matrix a = Matrix::Ones(1, 5);
  const Matrix b = Matrix::Ones(5, 1);
  CHECK(matmul(a, b)(0, 0) == 5.0);
}

TEST_CASE("matmul associativity on random 4x4 chains") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Matrix a = random_matrix(4, 4, 100 + seed);
    const Matrix b = random_matrix(4, 4, 200 + seed);
    const Matrix c = random_matrix(4, 4, 300 + seed);
    CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) <
          1e-9);
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions naming both shapes") {
  const Matrix a = Matrix::Zero(2, 3);
  const Matrix b = Matrix::Zero(4, 2);
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("2x3"), std::invalid_argument);
  try {
    matmul(a, b);
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("4x2") != std::string::npos);
  }
}

TEST_CASE("matmul backward matches finite differences for both factors") {
  const Matrix a = random_matrix(3, 4, 1);
  const Matrix b = random_matrix(4, 2, 2);
  const Matrix w = random_matrix(3, 2, 3);  // upstream gradient
  const MatmulGrads grads = matmul_backward(w, a, b);
  expect_grad(
      "matmul/a",
      [&](const Matrix& x) { return (w.array() * matmul(x, b).array()).sum(); },
      grads.da, a);
  expect_grad(
      "matmul/b",
      [&](const Matrix& x) { return (w.array() * matmul(a, x).array()).sum(); },
      grads.db, b);
}

TEST_CASE("softmax of a constant row is uniform") {
  Matrix x(1, 3);
  x << 0, 0, 0;
  const Matrix y = softmax_rows(x);
  for (Index j = 0; j < 3; ++j) CHECK(y(0, j) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("softmax sends a mask-filled entry to exactly zero") {
  Matrix x(1, 2);
  x << 1.5, 1.5 + kMaskFill;
  const Matrix y = softmax_rows(x);
  CHECK(y(0, 0) == 1.0);
  CHECK(y(0, 1) == 0.0);  // exp(-1e30) underflows to zero exactly
}

TEST_CASE("softmax of [1,2,3] matches direct evaluation") {
  Matrix x(1, 3);
  x << 1, 2, 3;
  const Matrix y = softmax_rows(x);
  // e / (e + e^2 + e^3) and cyclic, evaluated independently.
  CHECK(y(0, 0) == doctest::Approx(0.090030573170380462).epsilon(1e-14));
  CHECK(y(0, 1) == doctest::Approx(0.24472847105479764).epsilon(1e-14));
  CHECK(y(0, 2) == doctest::Approx(0.66524095577482178).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one within 1e-12") {
  const Matrix x = 5.0 * random_matrix(6, 7, 42);
  const Matrix y = softmax_rows(x);
  for (Index t = 0; t < y.rows(); ++t) {
    CHECK(std::abs(y.row(t).sum() - 1.0) < 1e-12);
    CHECK(y.row(t).minCoeff() >= 0.0);
  }
}

TEST_CASE("softmax is invariant to a per-row shift") {
  // Exact in real arithmetic; the shift perturbs every exp argument, so in
  // floating point the results agree only to rounding.
  const Matrix x = random_matrix(3, 5, 7);
  Matrix shifted = x;
  shifted.array() += 123.0;
  CHECK(max_abs_diff(softmax_rows(x), softmax_rows(shifted)) < 1e-12);
}

TEST_CASE("softmax backward matches finite differences") {
  const Matrix x = random_matrix(4, 4, 5);
  const Matrix w = random_matrix(4, 4, 6);
  const Matrix y = softmax_rows(x);
  expect_grad(
      "softmax_rows",
      [&](const Matrix& in) {
        return (w.array() * softmax_rows(in).array()).sum();
      },
      softmax_rows_backward(w, y), x);
}

TEST_CASE("layernorm maps a constant row to zero") {
  const Matrix x = Matrix::Constant(2, 4, 3.25);
  const Vector gain = Vector::Ones(4);
  const Vector bias = Vector::Zero(4);
  const Matrix y = layernorm(x, gain, bias, 1e-5);
  CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("layernorm fixes a zero-mean unit-variance row as eps vanishes") {
  Matrix x(1, 2);
  x << 1, -1;
  const Vector gain = Vector::Ones(2);
  const Vector bias = Vector::Zero(2);
  const Matrix y = layernorm(x, gain, bias, 0.0);
  CHECK(y(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(y(0, 1) == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("layernorm with zero gain broadcasts the bias") {
  const Matrix x = random_matrix(3, 4, 9);
  const Vector gain = Vector::Zero(4);
  Vector bias(4);
  bias << 1, 2, 3, 4;
  const Matrix y = layernorm(x, gain, bias, 1e-5);
  for (Index t = 0; t < 3; ++t) {
    for (Index j = 0; j < 4; ++j) CHECK(y(t, j) == bias(j));
  }
}

TEST_CASE("layernorm output rows have zero mean and unit variance") {
  const Matrix x = random_matrix(4, 8, 10);
  const Vector gain = Vector::Ones(8);
  const Vector bias = Vector::Zero(8);
  const Matrix y = layernorm(x, gain, bias, 0.0);
  for (Index t = 0; t < 4; ++t) {
    CHECK(std::abs(y.row(t).mean()) < 1e-12);
    CHECK(std::abs(y.row(t).squaredNorm() / 8.0 - 1.0) < 1e-12);
  }
}

TEST_CASE("layernorm backward matches finite differences for x, gain, bias") {
  const Matrix x = random_matrix(3, 5, 12);
  Vector gain(5), bias(5);
  {
    std::mt19937_64 rng(13);
    gain = uniform_matrix(1, 5, rng).row(0);
    bias = uniform_matrix(1, 5, rng).row(0);
  }
  const Matrix w = random_matrix(3, 5, 14);
  const double eps = 1e-5;
  const LayerNormGrads grads = layernorm_backward(w, x, gain, eps);

  expect_grad(
      "layernorm/x",
      [&](const Matrix& in) {
        return (w.array() * layernorm(in, gain, bias, eps).array()).sum();
      },
      grads.dx, x);
  // Gain and bias are vectors; probe them through 1-row matrices.
  expect_grad(
      "layernorm/gain",
      [&](const Matrix& g) {
        return (w.array() * layernorm(x, g.row(0), bias, eps).array()).sum();
      },
      grads.dgain.transpose(), gain.transpose());
  expect_grad(
      "layernorm/bias",
      [&](const Matrix& b) {
        return (w.array() * layernorm(x, gain, b.row(0), eps).array()).sum();
      },
      grads.dbias.transpose(), bias.transpose());
}

TEST_CASE("add and scale identities") {
  const Matrix x = random_matrix(3, 3, 15);
  CHECK(max_abs_diff(add(x, Matrix::Zero(3, 3)), x) == 0.0);
  CHECK(max_abs_diff(scale(x, 1.0), x) == 0.0);
}

TEST_CASE("add rejects mismatched shapes") {
  CHECK_THROWS_AS(add(Matrix::Zero(2, 3), Matrix::Zero(3, 2)),
                  std::invalid_argument);
  CHECK_THROWS_AS(mul(Matrix::Zero(2, 3), Matrix::Zero(2, 2)),
                  std::invalid_argument);
}

TEST_CASE("elementwise backward passes match finite differences") {
  const Matrix a = random_matrix(3, 4, 16);
  const Matrix b = random_matrix(3, 4, 17);
  const Matrix w = random_matrix(3, 4, 18);

  const auto [da, db] = add_backward(w);
  expect_grad(
      "add/a",
      [&](const Matrix& x) { return (w.array() * add(x, b).array()).sum(); },
      da, a);
  expect_grad(
      "add/b",
      [&](const Matrix& x) { return (w.array() * add(a, x).array()).sum(); },
      db, b);

  const auto [ma, mb] = mul_backward(w, a, b);
  expect_grad(
      "mul/a",
      [&](const Matrix& x) { return (w.array() * mul(x, b).array()).sum(); },
      ma, a);
  expect_grad(
      "mul/b",
      [&](const Matrix& x) { return (w.array() * mul(a, x).array()).sum(); },
      mb, b);

  expect_grad(
      "scale",
      [&](const Matrix& x) {
        return (w.array() * scale(x, -2.5).array()).sum();
      },
      scale_backward(w, -2.5), a);
}

TEST_CASE("swish fixes zero and matches x*sigmoid(x)") {
  Matrix x(1, 3);
  x << 0.0, 1.0, -2.0;
  const Matrix y = swish(x);
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK(y(0, 2) == doctest::Approx(-2.0 / (1.0 + std::exp(2.0))));
}

TEST_CASE("swish backward matches finite differences") {
  const Matrix x = 2.0 * random_matrix(3, 4, 19);
  const Matrix w = random_matrix(3, 4, 20);
  expect_grad(
      "swish",
      [&](const Matrix& in) { return (w.array() * swish(in).array()).sum(); },
      swish_backward(w, x), x);
}

TEST_CASE("glu gates the left half by the sigmoid of the right half") {
  Matrix x(2, 4);
  x << 1, 2, 0, 10,  //
      -3, 4, -10, 0;
  const Matrix y = glu_split(x);
  CHECK(y.rows() == 2);
  CHECK(y.cols() == 2);
  CHECK(y(0, 0) == doctest::Approx(1.0 * 0.5));  // sigmoid(0) = 1/2
  CHECK(y(0, 1) == doctest::Approx(2.0 / (1.0 + std::exp(-10.0))));
  CHECK(y(1, 0) == doctest::Approx(-3.0 / (1.0 + std::exp(10.0))));
  CHECK(y(1, 1) == doctest::Approx(4.0 * 0.5));
}

TEST_CASE("glu rejects odd widths") {
  CHECK_THROWS_AS(glu_split(Matrix::Zero(2, 3)), std::invalid_argument);
}

TEST_CASE("glu backward matches finite differences") {
  const Matrix x = random_matrix(3, 6, 21);
  const Matrix w = random_matrix(3, 3, 22);
  expect_grad(
      "glu_split",
      [&](const Matrix& in) {
        return (w.array() * glu_split(in).array()).sum();
      },
      glu_split_backward(w, x), x);
}

TEST_CASE("operations keep finite inputs finite") {
  const Matrix x = 10.0 * random_matrix(4, 4, 23);
  CHECK(softmax_rows(x).allFinite());
  CHECK(swish(x).allFinite());
  CHECK(layernorm(x, Vector::Ones(4), Vector::Zero(4), 1e-5).allFinite());
}
