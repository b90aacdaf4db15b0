#include "ropebench/posemb.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ropebench/init.hpp"

namespace ropebench {

namespace {

void require_even(const char* op, Index dim) {
  if (dim < 2 || dim % 2 != 0) {
    throw std::invalid_argument(std::string(op) +
                                ": dimension must be even and positive, got " +
                                std::to_string(dim));
  }
}

}  // namespace

std::vector<double> rope_angles(Index head_dim, double base) {
  require_even("rope_angles", head_dim);
  if (base <= 0.0) {
    throw std::invalid_argument("rope_angles: base must be positive, got " +
                                std::to_string(base));
  }
  std::vector<double> angles(static_cast<size_t>(head_dim / 2));
  for (Index i = 0; i < head_dim / 2; ++i) {
    angles[static_cast<size_t>(i)] =
        std::pow(base, -2.0 * static_cast<double>(i) /
                           static_cast<double>(head_dim));
  }
  return angles;
}

RoPECache build_rope_cache(Index max_len, Index head_dim, double base) {
  if (max_len < 1) {
    throw std::invalid_argument("build_rope_cache: max_len must be >= 1, got " +
                                std::to_string(max_len));
  }
  const std::vector<double> angles = rope_angles(head_dim, base);
  RoPECache cache;
  cache.max_len = max_len;
  cache.head_dim = head_dim;
  cache.base = base;
  cache.cos_table.resize(max_len, head_dim);
  cache.sin_table.resize(max_len, head_dim);
  for (Index t = 0; t < max_len; ++t) {
    for (Index i = 0; i < head_dim / 2; ++i) {
      const double angle =
          static_cast<double>(t) * angles[static_cast<size_t>(i)];
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      cache.cos_table(t, 2 * i) = c;
      cache.cos_table(t, 2 * i + 1) = c;
      cache.sin_table(t, 2 * i) = s;
      cache.sin_table(t, 2 * i + 1) = s;
    }
  }
  return cache;
}

namespace {

// Shared by forward and backward: backward is the same rotation with the
// sine sign flipped.
void apply_rotation(const MatrixRef& x, Index start_pos, const RoPECache& cache,
                    double sin_sign, Matrix& out) {
  if (x.cols() != cache.head_dim) {
    throw std::invalid_argument(
        "rope_apply: input width " + std::to_string(x.cols()) +
        " does not match cache head_dim " + std::to_string(cache.head_dim));
  }
  if (start_pos < 0 || start_pos + x.rows() > cache.max_len) {
    throw std::out_of_range(
        "rope_apply: positions " + std::to_string(start_pos) + ".." +
        std::to_string(start_pos + x.rows() - 1) + " exceed cache max_len " +
        std::to_string(cache.max_len));
  }
  const Index rows = x.rows();
  const Index d = x.cols();
  out.resize(rows, d);
  for (Index t = 0; t < rows; ++t) {
    const double* cos_row = cache.cos_table.row(start_pos + t).data();
    const double* sin_row = cache.sin_table.row(start_pos + t).data();
    const auto xr = x.row(t);
    auto or_ = out.row(t);
    for (Index j = 0; j < d; j += 2) {
      const double c = cos_row[j];
      const double s = sin_sign * sin_row[j];
      const double x0 = xr(j);
      const double x1 = xr(j + 1);
      or_(j) = x0 * c - x1 * s;
      or_(j + 1) = x1 * c + x0 * s;
    }
  }
}

}  // namespace

Matrix rope_apply(const MatrixRef& x, Index start_pos, const RoPECache& cache) {
  Matrix out;
  apply_rotation(x, start_pos, cache, 1.0, out);
  return out;
}

void rope_apply_into(const MatrixRef& x, Index start_pos,
                     const RoPECache& cache, Matrix& out) {
  apply_rotation(x, start_pos, cache, 1.0, out);
}

Matrix rope_apply_backward(const MatrixRef& grad_out, Index start_pos,
                           const RoPECache& cache) {
  Matrix out;
  apply_rotation(grad_out, start_pos, cache, -1.0, out);
  return out;
}

RotationMatrix rope_dense_matrix(Index t, Index head_dim, double base) {
  if (t < 0) {
    throw std::invalid_argument("rope_dense_matrix: position must be >= 0");
  }
  const std::vector<double> angles = rope_angles(head_dim, base);
  RotationMatrix r;
  r.t = t;
  r.matrix = Matrix::Zero(head_dim, head_dim);
  for (Index i = 0; i < head_dim / 2; ++i) {
    const double angle =
        static_cast<double>(t) * angles[static_cast<size_t>(i)];
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    r.matrix(2 * i, 2 * i) = c;
    r.matrix(2 * i, 2 * i + 1) = -s;
    r.matrix(2 * i + 1, 2 * i) = s;
    r.matrix(2 * i + 1, 2 * i + 1) = c;
  }
  return r;
}

Matrix sinusoidal_absolute(Index T, Index d_model, Index start_pos) {
  require_even("sinusoidal_absolute", d_model);
  const std::vector<double> angles = rope_angles(d_model, 10000.0);
  Matrix table(T, d_model);
  for (Index t = 0; t < T; ++t) {
    const double pos = static_cast<double>(start_pos + t);
    for (Index i = 0; i < d_model / 2; ++i) {
      const double angle = pos * angles[static_cast<size_t>(i)];
      table(t, 2 * i) = std::sin(angle);
      table(t, 2 * i + 1) = std::cos(angle);
    }
  }
  return table;
}

Matrix relpos_table(Index T, Index d_model) {
  require_even("relpos_table", d_model);
  const std::vector<double> angles = rope_angles(d_model, 10000.0);
  Matrix table(2 * T - 1, d_model);
  for (Index row = 0; row < 2 * T - 1; ++row) {
    const double offset = static_cast<double>(T - 1 - row);
    for (Index i = 0; i < d_model / 2; ++i) {
      const double angle = offset * angles[static_cast<size_t>(i)];
      table(row, 2 * i) = std::sin(angle);
      table(row, 2 * i + 1) = std::cos(angle);
    }
  }
  return table;
}

RelPosParams init_relpos_params(Index max_len, Index d_model, Index n_heads,
                                std::mt19937_64& rng) {
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("init_relpos_params: d_model " +
                                std::to_string(d_model) +
                                " not divisible by n_heads " +
                                std::to_string(n_heads));
  }
  RelPosParams p;
  p.max_len = max_len;
  p.pos_emb = relpos_table(max_len, d_model);
  const Index d_head = d_model / n_heads;
  p.u_bias = fan_in_uniform(n_heads, d_head, d_head, rng);
  p.v_bias = fan_in_uniform(n_heads, d_head, d_head, rng);
  p.pos_proj = fan_in_uniform(d_model, d_model, d_model, rng);
  return p;
}

}  // namespace ropebench
