#pragma once

#include <random>
#include <vector>

#include "ropebench/types.hpp"

// The three positional-embedding schemes.
//
// Rotary: each consecutive dimension pair (2i, 2i+1) of a query/key vector at
// position t is rotated in its plane by t * theta_i, with
// theta_i = base^(-2(i-1)/d) (1-indexed pairs, default base 10000). The
// efficient kernel (rope_apply) does this with two elementwise products per
// entry from precomputed tables; rope_dense_matrix builds the explicit
// block-diagonal rotation matrix and exists purely as an independent oracle.
//
// Absolute: the classic interleaved sin/cos table, added to the input.
//
// Relative: Transformer-XL style bias terms plus a projected table of
// relative-offset embeddings (see attention.hpp for how they enter logits).

namespace ropebench {

// theta_i = base^(-2(i-1)/d) for i = 1..d/2; strictly decreasing, theta_1 = 1.
std::vector<double> rope_angles(Index head_dim, double base);

struct RoPECache {
  Index max_len = 0;
  Index head_dim = 0;
  double base = 0.0;
  // [max_len x head_dim]; columns 2i and 2i+1 both hold cos(t*theta_i)
  // (resp. sin), so the apply kernel reads them without de-interleaving.
  Matrix cos_table;
  Matrix sin_table;
};

RoPECache build_rope_cache(Index max_len, Index head_dim, double base = 10000.0);

// Rotates row t of x by the rotation for absolute position start_pos + t.
// Preserves the Euclidean norm of every row.
Matrix rope_apply(const MatrixRef& x, Index start_pos, const RoPECache& cache);

// Same rotation written into a caller-provided buffer (resized as needed).
// Lets hot loops and timing harnesses reuse storage instead of allocating
// a fresh matrix per call.
void rope_apply_into(const MatrixRef& x, Index start_pos,
                     const RoPECache& cache, Matrix& out);

// Gradient of rope_apply: the transpose rotation (sine negated).
Matrix rope_apply_backward(const MatrixRef& grad_out, Index start_pos,
                           const RoPECache& cache);

struct RotationMatrix {
  Index t = 0;
  Matrix matrix;  // [d x d] block-diagonal, 2x2 rotation blocks
};

// Explicit dense rotation matrix for position t. Oracle for rope_apply.
RotationMatrix rope_dense_matrix(Index t, Index head_dim, double base = 10000.0);

// Interleaved sin/cos table for absolute positions start_pos..start_pos+T-1,
// base-10000 frequency schedule. Added to inputs under the absolute scheme.
Matrix sinusoidal_absolute(Index T, Index d_model, Index start_pos = 0);

// Sinusoidal embeddings of relative offsets T-1 .. -(T-1), one row per
// offset, ordered positive-to-negative for the relative-shift trick.
Matrix relpos_table(Index T, Index d_model);

struct RelPosParams {
  // Fixed sinusoidal table of relative offsets, (2*max_len - 1) rows.
  // Not trainable; the trainable pieces are the two biases and pos_proj.
  Matrix pos_emb;
  Matrix u_bias;    // [n_heads x d_head], content bias
  Matrix v_bias;    // [n_heads x d_head], positional bias
  Matrix pos_proj;  // [d_model x d_model]
  Index max_len = 0;

  Index trainable_count() const {
    return u_bias.size() + v_bias.size() + pos_proj.size();
  }
};

RelPosParams init_relpos_params(Index max_len, Index d_model, Index n_heads,
                                std::mt19937_64& rng);

struct RelPosGrads {
  Matrix du_bias, dv_bias, dpos_proj;
};

}  // namespace ropebench
