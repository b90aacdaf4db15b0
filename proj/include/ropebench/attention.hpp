#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ropebench/posemb.hpp"
#include "ropebench/types.hpp"

// Scaled dot-product attention and multi-head self-attention, parameterized
// by positional-embedding scheme. Single sequence, no batch dimension.
//
// Scheme behavior inside mhsa:
//   none      logits = q k^T / sqrt(d_h)
//   absolute  the sinusoidal table for the absolute positions is added to x
//             before the q/k/v projections
//   rotary    q and k (only) are rotated per head before the dot product
//   relative  Transformer-XL decomposition:
//             logits = ((q + u) k^T + rel_shift((q + v) P^T)) / sqrt(d_h)
//             with P the per-head slice of pos_proj applied to the
//             relative-offset table
//
// Disallowed mask entries are applied additively (kMaskFill) before softmax.

namespace ropebench {

enum class SchemeKind { none, absolute, rotary, relative };

const char* to_string(SchemeKind kind);
std::optional<SchemeKind> scheme_from_string(const std::string& name);

struct PEScheme {
  SchemeKind kind = SchemeKind::none;
  const RoPECache* rope = nullptr;  // set iff kind == rotary

  static PEScheme none() { return {SchemeKind::none, nullptr}; }
  static PEScheme absolute() { return {SchemeKind::absolute, nullptr}; }
  static PEScheme rotary(const RoPECache& cache) {
    return {SchemeKind::rotary, &cache};
  }
  static PEScheme relative() { return {SchemeKind::relative, nullptr}; }
};

struct AttentionMask {
  Index T = 0;
  BoolMatrix allowed;  // allowed(t, u): query t may attend to key u
  bool full = false;   // every entry allowed
};

AttentionMask build_full_mask(Index T);

// allowed(t, u) iff chunk(u) <= chunk(t) with chunk(t) = floor(t / chunk_frames):
// full left context, no lookahead beyond the query's own chunk.
AttentionMask build_chunk_mask(Index T, Index chunk_frames);

struct AttentionParams {
  Index n_heads = 0;
  Index d_model = 0;
  Matrix w_q, w_k, w_v, w_o;           // each [d_model x d_model]
  std::optional<RelPosParams> relpos;  // present iff used with scheme relative

  Index head_dim() const { return d_model / n_heads; }
};

AttentionParams init_attention_params(Index d_model, Index n_heads,
                                      std::mt19937_64& rng);

struct SdpaResult {
  Matrix output;   // [T x d_h]
  Matrix weights;  // [T x T], rows sum to 1
};

SdpaResult sdpa(const MatrixRef& q, const MatrixRef& k, const MatrixRef& v,
                const AttentionMask& mask);

struct SdpaGrads {
  Matrix dq, dk, dv;
};

SdpaGrads sdpa_backward(const MatrixRef& grad_out, const MatrixRef& q,
                        const MatrixRef& k, const MatrixRef& v,
                        const AttentionMask& mask, const MatrixRef& weights);

// Per-head introspection captured during a forward pass when requested.
// logits are scaled but pre-mask, so positional effects can be compared
// independent of the mask.
struct MhsaTrace {
  std::vector<Matrix> logits;
  std::vector<Matrix> weights;
};

Matrix mhsa(const MatrixRef& x, const AttentionParams& params,
            const PEScheme& scheme, const AttentionMask& mask, Index start_pos,
            MhsaTrace* trace = nullptr);

struct AttentionGrads {
  Matrix dw_q, dw_k, dw_v, dw_o;
  std::optional<RelPosGrads> relpos;
};

struct MhsaGrads {
  Matrix dx;
  AttentionGrads params;
};

// Recomputes forward intermediates internally, so it needs only the original
// inputs; nothing from the forward pass has to be kept alive.
MhsaGrads mhsa_backward(const MatrixRef& grad_out, const MatrixRef& x,
                        const AttentionParams& params, const PEScheme& scheme,
                        const AttentionMask& mask, Index start_pos);

// Chunked streaming evaluation with key/value history. Each step attends the
// chunk's queries over everything seen so far plus the chunk itself, which is
// exactly the full-left-context chunk mask pattern. Keys are rotated (rotary)
// or offset (absolute) at their true absolute positions as they enter the
// history. The relative scheme is not supported here.
struct StreamingState {
  Index frames_seen = 0;
  std::vector<Matrix> k_hist;  // one per head
  std::vector<Matrix> v_hist;
};

Matrix mhsa_streaming_step(const MatrixRef& x_chunk,
                           const AttentionParams& params,
                           const PEScheme& scheme, StreamingState& state);

// Relative-shift gather: m is [T x (2T-1)] with column j holding offset
// T-1-j; returns [T x T] with entry (t, u) = m(t, T-1-t+u), realized by the
// pad-and-reshape trick.
Matrix rel_shift(const MatrixRef& m);
Matrix rel_shift_backward(const MatrixRef& grad_out);

}  // namespace ropebench
