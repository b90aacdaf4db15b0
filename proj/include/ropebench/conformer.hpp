#pragma once

#include <cstdint>
#include <vector>

#include "ropebench/attention.hpp"

// Conformer blocks and the encoder stack built from them. One block is
//
//   h1 = x  + 1/2 ffn(ln(x))
//   h2 = h1 + mhsa(ln(h1))            (positional scheme applied here)
//   h3 = h2 + conv(ln(h2))
//   h4 = h3 + 1/2 ffn(ln(h3))
//   y  = ln(h4)
//
// with conv = pointwise(d -> 2d) -> GLU -> depthwise -> layernorm -> swish
// -> pointwise(d -> d). The depthwise convolution pads symmetrically under a
// full attention mask and causally (left-only) under a chunk mask, so chunked
// evaluation never reads past the current chunk.

namespace ropebench {

inline constexpr double kLayerNormEps = 1e-5;

struct ConformerConfig {
  Index n_layers = 4;
  Index d_model = 128;
  Index n_heads = 4;
  Index ffn_expansion = 4;
  Index conv_kernel = 31;  // odd
  SchemeKind scheme = SchemeKind::none;
  double theta_base = 10000.0;
};

struct NormParams {
  Vector gain, bias;
};

struct FfnParams {
  Matrix w1;  // [d x e*d]
  Vector b1;
  Matrix w2;  // [e*d x d]
  Vector b2;
};

struct ConvParams {
  Matrix pw_in;  // [d x 2d], pre-GLU expansion
  Vector pw_in_b;
  Matrix dw;  // [kernel x d] depthwise taps
  Vector dw_b;
  NormParams norm;  // post-conv normalization
  Matrix pw_out;    // [d x d]
  Vector pw_out_b;
};

struct ConformerBlockParams {
  NormParams ln_ffn1, ln_attn, ln_conv, ln_ffn2, ln_out;
  FfnParams ffn1, ffn2;
  AttentionParams attn;
  ConvParams conv;
};

struct EncoderParams {
  ConformerConfig config;
  RoPECache rope;  // populated iff config.scheme == rotary
  std::vector<ConformerBlockParams> layers;

  PEScheme scheme() const {
    PEScheme s;
    s.kind = config.scheme;
    if (config.scheme == SchemeKind::rotary) s.rope = &rope;
    return s;
  }
};

// Seeded, deterministic initialization. max_len bounds both the RoPE cache
// and the relative-offset table.
EncoderParams init_encoder(const ConformerConfig& config, Index max_len,
                           std::uint64_t seed);

Matrix conformer_block(const MatrixRef& x, const ConformerBlockParams& block,
                       const PEScheme& scheme, const AttentionMask& mask,
                       Index start_pos = 0);

Matrix encoder_forward(const MatrixRef& x, const EncoderParams& enc,
                       const AttentionMask& mask, Index start_pos = 0);

// Depthwise (per-channel) convolution over time with zero padding; exposed
// for direct testing. taps is [kernel x d].
Matrix depthwise_conv(const MatrixRef& x, const Matrix& taps,
                      const VectorRef& bias, bool causal);

struct NormGrads {
  Vector dgain, dbias;
};

struct FfnGrads {
  Matrix dw1;
  Vector db1;
  Matrix dw2;
  Vector db2;
};

struct ConvGrads {
  Matrix dpw_in;
  Vector dpw_in_b;
  Matrix ddw;
  Vector ddw_b;
  NormGrads dnorm;
  Matrix dpw_out;
  Vector dpw_out_b;
};

struct BlockGrads {
  NormGrads ln_ffn1, ln_attn, ln_conv, ln_ffn2, ln_out;
  FfnGrads ffn1, ffn2;
  AttentionGrads attn;
  ConvGrads conv;
};

struct BlockBackward {
  Matrix dx;
  BlockGrads params;
};

// Both backwards recompute their forward intermediates internally; callers
// keep only the original inputs.
BlockBackward conformer_block_backward(const MatrixRef& grad_out,
                                       const MatrixRef& x,
                                       const ConformerBlockParams& block,
                                       const PEScheme& scheme,
                                       const AttentionMask& mask,
                                       Index start_pos = 0);

struct EncoderGrads {
  Matrix dx;
  std::vector<BlockGrads> layers;
};

EncoderGrads encoder_backward(const MatrixRef& grad_out, const MatrixRef& x,
                              const EncoderParams& enc,
                              const AttentionMask& mask, Index start_pos = 0);

// Total trainable scalars, and the subset belonging to the positional
// embedding (zero for rotary and absolute: tables there are fixed functions,
// not parameters).
Index param_count(const EncoderParams& enc);
Index pe_param_count(const EncoderParams& enc);

// Flat views over every trainable scalar. param_spans and grad_spans walk
// their structures in the same fixed order, so entry i of one lines up with
// entry i of the other; finite-difference checks rely on that.
struct ParamSpan {
  double* data;
  Index size;
};
std::vector<ParamSpan> param_spans(ConformerBlockParams& block);
std::vector<ParamSpan> grad_spans(BlockGrads& grads);
std::vector<ParamSpan> param_spans(EncoderParams& enc);
std::vector<ParamSpan> grad_spans(EncoderGrads& grads);

}  // namespace ropebench
