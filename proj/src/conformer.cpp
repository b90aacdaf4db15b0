#include "ropebench/conformer.hpp"

#include <stdexcept>
#include <string>
#include <utility>

#include "ropebench/init.hpp"
#include "ropebench/tensor_ops.hpp"

namespace ropebench {

namespace {

Matrix affine_rows(const MatrixRef& x, const Matrix& w, const Vector& b) {
  Matrix out;
  out.noalias() = x * w;
  out.rowwise() += b.transpose();
  return out;
}

Matrix norm_rows(const MatrixRef& x, const NormParams& n) {
  return layernorm(x, n.gain, n.bias, kLayerNormEps);
}

Matrix ffn_forward(const MatrixRef& z, const FfnParams& p) {
  Matrix act = swish(affine_rows(z, p.w1, p.b1));
  return affine_rows(act, p.w2, p.b2);
}

struct FfnBackward {
  Matrix dz;
  FfnGrads grads;
};

FfnBackward ffn_backward(const Matrix& grad_out, const MatrixRef& z,
                         const FfnParams& p) {
  Matrix pre = affine_rows(z, p.w1, p.b1);
  Matrix act = swish(pre);
  FfnBackward r;
  r.grads.db2 = grad_out.colwise().sum().transpose();
  r.grads.dw2.noalias() = act.transpose() * grad_out;
  Matrix dact;
  dact.noalias() = grad_out * p.w2.transpose();
  Matrix dpre = swish_backward(dact, pre);
  r.grads.db1 = dpre.colwise().sum().transpose();
  r.grads.dw1.noalias() = z.transpose() * dpre;
  r.dz.noalias() = dpre * p.w1.transpose();
  return r;
}

struct DepthwiseBackward {
  Matrix dx;
  Matrix dtaps;
  Vector dbias;
};

DepthwiseBackward depthwise_conv_backward(const Matrix& grad_out,
                                          const MatrixRef& x,
                                          const Matrix& taps, bool causal) {
  const Index T = x.rows();
  const Index K = taps.rows();
  const Index lead = causal ? K - 1 : (K - 1) / 2;
  DepthwiseBackward r;
  r.dx = Matrix::Zero(T, x.cols());
  r.dtaps = Matrix::Zero(K, x.cols());
  for (Index t = 0; t < T; ++t) {
    for (Index j = 0; j < K; ++j) {
      const Index src = t - lead + j;
      if (src < 0 || src >= T) continue;
      r.dx.row(src) += grad_out.row(t).cwiseProduct(taps.row(j));
      r.dtaps.row(j) += grad_out.row(t).cwiseProduct(x.row(src));
    }
  }
  r.dbias = grad_out.colwise().sum().transpose();
  return r;
}

Matrix conv_forward(const MatrixRef& z, const ConvParams& p, bool causal) {
  Matrix gated = glu_split(affine_rows(z, p.pw_in, p.pw_in_b));
  Matrix conv = depthwise_conv(gated, p.dw, p.dw_b, causal);
  Matrix act = swish(layernorm(conv, p.norm.gain, p.norm.bias, kLayerNormEps));
  return affine_rows(act, p.pw_out, p.pw_out_b);
}

struct ConvBackward {
  Matrix dz;
  ConvGrads grads;
};

ConvBackward conv_backward(const Matrix& grad_out, const MatrixRef& z,
                           const ConvParams& p, bool causal) {
  Matrix expanded = affine_rows(z, p.pw_in, p.pw_in_b);
  Matrix gated = glu_split(expanded);
  Matrix conv = depthwise_conv(gated, p.dw, p.dw_b, causal);
  Matrix normed = layernorm(conv, p.norm.gain, p.norm.bias, kLayerNormEps);
  Matrix act = swish(normed);

  ConvBackward r;
  r.grads.dpw_out_b = grad_out.colwise().sum().transpose();
  r.grads.dpw_out.noalias() = act.transpose() * grad_out;
  Matrix dact;
  dact.noalias() = grad_out * p.pw_out.transpose();
  Matrix dnormed = swish_backward(dact, normed);
  LayerNormGrads ln = layernorm_backward(dnormed, conv, p.norm.gain, kLayerNormEps);
  r.grads.dnorm = {std::move(ln.dgain), std::move(ln.dbias)};
  DepthwiseBackward dw = depthwise_conv_backward(ln.dx, gated, p.dw, causal);
  r.grads.ddw = std::move(dw.dtaps);
  r.grads.ddw_b = std::move(dw.dbias);
  Matrix dexpanded = glu_split_backward(dw.dx, expanded);
  r.grads.dpw_in_b = dexpanded.colwise().sum().transpose();
  r.grads.dpw_in.noalias() = z.transpose() * dexpanded;
  r.dz.noalias() = dexpanded * p.pw_in.transpose();
  return r;
}

NormParams init_norm(Index d) {
  return {Vector::Ones(d), Vector::Zero(d)};
}

FfnParams init_ffn(Index d, Index expansion, std::mt19937_64& rng) {
  FfnParams p;
  p.w1 = fan_in_uniform(d, expansion * d, d, rng);
  p.b1 = Vector::Zero(expansion * d);
  p.w2 = fan_in_uniform(expansion * d, d, expansion * d, rng);
  p.b2 = Vector::Zero(d);
  return p;
}

ConvParams init_conv(Index d, Index kernel, std::mt19937_64& rng) {
  ConvParams p;
  p.pw_in = fan_in_uniform(d, 2 * d, d, rng);
  p.pw_in_b = Vector::Zero(2 * d);
  p.dw = fan_in_uniform(kernel, d, kernel, rng);
  p.dw_b = Vector::Zero(d);
  p.norm = init_norm(d);
  p.pw_out = fan_in_uniform(d, d, d, rng);
  p.pw_out_b = Vector::Zero(d);
  return p;
}

void validate_config(const ConformerConfig& c) {
  // Zero layers is legal: the encoder is then the identity map.
  if (c.n_layers < 0) throw std::invalid_argument("n_layers must be nonnegative");
  if (c.d_model <= 0 || c.n_heads <= 0 || c.d_model % c.n_heads != 0) {
    throw std::invalid_argument("d_model must be a positive multiple of n_heads");
  }
  if (c.ffn_expansion <= 0) {
    throw std::invalid_argument("ffn_expansion must be positive");
  }
  if (c.conv_kernel <= 0 || c.conv_kernel % 2 == 0) {
    throw std::invalid_argument("conv_kernel must be positive and odd");
  }
  if (!(c.theta_base > 0.0)) {
    throw std::invalid_argument("theta_base must be positive");
  }
}

}  // namespace

Matrix depthwise_conv(const MatrixRef& x, const Matrix& taps,
                      const VectorRef& bias, bool causal) {
  const Index T = x.rows();
  const Index d = x.cols();
  const Index K = taps.rows();
  if (K <= 0 || taps.cols() != d || bias.size() != d) {
    throw std::invalid_argument("depthwise taps/bias do not match input width");
  }
  if (!causal && K % 2 == 0) {
    throw std::invalid_argument("symmetric depthwise padding needs an odd kernel");
  }
  const Index lead = causal ? K - 1 : (K - 1) / 2;
  Matrix out = Matrix::Zero(T, d);
  for (Index t = 0; t < T; ++t) {
    for (Index j = 0; j < K; ++j) {
      const Index src = t - lead + j;
      if (src < 0 || src >= T) continue;
      out.row(t) += taps.row(j).cwiseProduct(x.row(src));
    }
    out.row(t) += bias.transpose();
  }
  return out;
}

EncoderParams init_encoder(const ConformerConfig& config, Index max_len,
                           std::uint64_t seed) {
  validate_config(config);
  if (max_len <= 0) throw std::invalid_argument("max_len must be positive");
  if (config.scheme == SchemeKind::rotary && config.d_model / config.n_heads % 2 != 0) {
    throw std::invalid_argument("rotary scheme needs an even head_dim");
  }

  std::mt19937_64 rng(seed);
  EncoderParams enc;
  enc.config = config;
  if (config.scheme == SchemeKind::rotary) {
    enc.rope = build_rope_cache(max_len, config.d_model / config.n_heads,
                                config.theta_base);
  }
  enc.layers.reserve(config.n_layers);
  for (Index l = 0; l < config.n_layers; ++l) {
    ConformerBlockParams blk;
    blk.ln_ffn1 = init_norm(config.d_model);
    blk.ffn1 = init_ffn(config.d_model, config.ffn_expansion, rng);
    blk.ln_attn = init_norm(config.d_model);
    blk.attn = init_attention_params(config.d_model, config.n_heads, rng);
    if (config.scheme == SchemeKind::relative) {
      blk.attn.relpos =
          init_relpos_params(max_len, config.d_model, config.n_heads, rng);
    }
    blk.ln_conv = init_norm(config.d_model);
    blk.conv = init_conv(config.d_model, config.conv_kernel, rng);
    blk.ln_ffn2 = init_norm(config.d_model);
    blk.ffn2 = init_ffn(config.d_model, config.ffn_expansion, rng);
    blk.ln_out = init_norm(config.d_model);
    enc.layers.push_back(std::move(blk));
  }
  return enc;
}

Matrix conformer_block(const MatrixRef& x, const ConformerBlockParams& block,
                       const PEScheme& scheme, const AttentionMask& mask,
                       Index start_pos) {
  const bool causal = !mask.full;
  Matrix h1 = x + 0.5 * ffn_forward(norm_rows(x, block.ln_ffn1), block.ffn1);
  Matrix h2 =
      h1 + mhsa(norm_rows(h1, block.ln_attn), block.attn, scheme, mask, start_pos);
  Matrix h3 = h2 + conv_forward(norm_rows(h2, block.ln_conv), block.conv, causal);
  Matrix h4 = h3 + 0.5 * ffn_forward(norm_rows(h3, block.ln_ffn2), block.ffn2);
  return norm_rows(h4, block.ln_out);
}

BlockBackward conformer_block_backward(const MatrixRef& grad_out,
                                       const MatrixRef& x,
                                       const ConformerBlockParams& block,
                                       const PEScheme& scheme,
                                       const AttentionMask& mask,
                                       Index start_pos) {
  const bool causal = !mask.full;

  // Forward chain, keeping each sublayer's input and residual state.
  Matrix a = norm_rows(x, block.ln_ffn1);
  Matrix h1 = x + 0.5 * ffn_forward(a, block.ffn1);
  Matrix b = norm_rows(h1, block.ln_attn);
  Matrix h2 = h1 + mhsa(b, block.attn, scheme, mask, start_pos);
  Matrix c = norm_rows(h2, block.ln_conv);
  Matrix h3 = h2 + conv_forward(c, block.conv, causal);
  Matrix d = norm_rows(h3, block.ln_ffn2);
  Matrix h4 = h3 + 0.5 * ffn_forward(d, block.ffn2);

  BlockBackward r;

  LayerNormGrads ln_out = layernorm_backward(grad_out, h4, block.ln_out.gain,
                                             kLayerNormEps);
  r.params.ln_out = {std::move(ln_out.dgain), std::move(ln_out.dbias)};
  Matrix dh4 = std::move(ln_out.dx);

  Matrix dffn2 = 0.5 * dh4;
  FfnBackward f2 = ffn_backward(dffn2, d, block.ffn2);
  r.params.ffn2 = std::move(f2.grads);
  LayerNormGrads ln_f2 = layernorm_backward(f2.dz, h3, block.ln_ffn2.gain,
                                            kLayerNormEps);
  r.params.ln_ffn2 = {std::move(ln_f2.dgain), std::move(ln_f2.dbias)};
  Matrix dh3 = dh4 + ln_f2.dx;

  ConvBackward cv = conv_backward(dh3, c, block.conv, causal);
  r.params.conv = std::move(cv.grads);
  LayerNormGrads ln_cv = layernorm_backward(cv.dz, h2, block.ln_conv.gain,
                                            kLayerNormEps);
  r.params.ln_conv = {std::move(ln_cv.dgain), std::move(ln_cv.dbias)};
  Matrix dh2 = dh3 + ln_cv.dx;

  MhsaGrads at = mhsa_backward(dh2, b, block.attn, scheme, mask, start_pos);
  r.params.attn = std::move(at.params);
  LayerNormGrads ln_at = layernorm_backward(at.dx, h1, block.ln_attn.gain,
                                            kLayerNormEps);
  r.params.ln_attn = {std::move(ln_at.dgain), std::move(ln_at.dbias)};
  Matrix dh1 = dh2 + ln_at.dx;

  Matrix dffn1 = 0.5 * dh1;
  FfnBackward f1 = ffn_backward(dffn1, a, block.ffn1);
  r.params.ffn1 = std::move(f1.grads);
  LayerNormGrads ln_f1 = layernorm_backward(f1.dz, x, block.ln_ffn1.gain,
                                            kLayerNormEps);
  r.params.ln_ffn1 = {std::move(ln_f1.dgain), std::move(ln_f1.dbias)};
  r.dx = dh1 + ln_f1.dx;

  return r;
}

Matrix encoder_forward(const MatrixRef& x, const EncoderParams& enc,
                       const AttentionMask& mask, Index start_pos) {
  const PEScheme scheme = enc.scheme();
  Matrix h = x;
  for (const ConformerBlockParams& block : enc.layers) {
    h = conformer_block(h, block, scheme, mask, start_pos);
  }
  return h;
}

EncoderGrads encoder_backward(const MatrixRef& grad_out, const MatrixRef& x,
                              const EncoderParams& enc,
                              const AttentionMask& mask, Index start_pos) {
  const PEScheme scheme = enc.scheme();
  const Index L = static_cast<Index>(enc.layers.size());
  std::vector<Matrix> inputs(L);
  Matrix h = x;
  for (Index l = 0; l < L; ++l) {
    inputs[l] = h;
    h = conformer_block(h, enc.layers[l], scheme, mask, start_pos);
  }

  EncoderGrads grads;
  grads.layers.resize(L);
  Matrix g = grad_out;
  for (Index l = L - 1; l >= 0; --l) {
    BlockBackward bb = conformer_block_backward(g, inputs[l], enc.layers[l],
                                                scheme, mask, start_pos);
    grads.layers[l] = std::move(bb.params);
    g = std::move(bb.dx);
  }
  grads.dx = std::move(g);
  return grads;
}

// param_spans and grad_spans must stay in lockstep: entry i of one is the
// gradient (resp. value) of entry i of the other.
std::vector<ParamSpan> param_spans(ConformerBlockParams& block) {
  std::vector<ParamSpan> v;
  auto add = [&v](auto& m) {
    v.push_back({m.data(), static_cast<Index>(m.size())});
  };
  add(block.ln_ffn1.gain);
  add(block.ln_ffn1.bias);
  add(block.ffn1.w1);
  add(block.ffn1.b1);
  add(block.ffn1.w2);
  add(block.ffn1.b2);
  add(block.ln_attn.gain);
  add(block.ln_attn.bias);
  add(block.attn.w_q);
  add(block.attn.w_k);
  add(block.attn.w_v);
  add(block.attn.w_o);
  if (block.attn.relpos) {
    add(block.attn.relpos->u_bias);
    add(block.attn.relpos->v_bias);
    add(block.attn.relpos->pos_proj);
  }
  add(block.ln_conv.gain);
  add(block.ln_conv.bias);
  add(block.conv.pw_in);
  add(block.conv.pw_in_b);
  add(block.conv.dw);
  add(block.conv.dw_b);
  add(block.conv.norm.gain);
  add(block.conv.norm.bias);
  add(block.conv.pw_out);
  add(block.conv.pw_out_b);
  add(block.ln_ffn2.gain);
  add(block.ln_ffn2.bias);
  add(block.ffn2.w1);
  add(block.ffn2.b1);
  add(block.ffn2.w2);
  add(block.ffn2.b2);
  add(block.ln_out.gain);
  add(block.ln_out.bias);
  return v;
}

std::vector<ParamSpan> grad_spans(BlockGrads& grads) {
  std::vector<ParamSpan> v;
  auto add = [&v](auto& m) {
    v.push_back({m.data(), static_cast<Index>(m.size())});
  };
  add(grads.ln_ffn1.dgain);
  add(grads.ln_ffn1.dbias);
  add(grads.ffn1.dw1);
  add(grads.ffn1.db1);
  add(grads.ffn1.dw2);
  add(grads.ffn1.db2);
  add(grads.ln_attn.dgain);
  add(grads.ln_attn.dbias);
  add(grads.attn.dw_q);
  add(grads.attn.dw_k);
  add(grads.attn.dw_v);
  add(grads.attn.dw_o);
  if (grads.attn.relpos) {
    add(grads.attn.relpos->du_bias);
    add(grads.attn.relpos->dv_bias);
    add(grads.attn.relpos->dpos_proj);
  }
  add(grads.ln_conv.dgain);
  add(grads.ln_conv.dbias);
  add(grads.conv.dpw_in);
  add(grads.conv.dpw_in_b);
  add(grads.conv.ddw);
  add(grads.conv.ddw_b);
  add(grads.conv.dnorm.dgain);
  add(grads.conv.dnorm.dbias);
  add(grads.conv.dpw_out);
  add(grads.conv.dpw_out_b);
  add(grads.ln_ffn2.dgain);
  add(grads.ln_ffn2.dbias);
  add(grads.ffn2.dw1);
  add(grads.ffn2.db1);
  add(grads.ffn2.dw2);
  add(grads.ffn2.db2);
  add(grads.ln_out.dgain);
  add(grads.ln_out.dbias);
  return v;
}

std::vector<ParamSpan> param_spans(EncoderParams& enc) {
  std::vector<ParamSpan> v;
  for (ConformerBlockParams& block : enc.layers) {
    std::vector<ParamSpan> b = param_spans(block);
    v.insert(v.end(), b.begin(), b.end());
  }
  return v;
}

std::vector<ParamSpan> grad_spans(EncoderGrads& grads) {
  std::vector<ParamSpan> v;
  for (BlockGrads& block : grads.layers) {
    std::vector<ParamSpan> b = grad_spans(block);
    v.insert(v.end(), b.begin(), b.end());
  }
  return v;
}

Index param_count(const EncoderParams& enc) {
  Index n = 0;
  for (const ConformerBlockParams& block : enc.layers) {
    for (const ParamSpan& s :
         param_spans(const_cast<ConformerBlockParams&>(block))) {
      n += s.size;
    }
  }
  return n;
}

Index pe_param_count(const EncoderParams& enc) {
  Index n = 0;
  for (const ConformerBlockParams& block : enc.layers) {
    if (block.attn.relpos) n += block.attn.relpos->trainable_count();
  }
  return n;
}

}  // namespace ropebench
