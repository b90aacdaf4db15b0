#include "ropebench/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "ropebench/init.hpp"
#include "ropebench/tensor_ops.hpp"

namespace ropebench {

namespace {

// One head's softmax weights over additively masked logits, computed with
// strictly serial per-row accumulation. Disallowed entries underflow to
// exactly zero weight, and because the running max/sum never reorder the
// surviving prefix, appending further masked-out frames to the sequence
// cannot perturb the weights of earlier rows even in the last bit.
Matrix masked_softmax_rows_serial(const Matrix& logits,
                                  const BoolMatrix& allowed) {
  const Index rows = logits.rows();
  const Index cols = logits.cols();
  Matrix out(rows, cols);
  for (Index t = 0; t < rows; ++t) {
    double row_max = -std::numeric_limits<double>::infinity();
    for (Index u = 0; u < cols; ++u) {
      const double z = allowed(t, u) ? logits(t, u) : logits(t, u) + kMaskFill;
      out(t, u) = z;
      row_max = std::max(row_max, z);
    }
    double sum = 0.0;
    for (Index u = 0; u < cols; ++u) {
      const double e = std::exp(out(t, u) - row_max);
      out(t, u) = e;
      sum += e;
    }
    for (Index u = 0; u < cols; ++u) out(t, u) /= sum;
  }
  return out;
}

// out_h = weights * v_h accumulated serially over keys, for the same
// length-extension stability reason as masked_softmax_rows_serial.
Matrix weighted_values_serial(const Matrix& weights, const MatrixRef& v) {
  Matrix out = Matrix::Zero(weights.rows(), v.cols());
  for (Index t = 0; t < weights.rows(); ++t) {
    auto acc = out.row(t);
    for (Index u = 0; u < weights.cols(); ++u) {
      acc += weights(t, u) * v.row(u);
    }
  }
  return out;
}

void validate_params(const AttentionParams& p) {
  if (p.n_heads <= 0 || p.d_model <= 0) {
    throw std::invalid_argument("attention params need positive n_heads and d_model");
  }
  if (p.d_model % p.n_heads != 0) {
    throw std::invalid_argument("d_model " + std::to_string(p.d_model) +
                                " not divisible by n_heads " +
                                std::to_string(p.n_heads));
  }
  if (p.w_q.rows() != p.d_model || p.w_q.cols() != p.d_model ||
      p.w_k.rows() != p.d_model || p.w_k.cols() != p.d_model ||
      p.w_v.rows() != p.d_model || p.w_v.cols() != p.d_model ||
      p.w_o.rows() != p.d_model || p.w_o.cols() != p.d_model) {
    throw std::invalid_argument("attention projection shapes must all be d_model x d_model");
  }
}

void validate_scheme(const AttentionParams& p, const PEScheme& scheme,
                     Index T, Index start_pos) {
  switch (scheme.kind) {
    case SchemeKind::none:
    case SchemeKind::absolute:
      break;
    case SchemeKind::rotary:
      if (scheme.rope == nullptr) {
        throw std::invalid_argument("rotary scheme requires a RoPE cache");
      }
      if (scheme.rope->head_dim != p.head_dim()) {
        throw std::invalid_argument(
            "RoPE cache head_dim " + std::to_string(scheme.rope->head_dim) +
            " does not match attention head_dim " +
            std::to_string(p.head_dim()));
      }
      break;
    case SchemeKind::relative:
      if (!p.relpos.has_value()) {
        throw std::invalid_argument("relative scheme requires relpos parameters");
      }
      if (p.relpos->pos_emb.cols() != p.d_model) {
        throw std::invalid_argument("relpos table width does not match d_model");
      }
      if (p.relpos->u_bias.rows() != p.n_heads ||
          p.relpos->u_bias.cols() != p.head_dim()) {
        throw std::invalid_argument("relpos bias shape does not match head layout");
      }
      if (T > p.relpos->max_len) {
        throw std::out_of_range("sequence length " + std::to_string(T) +
                                " exceeds relpos max_len " +
                                std::to_string(p.relpos->max_len));
      }
      break;
  }
  if (start_pos < 0) {
    throw std::invalid_argument("start_pos must be nonnegative");
  }
}

// Everything a forward or backward pass needs, recomputed from (x, params)
// rather than cached, so backward holds at most one T x T matrix at a time.
struct MhsaWork {
  const AttentionParams* params = nullptr;
  const PEScheme* scheme = nullptr;
  const AttentionMask* mask = nullptr;
  Index T = 0;
  Index start_pos = 0;
  double scale = 0.0;
  Matrix x_in;  // x, plus the absolute sinusoid when scheme == absolute
  Matrix q, k, v;
  Matrix pos_slice;  // [2T-1 x d_model] sinusoid rows for offsets T-1..-(T-1)
  Matrix p_all;      // pos_slice * pos_proj^T

  Index head_dim() const { return params->head_dim(); }

  Matrix head_q(Index h) const {
    const Index dh = head_dim();
    if (scheme->kind == SchemeKind::rotary) {
      return rope_apply(q.middleCols(h * dh, dh), start_pos, *scheme->rope);
    }
    return q.middleCols(h * dh, dh);
  }

  Matrix head_k(Index h) const {
    const Index dh = head_dim();
    if (scheme->kind == SchemeKind::rotary) {
      return rope_apply(k.middleCols(h * dh, dh), start_pos, *scheme->rope);
    }
    return k.middleCols(h * dh, dh);
  }

  // Query rows with the relative scheme's content / positional biases added.
  Matrix biased_q_u(Index h) const {
    const Index dh = head_dim();
    return q.middleCols(h * dh, dh).rowwise() + params->relpos->u_bias.row(h);
  }

  Matrix biased_q_v(Index h) const {
    const Index dh = head_dim();
    return q.middleCols(h * dh, dh).rowwise() + params->relpos->v_bias.row(h);
  }

  // Scaled, pre-mask logits for one head.
  Matrix head_logits(Index h) const {
    const Index dh = head_dim();
    Matrix logits(T, T);
    switch (scheme->kind) {
      case SchemeKind::none:
      case SchemeKind::absolute:
        logits.noalias() =
            q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
        break;
      case SchemeKind::rotary:
        logits.noalias() = head_q(h) * head_k(h).transpose();
        break;
      case SchemeKind::relative: {
        logits.noalias() = biased_q_u(h) * k.middleCols(h * dh, dh).transpose();
        Matrix pos_logits;  // [T x 2T-1]
        pos_logits.noalias() = biased_q_v(h) * p_all.middleCols(h * dh, dh).transpose();
        logits += rel_shift(pos_logits);
        break;
      }
    }
    logits *= scale;
    return logits;
  }

  Matrix head_weights(const Matrix& logits) const {
    if (mask->full) return softmax_rows(logits);
    return masked_softmax_rows_serial(logits, mask->allowed);
  }

  Matrix head_output(const Matrix& weights, Index h) const {
    const Index dh = head_dim();
    if (mask->full) {
      Matrix out;
      out.noalias() = weights * v.middleCols(h * dh, dh);
      return out;
    }
    return weighted_values_serial(weights, v.middleCols(h * dh, dh));
  }
};

MhsaWork make_work(const MatrixRef& x, const AttentionParams& p,
                   const PEScheme& scheme, const AttentionMask& mask,
                   Index start_pos) {
  validate_params(p);
  if (x.cols() != p.d_model) {
    throw std::invalid_argument("input width " + std::to_string(x.cols()) +
                                " does not match d_model " +
                                std::to_string(p.d_model));
  }
  if (mask.T != x.rows()) {
    throw std::invalid_argument("mask size " + std::to_string(mask.T) +
                                " does not match sequence length " +
                                std::to_string(x.rows()));
  }
  validate_scheme(p, scheme, x.rows(), start_pos);

  MhsaWork w;
  w.params = &p;
  w.scheme = &scheme;
  w.mask = &mask;
  w.T = x.rows();
  w.start_pos = start_pos;
  w.scale = 1.0 / std::sqrt(static_cast<double>(p.head_dim()));
  if (scheme.kind == SchemeKind::absolute) {
    w.x_in = x + sinusoidal_absolute(w.T, p.d_model, start_pos);
  } else {
    w.x_in = x;
  }
  w.q.noalias() = w.x_in * p.w_q;
  w.k.noalias() = w.x_in * p.w_k;
  w.v.noalias() = w.x_in * p.w_v;
  if (scheme.kind == SchemeKind::relative) {
    const RelPosParams& rp = *p.relpos;
    w.pos_slice = rp.pos_emb.middleRows(rp.max_len - w.T, 2 * w.T - 1);
    w.p_all.noalias() = w.pos_slice * rp.pos_proj.transpose();
  }
  return w;
}

void append_rows(Matrix& dst, const Matrix& rows) {
  const Index old_rows = dst.rows();
  dst.conservativeResize(old_rows + rows.rows(), rows.cols());
  dst.bottomRows(rows.rows()) = rows;
}

}  // namespace

const char* to_string(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::none: return "none";
    case SchemeKind::absolute: return "absolute";
    case SchemeKind::rotary: return "rotary";
    case SchemeKind::relative: return "relative";
  }
  return "unknown";
}

std::optional<SchemeKind> scheme_from_string(const std::string& name) {
  if (name == "none") return SchemeKind::none;
  if (name == "absolute") return SchemeKind::absolute;
  if (name == "rotary") return SchemeKind::rotary;
  if (name == "relative") return SchemeKind::relative;
  return std::nullopt;
}

AttentionMask build_full_mask(Index T) {
  if (T <= 0) throw std::invalid_argument("mask length must be positive");
  AttentionMask mask;
  mask.T = T;
  mask.allowed = BoolMatrix::Constant(T, T, true);
  mask.full = true;
  return mask;
}

AttentionMask build_chunk_mask(Index T, Index chunk_frames) {
  if (T <= 0) throw std::invalid_argument("mask length must be positive");
  if (chunk_frames <= 0) {
    throw std::invalid_argument("chunk_frames must be positive");
  }
  AttentionMask mask;
  mask.T = T;
  mask.allowed = BoolMatrix::Constant(T, T, false);
  for (Index t = 0; t < T; ++t) {
    // Full left context: attend through the end of the query's own chunk.
    const Index chunk_end = std::min(T, (t / chunk_frames + 1) * chunk_frames);
    for (Index u = 0; u < chunk_end; ++u) mask.allowed(t, u) = true;
  }
  mask.full = chunk_frames >= T;
  return mask;
}

AttentionParams init_attention_params(Index d_model, Index n_heads,
                                      std::mt19937_64& rng) {
  if (n_heads <= 0 || d_model <= 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("d_model must be a positive multiple of n_heads");
  }
  AttentionParams p;
  p.n_heads = n_heads;
  p.d_model = d_model;
  p.w_q = fan_in_uniform(d_model, d_model, d_model, rng);
  p.w_k = fan_in_uniform(d_model, d_model, d_model, rng);
  p.w_v = fan_in_uniform(d_model, d_model, d_model, rng);
  p.w_o = fan_in_uniform(d_model, d_model, d_model, rng);
  return p;
}

SdpaResult sdpa(const MatrixRef& q, const MatrixRef& k, const MatrixRef& v,
                const AttentionMask& mask) {
  if (k.rows() != q.rows() || v.rows() != q.rows()) {
    throw std::invalid_argument("sdpa expects q, k, v with equal row counts");
  }
  if (k.cols() != q.cols()) {
    throw std::invalid_argument("sdpa expects q and k with equal widths");
  }
  if (mask.T != q.rows()) {
    throw std::invalid_argument("mask size does not match sequence length");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix logits;
  logits.noalias() = q * k.transpose();
  logits *= scale;
  SdpaResult r;
  if (mask.full) {
    r.weights = softmax_rows(logits);
    r.output.noalias() = r.weights * v;
  } else {
    r.weights = masked_softmax_rows_serial(logits, mask.allowed);
    r.output = weighted_values_serial(r.weights, v);
  }
  return r;
}

SdpaGrads sdpa_backward(const MatrixRef& grad_out, const MatrixRef& q,
                        const MatrixRef& k, const MatrixRef& v,
                        const AttentionMask& mask, const MatrixRef& weights) {
  if (grad_out.rows() != q.rows() || grad_out.cols() != v.cols()) {
    throw std::invalid_argument("sdpa_backward grad shape does not match output");
  }
  if (weights.rows() != q.rows() || weights.cols() != q.rows()) {
    throw std::invalid_argument("sdpa_backward weights must be T x T");
  }
  (void)mask;  // additive masking contributes no gradient
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  SdpaGrads g;
  g.dv.noalias() = weights.transpose() * grad_out;
  Matrix dweights;
  dweights.noalias() = grad_out * v.transpose();
  Matrix dlogits = softmax_rows_backward(dweights, weights);
  dlogits *= scale;
  g.dq.noalias() = dlogits * k;
  g.dk.noalias() = dlogits.transpose() * q;
  return g;
}

Matrix mhsa(const MatrixRef& x, const AttentionParams& params,
            const PEScheme& scheme, const AttentionMask& mask, Index start_pos,
            MhsaTrace* trace) {
  const MhsaWork w = make_work(x, params, scheme, mask, start_pos);
  const Index dh = w.head_dim();
  Matrix concat(w.T, params.d_model);
  for (Index h = 0; h < params.n_heads; ++h) {
    Matrix logits = w.head_logits(h);
    if (trace) trace->logits.push_back(logits);
    Matrix weights = w.head_weights(logits);
    if (trace) trace->weights.push_back(weights);
    concat.middleCols(h * dh, dh) = w.head_output(weights, h);
  }
  Matrix out;
  out.noalias() = concat * params.w_o;
  return out;
}

MhsaGrads mhsa_backward(const MatrixRef& grad_out, const MatrixRef& x,
                        const AttentionParams& params, const PEScheme& scheme,
                        const AttentionMask& mask, Index start_pos) {
  const MhsaWork w = make_work(x, params, scheme, mask, start_pos);
  if (grad_out.rows() != w.T || grad_out.cols() != params.d_model) {
    throw std::invalid_argument("mhsa_backward grad shape does not match output");
  }
  const Index dh = w.head_dim();
  const Index H = params.n_heads;

  // First head sweep: rebuild the concatenated head outputs for dw_o.
  Matrix concat(w.T, params.d_model);
  for (Index h = 0; h < H; ++h) {
    Matrix weights = w.head_weights(w.head_logits(h));
    concat.middleCols(h * dh, dh) = w.head_output(weights, h);
  }

  MhsaGrads grads;
  grads.params.dw_o.noalias() = concat.transpose() * grad_out;
  Matrix dconcat;
  dconcat.noalias() = grad_out * params.w_o.transpose();

  Matrix dq = Matrix::Zero(w.T, params.d_model);
  Matrix dk = Matrix::Zero(w.T, params.d_model);
  Matrix dv = Matrix::Zero(w.T, params.d_model);
  Matrix dp_all;
  RelPosGrads relgrads;
  const bool relative = scheme.kind == SchemeKind::relative;
  if (relative) {
    dp_all = Matrix::Zero(2 * w.T - 1, params.d_model);
    relgrads.du_bias = Matrix::Zero(H, dh);
    relgrads.dv_bias = Matrix::Zero(H, dh);
  }

  // Second head sweep: recompute each head's weights and push the gradient
  // through logits back to q, k, v and the positional parameters.
  for (Index h = 0; h < H; ++h) {
    Matrix weights = w.head_weights(w.head_logits(h));
    const auto gh = dconcat.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = weights.transpose() * gh;
    Matrix dweights;
    dweights.noalias() = gh * w.v.middleCols(h * dh, dh).transpose();
    Matrix dlogits = softmax_rows_backward(dweights, weights);
    dlogits *= w.scale;

    switch (scheme.kind) {
      case SchemeKind::none:
      case SchemeKind::absolute:
        dq.middleCols(h * dh, dh).noalias() =
            dlogits * w.k.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh).noalias() =
            dlogits.transpose() * w.q.middleCols(h * dh, dh);
        break;
      case SchemeKind::rotary: {
        Matrix dq_rot;
        dq_rot.noalias() = dlogits * w.head_k(h);
        Matrix dk_rot;
        dk_rot.noalias() = dlogits.transpose() * w.head_q(h);
        dq.middleCols(h * dh, dh) =
            rope_apply_backward(dq_rot, start_pos, *scheme.rope);
        dk.middleCols(h * dh, dh) =
            rope_apply_backward(dk_rot, start_pos, *scheme.rope);
        break;
      }
      case SchemeKind::relative: {
        // Content term: logits_c = (q + u) k^T.
        Matrix dq_u;
        dq_u.noalias() = dlogits * w.k.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh).noalias() =
            dlogits.transpose() * w.biased_q_u(h);
        // Positional term: logits_p = rel_shift((q + v) P_h^T).
        Matrix dpos_logits = rel_shift_backward(dlogits);
        Matrix dq_v;
        dq_v.noalias() = dpos_logits * w.p_all.middleCols(h * dh, dh);
        dp_all.middleCols(h * dh, dh).noalias() =
            dpos_logits.transpose() * w.biased_q_v(h);
        dq.middleCols(h * dh, dh) = dq_u + dq_v;
        relgrads.du_bias.row(h) = dq_u.colwise().sum();
        relgrads.dv_bias.row(h) = dq_v.colwise().sum();
        break;
      }
    }
  }

  if (relative) {
    relgrads.dpos_proj.noalias() = dp_all.transpose() * w.pos_slice;
    grads.params.relpos = std::move(relgrads);
  }

  grads.params.dw_q.noalias() = w.x_in.transpose() * dq;
  grads.params.dw_k.noalias() = w.x_in.transpose() * dk;
  grads.params.dw_v.noalias() = w.x_in.transpose() * dv;
  // The absolute sinusoid is an additive constant, so dx passes through.
  grads.dx.noalias() = dq * params.w_q.transpose();
  grads.dx.noalias() += dk * params.w_k.transpose();
  grads.dx.noalias() += dv * params.w_v.transpose();
  return grads;
}

Matrix mhsa_streaming_step(const MatrixRef& x_chunk,
                           const AttentionParams& params,
                           const PEScheme& scheme, StreamingState& state) {
  validate_params(params);
  if (scheme.kind == SchemeKind::relative) {
    throw std::invalid_argument("streaming evaluation does not support the relative scheme");
  }
  if (x_chunk.cols() != params.d_model) {
    throw std::invalid_argument("chunk width does not match d_model");
  }
  validate_scheme(params, scheme, x_chunk.rows(), state.frames_seen);
  const Index C = x_chunk.rows();
  const Index H = params.n_heads;
  const Index dh = params.head_dim();
  const Index start = state.frames_seen;
  if (state.k_hist.empty()) {
    state.k_hist.resize(H);
    state.v_hist.resize(H);
  } else if (static_cast<Index>(state.k_hist.size()) != H) {
    throw std::invalid_argument("streaming state was built for a different head count");
  }

  Matrix x_in;
  if (scheme.kind == SchemeKind::absolute) {
    x_in = x_chunk + sinusoidal_absolute(C, params.d_model, start);
  } else {
    x_in = x_chunk;
  }
  Matrix q, k, v;
  q.noalias() = x_in * params.w_q;
  k.noalias() = x_in * params.w_k;
  v.noalias() = x_in * params.w_v;

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix concat(C, params.d_model);
  for (Index h = 0; h < H; ++h) {
    Matrix k_new = k.middleCols(h * dh, dh);
    Matrix q_h = q.middleCols(h * dh, dh);
    if (scheme.kind == SchemeKind::rotary) {
      // Rotate at true absolute positions as frames enter the history; the
      // stored keys never need revisiting on later steps.
      k_new = rope_apply(k_new, start, *scheme.rope);
      q_h = rope_apply(q_h, start, *scheme.rope);
    }
    append_rows(state.k_hist[h], k_new);
    append_rows(state.v_hist[h], Matrix(v.middleCols(h * dh, dh)));
    Matrix logits;
    logits.noalias() = q_h * state.k_hist[h].transpose();
    logits *= scale;
    Matrix weights = softmax_rows(logits);
    concat.middleCols(h * dh, dh).noalias() = weights * state.v_hist[h];
  }
  state.frames_seen += C;
  Matrix out;
  out.noalias() = concat * params.w_o;
  return out;
}

Matrix rel_shift(const MatrixRef& m) {
  const Index T = m.rows();
  if (T <= 0 || m.cols() != 2 * T - 1) {
    throw std::invalid_argument("rel_shift expects a T x (2T-1) matrix");
  }
  // Prepend one zero column, then reread the buffer with row length 2T-1:
  // each row slides one slot further left than the previous, turning the
  // offset axis into an absolute-position axis.
  Matrix padded(T, 2 * T);
  padded.col(0).setZero();
  padded.rightCols(2 * T - 1) = m;
  Eigen::Map<const Matrix> shifted(padded.data() + T, T, 2 * T - 1);
  return shifted.leftCols(T);
}

Matrix rel_shift_backward(const MatrixRef& grad_out) {
  const Index T = grad_out.rows();
  if (T <= 0 || grad_out.cols() != T) {
    throw std::invalid_argument("rel_shift_backward expects a T x T matrix");
  }
  // Adjoint of the gather above: scatter through the same reshaped view.
  Matrix padded = Matrix::Zero(T, 2 * T);
  Eigen::Map<Matrix> shifted(padded.data() + T, T, 2 * T - 1);
  shifted.leftCols(T) = grad_out;
  return padded.rightCols(2 * T - 1);
}

}  // namespace ropebench
