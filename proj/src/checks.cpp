#include "ropebench/checks.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ropebench/bench.hpp"
#include "ropebench/gradcheck.hpp"
#include "ropebench/init.hpp"
#include "ropebench/tensor_ops.hpp"

namespace ropebench {

namespace {

struct Mutation {
  bool rope_sign = false;   // rotate with the transposed (backward) rotation
  bool grad_scale = false;  // scale an analytic gradient off by 0.1%
  bool mask_leak = false;   // let one frame peek into the next chunk
};

Mutation parse_mutation(const std::string& name) {
  Mutation m;
  if (name.empty()) return m;
  if (name == "rope-sign") {
    m.rope_sign = true;
  } else if (name == "grad-scale") {
    m.grad_scale = true;
  } else if (name == "mask-leak") {
    m.mask_leak = true;
  } else {
    throw std::invalid_argument("unknown mutation '" + name + "'");
  }
  return m;
}

std::string measured(double value, double limit, const char* relation) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "measured %.3g, required %s %.3g", value,
                relation, limit);
  return buf;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace

std::vector<std::string> known_mutations() {
  return {"rope-sign", "grad-scale", "mask-leak"};
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const CheckResult& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

std::vector<CheckResult> run_checks(const std::string& mutation) {
  const Mutation mut = parse_mutation(mutation);
  std::vector<CheckResult> out;
  const auto add = [&out](std::string name, bool pass, std::string detail) {
    out.push_back({std::move(name), pass, std::move(detail)});
  };

  // --- Rotary kernel against the dense rotation oracle -------------------
  {
    std::mt19937_64 rng(7);
    double worst = 0.0;
    for (Index d : {2, 8, 16}) {
      const RoPECache cache = build_rope_cache(32, d);
      const Matrix x = uniform_matrix(32, d, rng);
      const Matrix fast =
          mut.rope_sign ? rope_apply_backward(x, 0, cache) : rope_apply(x, 0, cache);
      for (Index t = 0; t < x.rows(); ++t) {
        const RotationMatrix rot = rope_dense_matrix(t, d);
        const Matrix expected = x.row(t) * rot.matrix.transpose();
        worst = std::max(worst, max_abs_diff(fast.row(t), expected));
      }
    }
    add("rotary kernel matches dense rotation oracle", worst < 1e-9,
        measured(worst, 1e-9, "<"));
  }

  // --- Rotation algebra: orthonormality and the additive group law -------
  {
    double worst = 0.0;
    const Index d = 8;
    for (Index t : {0, 1, 3, 9}) {
      const Matrix r_t = rope_dense_matrix(t, d).matrix;
      const Matrix eye = Matrix::Identity(d, d);
      worst = std::max(worst, max_abs_diff(Matrix(r_t.transpose() * r_t), eye));
      for (Index u : {0, 2, 5}) {
        const Matrix r_u = rope_dense_matrix(u, d).matrix;
        const Matrix r_sum = rope_dense_matrix(t + u, d).matrix;
        worst = std::max(worst, max_abs_diff(Matrix(r_t * r_u), r_sum));
      }
    }
    add("rotations are orthonormal and compose additively", worst < 1e-9,
        measured(worst, 1e-9, "<"));
  }

  // --- Softmax rows normalize; masked entries carry exactly zero weight --
  {
    std::mt19937_64 rng(11);
    const Index T = 12;
    const Matrix q = uniform_matrix(T, 6, rng);
    const Matrix k = uniform_matrix(T, 6, rng);
    const Matrix v = uniform_matrix(T, 6, rng);
    const AttentionMask mask = build_chunk_mask(T, 4);
    const SdpaResult r = sdpa(q, k, v, mask);
    double row_err = 0.0;
    double masked_weight = 0.0;
    for (Index t = 0; t < T; ++t) {
      row_err = std::max(row_err, std::abs(r.weights.row(t).sum() - 1.0));
      for (Index u = 0; u < T; ++u) {
        if (!mask.allowed(t, u)) {
          masked_weight = std::max(masked_weight, std::abs(r.weights(t, u)));
        }
      }
    }
    add("attention rows normalize under masking", row_err < 1e-12,
        measured(row_err, 1e-12, "<"));
    add("masked attention weights are exactly zero", masked_weight == 0.0,
        measured(masked_weight, 0.0, "=="));
  }

  // --- Rotary logits shift-invariant; absolute logits are not ------------
  {
    std::mt19937_64 rng(13);
    const Index T = 24, d = 32, heads = 2, shift = 7;
    AttentionParams params = init_attention_params(d, heads, rng);
    const Matrix x = uniform_matrix(T, d, rng);
    const AttentionMask mask = build_full_mask(T);
    const RoPECache cache = build_rope_cache(T + shift, d / heads);

    const auto logit_shift_gap = [&](const PEScheme& scheme) {
      MhsaTrace base, shifted;
      mhsa(x, params, scheme, mask, 0, &base);
      mhsa(x, params, scheme, mask, shift, &shifted);
      double gap = 0.0;
      for (std::size_t h = 0; h < base.logits.size(); ++h) {
        gap = std::max(gap, max_abs_diff(base.logits[h], shifted.logits[h]));
      }
      return gap;
    };

    const double rot_gap = logit_shift_gap(PEScheme::rotary(cache));
    add("rotary logits depend only on relative distance", rot_gap < 1e-9,
        measured(rot_gap, 1e-9, "<"));
    const double abs_gap = logit_shift_gap(PEScheme::absolute());
    add("absolute logits detect a common position shift", abs_gap > 1e-3,
        measured(abs_gap, 1e-3, ">"));
  }

  // --- Gradient checks: primitives ----------------------------------------
  {
    std::mt19937_64 rng(17);
    const Matrix x = uniform_matrix(5, 6, rng);
    const Matrix probe = uniform_matrix(5, 6, rng);

    // softmax
    {
      const ScalarFn f = [&probe](const Matrix& in) {
        return (softmax_rows(in).array() * probe.array()).sum();
      };
      Matrix analytic = softmax_rows_backward(probe, softmax_rows(x));
      if (mut.grad_scale) analytic *= 1.001;
      const GradReport rep = check_gradient("softmax_rows", f, analytic, x, 1e-5);
      add("softmax backward matches finite differences", rep.pass,
          measured(rep.max_rel_err, 1e-5, "<"));
    }
    // layernorm
    {
      const Vector gain = Vector::Constant(6, 1.3);
      const Vector bias = Vector::Constant(6, -0.2);
      const ScalarFn f = [&](const Matrix& in) {
        return (layernorm(in, gain, bias, kLayerNormEps).array() * probe.array())
            .sum();
      };
      const LayerNormGrads g = layernorm_backward(probe, x, gain, kLayerNormEps);
      const GradReport rep = check_gradient("layernorm", f, g.dx, x, 1e-5);
      add("layernorm backward matches finite differences", rep.pass,
          measured(rep.max_rel_err, 1e-5, "<"));
    }
    // swish
    {
      const ScalarFn f = [&probe](const Matrix& in) {
        return (swish(in).array() * probe.array()).sum();
      };
      const GradReport rep =
          check_gradient("swish", f, swish_backward(probe, x), x, 1e-5);
      add("swish backward matches finite differences", rep.pass,
          measured(rep.max_rel_err, 1e-5, "<"));
    }
    // glu
    {
      const Matrix wide = uniform_matrix(5, 12, rng);
      const ScalarFn f = [&probe](const Matrix& in) {
        return (glu_split(in).array() * probe.array()).sum();
      };
      const GradReport rep = check_gradient(
          "glu_split", f, glu_split_backward(probe, wide), wide, 1e-5);
      add("glu backward matches finite differences", rep.pass,
          measured(rep.max_rel_err, 1e-5, "<"));
    }
  }

  // --- Gradient checks: attention under every scheme ---------------------
  {
    std::mt19937_64 rng(19);
    const Index T = 6, d = 8, heads = 2;
    AttentionParams params = init_attention_params(d, heads, rng);
    params.relpos = init_relpos_params(16, d, heads, rng);
    const RoPECache cache = build_rope_cache(16, d / heads);
    const Matrix x = uniform_matrix(T, d, rng);
    const Matrix probe = uniform_matrix(T, d, rng);
    const AttentionMask mask = build_chunk_mask(T, 3);

    const PEScheme schemes[] = {PEScheme::none(), PEScheme::absolute(),
                                PEScheme::rotary(cache), PEScheme::relative()};
    for (const PEScheme& scheme : schemes) {
      const ScalarFn f = [&](const Matrix& in) {
        return (mhsa(in, params, scheme, mask, 1).array() * probe.array()).sum();
      };
      const MhsaGrads g = mhsa_backward(probe, x, params, scheme, mask, 1);
      const GradReport rep =
          check_gradient("mhsa", f, g.dx, x, 1e-5);
      add(std::string("attention input gradient (") + to_string(scheme.kind) +
              ") matches finite differences",
          rep.pass, measured(rep.max_rel_err, 1e-5, "<"));
    }
  }

  // --- Chunk causality through a small encoder ---------------------------
  {
    const Index T = 24, chunk = 8, keep = 16;
    ConformerConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.conv_kernel = 3;
    cfg.scheme = SchemeKind::rotary;
    const EncoderParams enc = init_encoder(cfg, T, 99);
    const Matrix x = gen_input(T, cfg.d_model, 5);

    AttentionMask mask_full_len = build_chunk_mask(T, chunk);
    if (mut.mask_leak) mask_full_len.allowed(2, 10) = true;
    const AttentionMask mask_trunc = build_chunk_mask(keep, chunk);

    const Matrix full = encoder_forward(x, enc, mask_full_len);
    const Matrix trunc = encoder_forward(x.topRows(keep), enc, mask_trunc);
    bool identical = true;
    for (Index t = 0; t < keep && identical; ++t) {
      for (Index c = 0; c < cfg.d_model; ++c) {
        if (full(t, c) != trunc(t, c)) {
          identical = false;
          break;
        }
      }
    }
    add("future chunks cannot influence earlier outputs (bit-identical)",
        identical, identical ? "prefix outputs byte-equal" : "prefix outputs differ");
  }

  // --- CSV round trip -----------------------------------------------------
  {
    SweepResult r;
    r.records.push_back({"rotary", 128, 0.001234567891, 0.0000321, 20, 0.0});
    r.records.push_back({"relative", 128, 0.002345678912, 0.0000456, 20, 0.0});
    r.pe_records.push_back({"rotary", 128, 1.25e-05, 3.1e-07, 20, 0.0});
    const std::string once = format_csv(r);
    const SweepResult parsed = parse_csv_text(once);
    const std::string twice = format_csv(parsed);
    bool ok = once == twice && parsed.records.size() == 2 &&
              parsed.pe_records.size() == 1;
    if (ok) {
      for (std::size_t i = 0; i < r.records.size(); ++i) {
        const double a = r.records[i].mean_s;
        const double b = parsed.records[i].mean_s;
        if (std::abs(a - b) > 1e-8 * std::max(1.0, std::abs(a))) ok = false;
      }
    }
    add("CSV serialization round-trips", ok,
        ok ? "reformat is byte-identical" : "round trip altered records");
  }

  return out;
}

}  // namespace ropebench
