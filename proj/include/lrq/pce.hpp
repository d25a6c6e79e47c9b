#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lrq/init.hpp"
#include "lrq/ops.hpp"
#include "lrq/params.hpp"

namespace lrq {

struct PceConfig {
  std::size_t num_queries = 10;
  std::size_t hidden_dim = 32;
  std::size_t num_heads = 4;
  std::size_t ffn_expansion = 4;
  std::size_t input_dim = 3;
  double ln_eps = 1e-5;
  double query_init_std = 0.02;
};

inline void validate(const PceConfig& cfg) {
  if (cfg.num_queries == 0 || cfg.hidden_dim == 0 || cfg.num_heads == 0 || cfg.ffn_expansion == 0 ||
      cfg.input_dim == 0) {
    throw ConfigError("encoder sizes must all be positive");
  }
  if (cfg.hidden_dim % cfg.num_heads != 0) {
    throw ConfigError("hidden_dim " + std::to_string(cfg.hidden_dim) + " is not divisible by num_heads " +
                      std::to_string(cfg.num_heads));
  }
  if (!(cfg.ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
}

struct PceParams {
  Tensor queries;
  Tensor proj_w, proj_b;
  Tensor wq, wk, wv, wo;
  Tensor w1, b1, w2, b2;
  Tensor ln_g, ln_b;

  static PceParams init(const PceConfig& cfg, Rng& rng) {
    validate(cfg);
    const std::size_t h = cfg.hidden_dim, f = cfg.hidden_dim * cfg.ffn_expansion;
    PceParams p;
    p.queries = normal_tensor({cfg.num_queries, h}, cfg.query_init_std, rng);
    p.proj_w = fan_in_uniform(cfg.input_dim, h, rng);
    p.proj_b = Tensor::zeros({h});
    p.wq = fan_in_uniform(h, h, rng);
    p.wk = fan_in_uniform(h, h, rng);
    p.wv = fan_in_uniform(h, h, rng);
    p.wo = fan_in_uniform(h, h, rng);
    p.w1 = fan_in_uniform(h, f, rng);
    p.b1 = Tensor::zeros({f});
    p.w2 = fan_in_uniform(f, h, rng);
    p.b2 = Tensor::zeros({h});
    p.ln_g = Tensor::ones({h});
    p.ln_b = Tensor::zeros({h});
    return p;
  }

  void collect(ParamRefs& out) {
    out.emplace_back("pce.queries", &queries);
    out.emplace_back("pce.proj.w", &proj_w);
    out.emplace_back("pce.proj.b", &proj_b);
    out.emplace_back("pce.attn.wq", &wq);
    out.emplace_back("pce.attn.wk", &wk);
    out.emplace_back("pce.attn.wv", &wv);
    out.emplace_back("pce.attn.wo", &wo);
    out.emplace_back("pce.ffn.w1", &w1);
    out.emplace_back("pce.ffn.b1", &b1);
    out.emplace_back("pce.ffn.w2", &w2);
    out.emplace_back("pce.ffn.b2", &b2);
    out.emplace_back("pce.ln.g", &ln_g);
    out.emplace_back("pce.ln.b", &ln_b);
  }
};

struct PceOutput {
  Tensor psi;           // [D_h]
  Tensor attn_weights;  // [N_q × num_heads], softmax over the single key
};

/// Encodes a design vector into ψ. The projected design vector is the only
/// key/value token, so every query's attention weight is exactly 1 and each
/// head reduces to its value projection; the computation still runs the full
/// scaled-dot-product path.
inline PceOutput pce_encode_traced(const Tensor& d, const PceParams& p, const PceConfig& cfg) {
  if (d.numel() != cfg.input_dim) {
    throw DimensionError("design vector has " + std::to_string(d.numel()) + " entries, expected D_in = " +
                         std::to_string(cfg.input_dim));
  }
  const std::size_t h = cfg.hidden_dim, heads = cfg.num_heads, dh = h / heads;
  const Tensor x = affine(reshape(d, {1, cfg.input_dim}), p.proj_w, p.proj_b);  // 1 × D_h
  const Tensor q = matmul(p.queries, p.wq);                                       // N_q × D_h
  const Tensor k = matmul(x, p.wk);                                               // 1 × D_h
  const Tensor v = matmul(x, p.wv);                                               // 1 × D_h
  std::vector<Tensor> head_out, weights;
  for (std::size_t i = 0; i < heads; ++i) {
    const Tensor qh = slice_cols(q, i * dh, (i + 1) * dh);
    const Tensor kh = slice_cols(k, i * dh, (i + 1) * dh);
    const Tensor vh = slice_cols(v, i * dh, (i + 1) * dh);
    const Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    const Tensor w = softmax_rows(scores);  // N_q × 1
    weights.push_back(w);
    head_out.push_back(matmul(w, vh));
  }
  const Tensor q1 = matmul(concat_cols(head_out), p.wo);
  const Tensor ffn = affine(gelu(affine(q1, p.w1, p.b1)), p.w2, p.b2);
  const Tensor q2 = layer_norm(add(q1, ffn), p.ln_g, p.ln_b, cfg.ln_eps);
  return {reduce(q2, 0, Reduction::kMean), concat_cols(weights).detach()};
}

inline Tensor pce_encode(const Tensor& d, const PceParams& p, const PceConfig& cfg) {
  return pce_encode_traced(d, p, cfg).psi;
}

/// Rows [x_i ‖ ψ]: the same context appended to every point.
inline Tensor broadcast_concat(const Tensor& psi, const Tensor& coords) {
  if (coords.rank() != 2 || coords.cols() != 3) {
    throw DimensionError("coords must be N x 3, got " + shape_str(coords.shape()));
  }
  if (coords.rows() == 0) throw DimensionError("broadcast_concat: empty point cloud");
  return concat_cols({coords, broadcast_rows(psi, coords.rows())});
}

struct EmbedParams {
  Tensor w, b;

  static EmbedParams init(std::size_t in, std::size_t out, Rng& rng) {
    return {fan_in_uniform(in, out, rng), Tensor::zeros({out})};
  }

  void collect(ParamRefs& out) {
    out.emplace_back("embed.w", &w);
    out.emplace_back("embed.b", &b);
  }
};

/// Lifts conditioned points to the attention width: gelu(x·W + b).
inline Tensor embed_input(const Tensor& conditioned, const EmbedParams& p) {
  return gelu(affine(conditioned, p.w, p.b));
}

}  // namespace lrq
