#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "lrq/init.hpp"
#include "lrq/ops.hpp"
#include "lrq/params.hpp"

namespace lrq {

struct LrqaConfig {
  std::size_t feature_dim = 64;
  std::size_t num_layers = 4;
  double residual_alpha = 1.0;
  double rope_base = 10000.0;
  std::array<std::size_t, 3> rope_axis_split{};  // all zero: use default_axis_split
  bool normalize_covariance = true;
};

/// Splits C/2 rotary pairs over the three axes as evenly as possible, earlier
/// axes taking the remainder. Returned sizes count channels.
inline std::array<std::size_t, 3> default_axis_split(std::size_t c) {
  if (c == 0 || c % 2 != 0) throw ConfigError("feature_dim must be a positive even number, got " + std::to_string(c));
  const std::size_t pairs = c / 2;
  std::array<std::size_t, 3> g{};
  for (std::size_t a = 0; a < 3; ++a) g[a] = 2 * (pairs / 3 + (a < pairs % 3 ? 1 : 0));
  return g;
}

inline std::array<std::size_t, 3> axis_split(const LrqaConfig& cfg) {
  const auto& s = cfg.rope_axis_split;
  if (s[0] == 0 && s[1] == 0 && s[2] == 0) return default_axis_split(cfg.feature_dim);
  if (s[0] + s[1] + s[2] != cfg.feature_dim || s[0] % 2 || s[1] % 2 || s[2] % 2) {
    throw ConfigError("rope_axis_split " + std::to_string(s[0]) + "/" + std::to_string(s[1]) + "/" +
                      std::to_string(s[2]) + " must be even and sum to feature_dim " +
                      std::to_string(cfg.feature_dim));
  }
  return s;
}

inline void validate(const LrqaConfig& cfg) {
  if (cfg.num_layers < 1) throw ConfigError("num_layers must be at least 1");
  if (!std::isfinite(cfg.residual_alpha)) throw ConfigError("residual_alpha must be finite");
  if (!(cfg.rope_base > 1.0)) throw ConfigError("rope_base must exceed 1");
  axis_split(cfg);
}

// ---------------------------------------------------------------------------
// Rotary embedding over 3-D coordinates

/// Per-axis affine map that sends mean ± √3·std of the cloud to ±π. For a
/// uniform fill of an interval this is its bounding box; unlike the raw
/// extremes it barely moves when the cloud is resampled.
struct CoordNormalizer {
  std::array<double, 3> center{};
  std::array<double, 3> scale{};  // multiplies (x − center); 0 for a degenerate axis

  static CoordNormalizer fit(const Tensor& coords) {
    if (coords.rank() != 2 || coords.cols() != 3) {
      throw DimensionError("coords must be N x 3, got " + shape_str(coords.shape()));
    }
    const std::size_t n = coords.rows();
    if (n == 0) throw DimensionError("empty point cloud");
    CoordNormalizer z;
    for (std::size_t a = 0; a < 3; ++a) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += coords[i * 3 + a];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (coords[i * 3 + a] - mean) * (coords[i * 3 + a] - mean);
      const double sd = std::sqrt(var / static_cast<double>(n));
      z.center[a] = mean;
      z.scale[a] = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? std::numbers::pi / (std::sqrt(3.0) * sd) : 0.0;
    }
    return z;
  }

  double apply(double x, std::size_t axis) const { return (x - center[axis]) * scale[axis]; }
};

/// Rotation tables for rows [row0, row0 + rows) of a cloud: N × C/2 cosines
/// and sines, one per channel pair.
struct RopeTables {
  Tensor cos;
  Tensor sin;
};

/// Angle of pair j within an axis group of g channels: x · base^(−2j/g).
inline RopeTables rope_tables(const Tensor& coords, const CoordNormalizer& norm, const LrqaConfig& cfg,
                              std::size_t row0, std::size_t rows) {
  const auto split = axis_split(cfg);
  const std::size_t p = cfg.feature_dim / 2;
  if (row0 + rows > coords.rows()) throw DimensionError("rope_tables: row range outside coords");
  std::vector<double> freq;
  std::vector<std::size_t> axis_of;
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t g = split[a];
    for (std::size_t j = 0; j < g / 2; ++j) {
      freq.push_back(std::pow(cfg.rope_base, -2.0 * static_cast<double>(j) / static_cast<double>(g)));
      axis_of.push_back(a);
    }
  }
  Buffer c(rows * p), s(rows * p);
  for (std::size_t r = 0; r < rows; ++r) {
    std::array<double, 3> x{};
    for (std::size_t a = 0; a < 3; ++a) x[a] = norm.apply(coords[(row0 + r) * 3 + a], a);
    for (std::size_t k = 0; k < p; ++k) {
      const double th = x[axis_of[k]] * freq[k];
      c[r * p + k] = std::cos(th);
      s[r * p + k] = std::sin(th);
    }
  }
  return {Tensor({rows, p}, std::move(c)), Tensor({rows, p}, std::move(s))};
}

inline RopeTables rope_tables(const Tensor& coords, const LrqaConfig& cfg) {
  return rope_tables(coords, CoordNormalizer::fit(coords), cfg, 0, coords.rows());
}

/// Rotates q and k by the coordinate-dependent angles of each row.
inline std::pair<Tensor, Tensor> rope_apply(const Tensor& q, const Tensor& k, const Tensor& coords,
                                            const LrqaConfig& cfg) {
  if (q.shape() != k.shape() || q.rank() != 2 || q.cols() != cfg.feature_dim || coords.rows() != q.rows()) {
    throw DimensionError("rope_apply: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", coords " +
                         shape_str(coords.shape()) + " inconsistent with feature_dim " +
                         std::to_string(cfg.feature_dim));
  }
  const RopeTables t = rope_tables(coords, cfg);
  return {rotate_pairs(q, t.cos, t.sin), rotate_pairs(k, t.cos, t.sin)};
}

// ---------------------------------------------------------------------------
// Attention kernels

/// Z = Q·(C_k·C_v) with C_k = KᵀK and C_v = VᵀV, optionally divided by N.
/// Cost O(NC² + C³); nothing N×N is ever formed.
inline Tensor covariance_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool normalize = false) {
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("covariance_attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()) + " must share one N x C shape");
  }
  if (q.rows() == 0) throw DimensionError("covariance_attention: empty point set");
  Tensor ck = matmul_tn(k, k);
  Tensor cv = matmul_tn(v, v);
  if (normalize) {
    const double inv_n = 1.0 / static_cast<double>(q.rows());
    ck = scale(ck, inv_n);
    cv = scale(cv, inv_n);
  }
  return matmul(q, matmul(ck, cv));
}

/// (Q·C_k)·C_v evaluated left to right; the reference for reassociation.
inline Tensor covariance_attention_left(const Tensor& q, const Tensor& k, const Tensor& v) {
  return matmul(matmul(q, matmul_tn(k, k)), matmul_tn(v, v));
}

/// Softmax-free standard attention Q·Kᵀ·V, reassociated as Q·(KᵀV): O(NC²).
inline Tensor standard_attention_associative(const Tensor& q, const Tensor& k, const Tensor& v) {
  return matmul(q, matmul_tn(k, v));
}

/// Standard attention with the N×N score matrix Q·Kᵀ formed explicitly.
inline Tensor standard_attention_materialized(const Tensor& q, const Tensor& k, const Tensor& v) {
  return matmul(matmul(q, transpose(k)), v);
}

struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
};

/// Both sides of ‖Z − Z_std‖_F ≤ ‖Q‖_F·‖K‖_F·‖K − K·KᵀK‖_F in the symmetric
/// case V = K, with unnormalized covariances.
inline BoundCheck verify_lowrank_bound(const Tensor& k, const Tensor& q) {
  if (k.rank() != 2 || k.shape() != q.shape()) {
    throw DimensionError("bound check: k " + shape_str(k.shape()) + " and q " + shape_str(q.shape()) + " differ");
  }
  const Tensor z = covariance_attention(q, k, k, false);
  const Tensor z_std = standard_attention_associative(q, k, k);
  const Tensor kkk = matmul(k, matmul_tn(k, k));
  BoundCheck r;
  r.lhs = frobenius_norm(sub(z, z_std)).item();
  r.rhs = frobenius_norm(q).item() * frobenius_norm(k).item() * frobenius_norm(sub(k, kkk)).item();
  return r;
}

// ---------------------------------------------------------------------------
// Layer

struct LrqaLayerParams {
  Tensor wq, wk, wv, wout, bias;

  static LrqaLayerParams init(std::size_t c, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(c));
    LrqaLayerParams p;
    p.wq = uniform_tensor({c, c}, bound, rng);
    p.wk = uniform_tensor({c, c}, bound, rng);
    p.wv = uniform_tensor({c, c}, bound, rng);
    p.wout = Tensor::zeros({c, c});
    p.bias = Tensor::zeros({c});
    return p;
  }

  void collect(ParamRefs& out, const std::string& prefix) {
    out.emplace_back(prefix + ".WQ", &wq);
    out.emplace_back(prefix + ".WK", &wk);
    out.emplace_back(prefix + ".WV", &wv);
    out.emplace_back(prefix + ".Wout", &wout);
    out.emplace_back(prefix + ".bias", &bias);
  }
};

/// One residual layer: α·x + Z·W_out + bias, with Z the covariance attention
/// of the rotary-embedded projections.
inline Tensor lrqa_layer_forward(const Tensor& x, const RopeTables& rope, const LrqaLayerParams& p,
                                 const LrqaConfig& cfg) {
  if (x.rank() != 2 || x.cols() != cfg.feature_dim || rope.cos.rows() != x.rows()) {
    throw DimensionError("lrqa layer: input " + shape_str(x.shape()) + " inconsistent with feature_dim " +
                         std::to_string(cfg.feature_dim) + " or rotary tables " + shape_str(rope.cos.shape()));
  }
  const Tensor q = rotate_pairs(matmul(x, p.wq), rope.cos, rope.sin);
  const Tensor k = rotate_pairs(matmul(x, p.wk), rope.cos, rope.sin);
  const Tensor v = matmul(x, p.wv);
  const Tensor z = covariance_attention(q, k, v, cfg.normalize_covariance);
  const Tensor skip = cfg.residual_alpha == 1.0 ? x : scale(x, cfg.residual_alpha);
  return add(skip, affine(z, p.wout, p.bias));
}

inline Tensor lrqa_layer_forward(const Tensor& x, const Tensor& coords, const LrqaLayerParams& p,
                                 const LrqaConfig& cfg) {
  return lrqa_layer_forward(x, rope_tables(coords, cfg), p, cfg);
}

/// Tape-free forward of one layer that touches the cloud in row chunks, so
/// only x, the output and O(chunk·C + C²) scratch are ever live. Produces the
/// same bits as lrqa_layer_forward.
inline Tensor lrqa_layer_forward_streaming(const Tensor& x, const Tensor& coords, const LrqaLayerParams& p,
                                           const LrqaConfig& cfg, std::size_t chunk = 8192) {
  const std::size_t n = x.rows(), c = cfg.feature_dim;
  if (x.cols() != c || coords.rows() != n) throw DimensionError("streaming lrqa layer: shape mismatch");
  if (chunk == 0) throw ConfigError("chunk must be positive");
  const CoordNormalizer norm = CoordNormalizer::fit(coords);
  auto rows_of = [&](std::size_t r0, std::size_t r1) {
    Buffer b(x.data() + r0 * c, x.data() + r1 * c);
    return Tensor({r1 - r0, c}, std::move(b));
  };

  Buffer ck(c * c, 0.0), cv(c * c, 0.0);
  for (std::size_t r0 = 0; r0 < n; r0 += chunk) {
    const std::size_t r1 = std::min(n, r0 + chunk);
    const Tensor xc = rows_of(r0, r1);
    const RopeTables t = rope_tables(coords, norm, cfg, r0, r1 - r0);
    const Tensor k = rotate_pairs(matmul(xc, p.wk), t.cos, t.sin);
    const Tensor v = matmul(xc, p.wv);
    kernels::gemm_tn(r1 - r0, c, c, k.data(), k.data(), ck.data());
    kernels::gemm_tn(r1 - r0, c, c, v.data(), v.data(), cv.data());
  }
  Tensor ckt({c, c}, std::move(ck)), cvt({c, c}, std::move(cv));
  if (cfg.normalize_covariance) {
    const double inv_n = 1.0 / static_cast<double>(n);
    ckt = scale(ckt, inv_n);
    cvt = scale(cvt, inv_n);
  }
  const Tensor m = matmul(ckt, cvt);

  Buffer out(n * c);
  for (std::size_t r0 = 0; r0 < n; r0 += chunk) {
    const std::size_t r1 = std::min(n, r0 + chunk);
    const Tensor xc = rows_of(r0, r1);
    const RopeTables t = rope_tables(coords, norm, cfg, r0, r1 - r0);
    const Tensor q = rotate_pairs(matmul(xc, p.wq), t.cos, t.sin);
    const Tensor z = matmul(q, m);
    const Tensor skip = cfg.residual_alpha == 1.0 ? xc : scale(xc, cfg.residual_alpha);
    const Tensor y = add(skip, affine(z, p.wout, p.bias));
    std::copy(y.data(), y.data() + y.numel(), out.data() + r0 * c);
  }
  return Tensor({n, c}, std::move(out));
}

}  // namespace lrq
