#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lrq/kernels.hpp"
#include "lrq/tape.hpp"
#include "lrq/tensor.hpp"

namespace lrq {

enum class Elementwise { kAdd, kSub, kMul, kDiv, kScale };
enum class Activation { kRelu, kGelu, kTanh };
enum class Reduction { kMean, kSum, kMax, kFrobeniusNorm };

namespace detail {

inline Tape* common_tape(std::initializer_list<const Tensor*> xs) {
  Tape* tape = nullptr;
  for (const Tensor* x : xs) {
    if (!x->tracked()) continue;
    if (tape && tape != x->tape()) throw Error("operands are recorded on different tapes");
    tape = x->tape();
  }
  return tape;
}

inline Tensor finish(OpKind kind, Tensor value, std::initializer_list<const Tensor*> inputs,
                     BackwardFn backward) {
  if (Tape* tape = common_tape(inputs)) return tape->record(kind, std::move(value), inputs, std::move(backward));
  return value;
}

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

inline void axpy(std::span<const double> x, double a, Buffer& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline constexpr double kGeluCoeff = 0.044715;
inline const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Buffer out(m * n, 0.0);
  kernels::gemm_nn(m, k, n, a.data(), b.data(), out.data());
  return detail::finish(OpKind::kMatmul, Tensor({m, n}, std::move(out)), {&a, &b},
                        [a = a.detach(), b = b.detach(), m, k, n](std::span<const double> g,
                                                                  std::span<Buffer* const> in) {
                          if (in[0]) {
                            Buffer bt(n * k);
                            kernels::transpose(k, n, b.data(), bt.data());
                            kernels::gemm_nn(m, n, k, g.data(), bt.data(), in[0]->data());
                          }
                          if (in[1]) kernels::gemm_tn(m, k, n, a.data(), g.data(), in[1]->data());
                        });
}

/// aᵀ·b without materializing the transpose.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul_tn");
  detail::require_rank2(b, "matmul_tn");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != m) {
    throw DimensionError("matmul_tn: row counts differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  Buffer out(k * n, 0.0);
  kernels::gemm_tn(m, k, n, a.data(), b.data(), out.data());
  return detail::finish(OpKind::kMatmul, Tensor({k, n}, std::move(out)), {&a, &b},
                        [a = a.detach(), b = b.detach(), m, k, n](std::span<const double> g,
                                                                  std::span<Buffer* const> in) {
                          // d(a) = b·gᵀ, d(b) = a·g
                          if (in[0]) {
                            Buffer gt(n * k);
                            kernels::transpose(k, n, g.data(), gt.data());
                            kernels::gemm_nn(m, n, k, b.data(), gt.data(), in[0]->data());
                          }
                          if (in[1]) kernels::gemm_nn(m, k, n, a.data(), g.data(), in[1]->data());
                        });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Buffer out(m * n);
  kernels::transpose(m, n, a.data(), out.data());
  return detail::finish(OpKind::kTranspose, Tensor({n, m}, std::move(out)), {&a},
                        [m, n](std::span<const double> g, std::span<Buffer* const> in) {
                          Buffer gt(m * n);
                          kernels::transpose(n, m, g.data(), gt.data());
                          detail::axpy(gt, 1.0, *in[0]);
                        });
}

/// x·w + b with the bias added to every row.
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require_rank2(x, "affine");
  detail::require_rank2(w, "affine");
  const std::size_t n = x.rows(), i = x.cols(), o = w.cols();
  if (w.rows() != i || b.numel() != o) {
    throw DimensionError("affine: incompatible shapes " + shape_str(x.shape()) + ", " +
                         shape_str(w.shape()) + ", " + shape_str(b.shape()));
  }
  Buffer out(n * o);
  for (std::size_t r = 0; r < n; ++r) std::copy(b.data(), b.data() + o, out.data() + r * o);
  kernels::gemm_nn(n, i, o, x.data(), w.data(), out.data());
  return detail::finish(
      OpKind::kAffine, Tensor({n, o}, std::move(out)), {&x, &w, &b},
      [x = x.detach(), w = w.detach(), n, i, o](std::span<const double> g,
                                                std::span<Buffer* const> in) {
        if (in[0]) {
          Buffer wt(o * i);
          kernels::transpose(i, o, w.data(), wt.data());
          kernels::gemm_nn(n, o, i, g.data(), wt.data(), in[0]->data());
        }
        if (in[1]) kernels::gemm_tn(n, i, o, x.data(), g.data(), in[1]->data());
        if (in[2]) {
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < o; ++c) (*in[2])[c] += g[r * o + c];
        }
      });
}

// ---------------------------------------------------------------------------
// Pointwise arithmetic

/// Tensor-tensor pointwise op. Shapes must agree, or one side must hold a
/// single element, which is then broadcast.
inline Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind) {
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw DimensionError("elementwise: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const Shape shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  auto av = [&](std::size_t i) { return a_scalar ? a[0] : a[i]; };
  auto bv = [&](std::size_t i) { return b_scalar ? b[0] : b[i]; };
  Buffer out(n);
  switch (kind) {
    case Elementwise::kAdd:
      for (std::size_t i = 0; i < n; ++i) out[i] = av(i) + bv(i);
      break;
    case Elementwise::kSub:
      for (std::size_t i = 0; i < n; ++i) out[i] = av(i) - bv(i);
      break;
    case Elementwise::kMul:
    case Elementwise::kScale:
      for (std::size_t i = 0; i < n; ++i) out[i] = av(i) * bv(i);
      break;
    case Elementwise::kDiv:
      for (std::size_t i = 0; i < n; ++i) {
        if (bv(i) == 0.0) throw NumericError("elementwise: division by zero at index " + std::to_string(i));
        out[i] = av(i) / bv(i);
      }
      break;
  }
  return detail::finish(
      OpKind::kElementwise, Tensor(shape, std::move(out)), {&a, &b},
      [a = a.detach(), b = b.detach(), a_scalar, b_scalar, kind, n](std::span<const double> g,
                                                                    std::span<Buffer* const> in) {
        auto av = [&](std::size_t i) { return a_scalar ? a[0] : a[i]; };
        auto bv = [&](std::size_t i) { return b_scalar ? b[0] : b[i]; };
        auto acc = [](Buffer* dst, bool scalar, std::size_t i, double v) {
          if (!dst) return;
          (*dst)[scalar ? 0 : i] += v;
        };
        for (std::size_t i = 0; i < n; ++i) {
          switch (kind) {
            case Elementwise::kAdd:
              acc(in[0], a_scalar, i, g[i]);
              acc(in[1], b_scalar, i, g[i]);
              break;
            case Elementwise::kSub:
              acc(in[0], a_scalar, i, g[i]);
              acc(in[1], b_scalar, i, -g[i]);
              break;
            case Elementwise::kMul:
            case Elementwise::kScale:
              acc(in[0], a_scalar, i, g[i] * bv(i));
              acc(in[1], b_scalar, i, g[i] * av(i));
              break;
            case Elementwise::kDiv: {
              const double inv = 1.0 / bv(i);
              acc(in[0], a_scalar, i, g[i] * inv);
              acc(in[1], b_scalar, i, -g[i] * av(i) * inv * inv);
              break;
            }
          }
        }
      });
}

/// Tensor-constant pointwise op.
inline Tensor elementwise(const Tensor& a, double s, Elementwise kind) {
  if (kind == Elementwise::kDiv && s == 0.0) throw NumericError("elementwise: division by zero scalar");
  const std::size_t n = a.numel();
  Buffer out(n);
  double slope = 1.0;
  switch (kind) {
    case Elementwise::kAdd:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + s;
      break;
    case Elementwise::kSub:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - s;
      break;
    case Elementwise::kMul:
    case Elementwise::kScale:
      slope = s;
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
      break;
    case Elementwise::kDiv:
      slope = 1.0 / s;
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / s;
      break;
  }
  return detail::finish(OpKind::kScalarOp, Tensor(a.shape(), std::move(out)), {&a},
                        [slope](std::span<const double> g, std::span<Buffer* const> in) {
                          detail::axpy(g, slope, *in[0]);
                        });
}

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::kAdd); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::kSub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::kMul); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::kDiv); }
inline Tensor scale(const Tensor& a, double s) { return elementwise(a, s, Elementwise::kScale); }
inline Tensor add_scalar(const Tensor& a, double s) { return elementwise(a, s, Elementwise::kAdd); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Nonlinearities

inline double gelu_value(double x) {
  const double u = detail::kSqrt2OverPi * (x + detail::kGeluCoeff * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_slope(double x) {
  const double u = detail::kSqrt2OverPi * (x + detail::kGeluCoeff * x * x * x);
  const double t = std::tanh(u);
  const double du = detail::kSqrt2OverPi * (1.0 + 3.0 * detail::kGeluCoeff * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

/// GELU uses the tanh approximation with cubic coefficient 0.044715.
inline Tensor activation(const Tensor& x, Activation kind) {
  const std::size_t n = x.numel();
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    switch (kind) {
      case Activation::kRelu:
        out[i] = v > 0.0 ? v : 0.0;
        break;
      case Activation::kGelu:
        out[i] = gelu_value(v);
        break;
      case Activation::kTanh:
        out[i] = std::tanh(v);
        break;
    }
  }
  Tensor y(x.shape(), std::move(out));
  return detail::finish(OpKind::kActivation, y, {&x},
                        [x = x.detach(), y = y.detach(), kind, n](std::span<const double> g,
                                                                  std::span<Buffer* const> in) {
                          Buffer& d = *in[0];
                          for (std::size_t i = 0; i < n; ++i) {
                            double slope = 0.0;
                            switch (kind) {
                              case Activation::kRelu:
                                slope = x[i] > 0.0 ? 1.0 : 0.0;
                                break;
                              case Activation::kGelu:
                                slope = gelu_slope(x[i]);
                                break;
                              case Activation::kTanh:
                                slope = 1.0 - y[i] * y[i];
                                break;
                            }
                            d[i] += g[i] * slope;
                          }
                        });
}

inline Tensor relu(const Tensor& x) { return activation(x, Activation::kRelu); }
inline Tensor gelu(const Tensor& x) { return activation(x, Activation::kGelu); }

inline Tensor square(const Tensor& x) { return mul(x, x); }

/// Pointwise square root. The derivative at exactly zero is taken as zero.
inline Tensor sqrt(const Tensor& x) {
  const std::size_t n = x.numel();
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] < 0.0) throw NumericError("sqrt of negative value");
    out[i] = std::sqrt(x[i]);
  }
  Tensor y(x.shape(), std::move(out));
  return detail::finish(OpKind::kActivation, y, {&x},
                        [y = y.detach(), n](std::span<const double> g, std::span<Buffer* const> in) {
                          for (std::size_t i = 0; i < n; ++i)
                            if (y[i] > 0.0) (*in[0])[i] += g[i] * 0.5 / y[i];
                        });
}

// ---------------------------------------------------------------------------
// Normalization and reductions

/// Row-wise layer normalization with learned gain and bias over the last axis.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  detail::require_rank2(x, "layer_norm");
  if (!(eps > 0.0)) throw NumericError("layer_norm: eps must be positive");
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d) throw DimensionError("layer_norm: gain/bias length must equal row width");
  Buffer xhat(n * d), inv_std(n), out(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (xr[c] - mean) * inv_std[r];
      out[r * d + c] = xhat[r * d + c] * gain[c] + bias[c];
    }
  }
  return detail::finish(
      OpKind::kLayerNorm, Tensor({n, d}, std::move(out)), {&x, &gain, &bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), gain = gain.detach(), n, d](
          std::span<const double> g, std::span<Buffer* const> in) {
        Buffer dxhat(d);
        for (std::size_t r = 0; r < n; ++r) {
          const double* gr = g.data() + r * d;
          const double* hr = xhat.data() + r * d;
          if (in[1])
            for (std::size_t c = 0; c < d; ++c) (*in[1])[c] += gr[c] * hr[c];
          if (in[2])
            for (std::size_t c = 0; c < d; ++c) (*in[2])[c] += gr[c];
          if (!in[0]) continue;
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            dxhat[c] = gr[c] * gain[c];
            mean_dh += dxhat[c];
            mean_dh_h += dxhat[c] * hr[c];
          }
          mean_dh /= static_cast<double>(d);
          mean_dh_h /= static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c)
            (*in[0])[r * d + c] += inv_std[r] * (dxhat[c] - mean_dh - hr[c] * mean_dh_h);
        }
      });
}

/// Reduces along `axis`, or over every element when `axis` is empty. The
/// Frobenius norm is the Euclidean norm of the reduced elements.
inline Tensor reduce(const Tensor& x, std::optional<std::size_t> axis, Reduction kind) {
  std::size_t outer = 1, extent = x.numel(), inner = 1;
  Shape out_shape;
  if (axis) {
    if (*axis >= x.rank()) {
      throw DimensionError("reduce: axis " + std::to_string(*axis) + " out of range for " +
                           shape_str(x.shape()));
    }
    extent = x.dim(*axis);
    for (std::size_t i = 0; i < *axis; ++i) outer *= x.dim(i);
    for (std::size_t i = *axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(*axis));
  }
  if (extent == 0) throw DimensionError("reduce: empty axis");
  Buffer out(outer * inner);
  std::vector<std::size_t> argmax(kind == Reduction::kMax ? outer * inner : 0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const double* base = x.data() + o * extent * inner + i;
      double acc = kind == Reduction::kMax ? base[0] : 0.0;
      std::size_t best = 0;
      for (std::size_t e = 0; e < extent; ++e) {
        const double v = base[e * inner];
        switch (kind) {
          case Reduction::kMean:
          case Reduction::kSum:
            acc += v;
            break;
          case Reduction::kMax:
            if (v > acc) {
              acc = v;
              best = e;
            }
            break;
          case Reduction::kFrobeniusNorm:
            acc += v * v;
            break;
        }
      }
      if (kind == Reduction::kMean) acc /= static_cast<double>(extent);
      if (kind == Reduction::kFrobeniusNorm) acc = std::sqrt(acc);
      if (kind == Reduction::kMax) argmax[o * inner + i] = best;
      out[o * inner + i] = acc;
    }
  }
  Tensor y(out_shape, std::move(out));
  return detail::finish(
      OpKind::kReduce, y, {&x},
      [x = x.detach(), y = y.detach(), argmax = std::move(argmax), kind, outer, extent, inner](
          std::span<const double> g, std::span<Buffer* const> in) {
        Buffer& d = *in[0];
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t oi = o * inner + i;
            const std::size_t base = o * extent * inner + i;
            switch (kind) {
              case Reduction::kSum:
                for (std::size_t e = 0; e < extent; ++e) d[base + e * inner] += g[oi];
                break;
              case Reduction::kMean:
                for (std::size_t e = 0; e < extent; ++e)
                  d[base + e * inner] += g[oi] / static_cast<double>(extent);
                break;
              case Reduction::kMax:
                d[base + argmax[oi] * inner] += g[oi];
                break;
              case Reduction::kFrobeniusNorm:
                if (y[oi] > 0.0)
                  for (std::size_t e = 0; e < extent; ++e)
                    d[base + e * inner] += g[oi] * x[base + e * inner] / y[oi];
                break;
            }
          }
        }
      });
}

inline Tensor sum(const Tensor& x) { return reduce(x, std::nullopt, Reduction::kSum); }
inline Tensor mean(const Tensor& x) { return reduce(x, std::nullopt, Reduction::kMean); }
inline Tensor frobenius_norm(const Tensor& x) { return reduce(x, std::nullopt, Reduction::kFrobeniusNorm); }

/// Row-wise softmax, stabilized by subtracting each row's maximum.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_rank2(x, "softmax_rows");
  const std::size_t n = x.rows(), m = x.cols();
  if (m == 0) throw DimensionError("softmax_rows: empty rows");
  Buffer out(n * m);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.data() + r * m;
    const double mx = *std::max_element(xr, xr + m);
    double z = 0.0;
    for (std::size_t c = 0; c < m; ++c) z += (out[r * m + c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] /= z;
  }
  Tensor y({n, m}, std::move(out));
  return detail::finish(OpKind::kSoftmax, y, {&x},
                        [y = y.detach(), n, m](std::span<const double> g, std::span<Buffer* const> in) {
                          for (std::size_t r = 0; r < n; ++r) {
                            double dot = 0.0;
                            for (std::size_t c = 0; c < m; ++c) dot += g[r * m + c] * y[r * m + c];
                            for (std::size_t c = 0; c < m; ++c)
                              (*in[0])[r * m + c] += y[r * m + c] * (g[r * m + c] - dot);
                          }
                        });
}

// ---------------------------------------------------------------------------
// Structural ops

/// Same values under a new shape; unlike Tensor::reshaped it stays on the tape.
inline Tensor reshape(const Tensor& x, Shape shape) {
  return detail::finish(OpKind::kSlice, x.reshaped(std::move(shape)), {&x},
                        [](std::span<const double> g, std::span<Buffer* const> in) { detail::axpy(g, 1.0, *in[0]); });
}

/// Columns [begin, end) of a matrix.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank2(x, "slice_cols");
  const std::size_t n = x.rows(), m = x.cols();
  if (begin > end || end > m) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  Buffer out(n * w);
  for (std::size_t r = 0; r < n; ++r)
    std::copy(x.data() + r * m + begin, x.data() + r * m + end, out.data() + r * w);
  return detail::finish(OpKind::kSlice, Tensor({n, w}, std::move(out)), {&x},
                        [n, m, w, begin](std::span<const double> g, std::span<Buffer* const> in) {
                          for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t c = 0; c < w; ++c) (*in[0])[r * m + begin + c] += g[r * w + c];
                        });
}

inline Tensor col(const Tensor& x, std::size_t j) { return slice_cols(x, j, j + 1); }

/// Horizontal concatenation of matrices with equal row counts.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::vector<std::size_t> widths, offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.rows() != n) throw DimensionError("concat_cols: row counts differ");
    offsets.push_back(total);
    widths.push_back(p.cols());
    total += p.cols();
  }
  Buffer out(n * total);
  for (std::size_t k = 0; k < parts.size(); ++k)
    for (std::size_t r = 0; r < n; ++r)
      std::copy(parts[k].data() + r * widths[k], parts[k].data() + (r + 1) * widths[k],
                out.data() + r * total + offsets[k]);
  Tensor value({n, total}, std::move(out));

  Tape* tape = nullptr;
  for (const auto& p : parts) {
    if (!p.tracked()) continue;
    if (tape && tape != p.tape()) throw Error("operands are recorded on different tapes");
    tape = p.tape();
  }
  if (!tape) return value;
  std::vector<const Tensor*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  BackwardFn fn = [n, total, widths, offsets](std::span<const double> g, std::span<Buffer* const> in) {
    for (std::size_t k = 0; k < in.size(); ++k) {
      if (!in[k]) continue;
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < widths[k]; ++c) (*in[k])[r * widths[k] + c] += g[r * total + offsets[k] + c];
    }
  };
  return tape->record_many(OpKind::kConcat, std::move(value), ptrs, std::move(fn));
}

/// Rows `index[0], index[1], ...` of a matrix (repeats allowed).
inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  detail::require_rank2(x, "gather_rows");
  const std::size_t n = x.rows(), m = x.cols();
  Buffer out(index.size() * m);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n) {
      throw DimensionError("gather_rows: index " + std::to_string(index[r]) + " out of range for " +
                           std::to_string(n) + " rows");
    }
    std::copy(x.data() + index[r] * m, x.data() + (index[r] + 1) * m, out.data() + r * m);
  }
  return detail::finish(OpKind::kGather, Tensor({index.size(), m}, std::move(out)), {&x},
                        [idx = std::vector<std::size_t>(index.begin(), index.end()), m](
                            std::span<const double> g, std::span<Buffer* const> in) {
                          for (std::size_t r = 0; r < idx.size(); ++r)
                            for (std::size_t c = 0; c < m; ++c) (*in[0])[idx[r] * m + c] += g[r * m + c];
                        });
}

/// Repeats a length-d vector (or 1×d matrix) as the rows of an n×d matrix.
inline Tensor broadcast_rows(const Tensor& v, std::size_t n) {
  const std::size_t d = v.numel();
  Buffer out(n * d);
  for (std::size_t r = 0; r < n; ++r) std::copy(v.data(), v.data() + d, out.data() + r * d);
  return detail::finish(OpKind::kBroadcast, Tensor({n, d}, std::move(out)), {&v},
                        [n, d](std::span<const double> g, std::span<Buffer* const> in) {
                          for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t c = 0; c < d; ++c) (*in[0])[c] += g[r * d + c];
                        });
}

/// diag(s)·x: row r of x scaled by s[r].
inline Tensor scale_rows(const Tensor& x, const Tensor& s) {
  detail::require_rank2(x, "scale_rows");
  const std::size_t n = x.rows(), m = x.cols();
  if (s.numel() != n) throw DimensionError("scale_rows: need one factor per row");
  Buffer out(n * m);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] = x[r * m + c] * s[r];
  return detail::finish(OpKind::kScaleRows, Tensor({n, m}, std::move(out)), {&x, &s},
                        [x = x.detach(), s = s.detach(), n, m](std::span<const double> g,
                                                               std::span<Buffer* const> in) {
                          for (std::size_t r = 0; r < n; ++r) {
                            for (std::size_t c = 0; c < m; ++c) {
                              if (in[0]) (*in[0])[r * m + c] += g[r * m + c] * s[r];
                              if (in[1]) (*in[1])[r] += g[r * m + c] * x[r * m + c];
                            }
                          }
                        });
}

/// Rotates consecutive channel pairs (2p, 2p+1) of each row by the angle whose
/// cosine/sine are given per row and pair.
inline Tensor rotate_pairs(const Tensor& x, const Tensor& cos, const Tensor& sin) {
  detail::require_rank2(x, "rotate_pairs");
  const std::size_t n = x.rows(), c = x.cols(), p = c / 2;
  if (c % 2 != 0 || cos.numel() != n * p || sin.numel() != n * p) {
    throw DimensionError("rotate_pairs: need even width and n x width/2 angle tables");
  }
  Buffer out(n * c);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < p; ++k) {
      const double x0 = x[r * c + 2 * k], x1 = x[r * c + 2 * k + 1];
      const double co = cos[r * p + k], si = sin[r * p + k];
      out[r * c + 2 * k] = x0 * co - x1 * si;
      out[r * c + 2 * k + 1] = x0 * si + x1 * co;
    }
  }
  return detail::finish(OpKind::kRotate, Tensor({n, c}, std::move(out)), {&x},
                        [cos = cos.detach(), sin = sin.detach(), n, c, p](std::span<const double> g,
                                                                          std::span<Buffer* const> in) {
                          for (std::size_t r = 0; r < n; ++r) {
                            for (std::size_t k = 0; k < p; ++k) {
                              const double g0 = g[r * c + 2 * k], g1 = g[r * c + 2 * k + 1];
                              const double co = cos[r * p + k], si = sin[r * p + k];
                              (*in[0])[r * c + 2 * k] += g0 * co + g1 * si;
                              (*in[0])[r * c + 2 * k + 1] += -g0 * si + g1 * co;
                            }
                          }
                        });
}

}  // namespace lrq
