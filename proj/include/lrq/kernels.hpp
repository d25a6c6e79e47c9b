#pragma once

#include <cstddef>

// Raw dense kernels on row-major storage. Every output element is reduced
// strictly in order over the inner index, starting from its incoming value,
// so results are bitwise reproducible for a given build no matter how the
// loops are tiled.

// The vector type is only passed between inline functions, so the ABI note
// GCC emits for it without AVX-512 does not apply.
#pragma GCC diagnostic push
#pragma GCC diagnostic ignored "-Wpsabi"

namespace lrq::kernels {

namespace detail {

// C[r][j] += Σ_s A(r,s)·B[s][j], with A(r,s) = a[r*ars + s*ass]. A tile of
// kR rows × kV vectors of accumulators stays in registers for the whole
// reduction.
typedef double Vec __attribute__((vector_size(64)));
inline constexpr std::size_t kLanes = sizeof(Vec) / sizeof(double);

inline Vec load(const double* p) {
  Vec v;
  __builtin_memcpy(&v, p, sizeof(Vec));
  return v;
}
inline void store(double* p, Vec v) { __builtin_memcpy(p, &v, sizeof(Vec)); }

template <std::size_t kR, std::size_t kV>
inline void tile(std::size_t r0, std::size_t j0, std::size_t s0, std::size_t s1, std::size_t n, const double* __restrict a,
                 std::size_t ars, std::size_t ass, const double* __restrict b, double* __restrict c) {
  Vec acc[kR][kV];
  for (std::size_t r = 0; r < kR; ++r)
    for (std::size_t v = 0; v < kV; ++v) acc[r][v] = load(c + (r0 + r) * n + j0 + v * kLanes);
  const double* __restrict ar = a + r0 * ars;
  for (std::size_t s = s0; s < s1; ++s) {
    const double* __restrict bs = b + s * n + j0;
    Vec bv[kV];
    for (std::size_t v = 0; v < kV; ++v) bv[v] = load(bs + v * kLanes);
    for (std::size_t r = 0; r < kR; ++r) {
      const double x = ar[r * ars + s * ass];
      for (std::size_t v = 0; v < kV; ++v) acc[r][v] += x * bv[v];
    }
  }
  for (std::size_t r = 0; r < kR; ++r)
    for (std::size_t v = 0; v < kV; ++v) store(c + (r0 + r) * n + j0 + v * kLanes, acc[r][v]);
}

inline void edge(std::size_t r0, std::size_t r1, std::size_t j0, std::size_t j1, std::size_t s0, std::size_t s1,
                 std::size_t n, const double* __restrict a, std::size_t ars, std::size_t ass,
                 const double* __restrict b, double* __restrict c) {
  for (std::size_t r = r0; r < r1; ++r) {
    for (std::size_t j = j0; j < j1; ++j) {
      double acc = c[r * n + j];
      for (std::size_t s = s0; s < s1; ++s) acc += a[r * ars + s * ass] * b[s * n + j];
      c[r * n + j] = acc;
    }
  }
}

// Splitting the reduction into depth blocks keeps the summation order, since
// each partial sum goes back through C before the next block continues it.
inline void blocked(std::size_t rows, std::size_t depth, std::size_t n, const double* __restrict a,
                    std::size_t ars, std::size_t ass, const double* __restrict b, double* __restrict c) {
  // Column panels of B stay cache-resident while every row tile passes over
  // them; without this a wide B is streamed from memory once per row tile.
  constexpr std::size_t kR = 6, kV = 2, kJ = kV * kLanes, kDepthBlock = 256, kColBlock = 32 * kJ;
  const std::size_t rows_main = rows - rows % kR;
  const std::size_t n_main = n - n % kJ;
  for (std::size_t s0 = 0; s0 < depth; s0 += kDepthBlock) {
    const std::size_t s1 = s0 + kDepthBlock < depth ? s0 + kDepthBlock : depth;
    for (std::size_t jb = 0; jb < n_main; jb += kColBlock) {
      const std::size_t je = jb + kColBlock < n_main ? jb + kColBlock : n_main;
      for (std::size_t r0 = 0; r0 < rows_main; r0 += kR)
        for (std::size_t j0 = jb; j0 < je; j0 += kJ) tile<kR, kV>(r0, j0, s0, s1, n, a, ars, ass, b, c);
      for (std::size_t r0 = rows_main; r0 < rows; ++r0)
        for (std::size_t j0 = jb; j0 < je; j0 += kJ) tile<1, kV>(r0, j0, s0, s1, n, a, ars, ass, b, c);
    }
    if (n_main < n) edge(0, rows, n_main, n, s0, s1, n, a, ars, ass, b, c);
  }
}

}  // namespace detail

/// out[n×m] = in[m×n]ᵀ
inline void transpose(std::size_t m, std::size_t n, const double* __restrict in,
                      double* __restrict out) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += kBlock) {
    const std::size_t i1 = i0 + kBlock < m ? i0 + kBlock : m;
    for (std::size_t j0 = 0; j0 < n; j0 += kBlock) {
      const std::size_t j1 = j0 + kBlock < n ? j0 + kBlock : n;
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) out[j * m + i] = in[i * n + j];
    }
  }
}

/// c[m×n] += a[m×k] · b[k×n]
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
                    const double* __restrict b, double* __restrict c) {
  detail::blocked(m, k, n, a, k, 1, b, c);
}

/// c[k×n] += a[m×k]ᵀ · b[m×n]
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
                    const double* __restrict b, double* __restrict c) {
  detail::blocked(k, m, n, a, 1, k, b, c);
}

}  // namespace lrq::kernels

#pragma GCC diagnostic pop
