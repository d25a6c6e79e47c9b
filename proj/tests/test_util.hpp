#pragma once

#include <cmath>
#include <random>

#include "lrq/ops.hpp"

namespace lrq::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Buffer b(shape_numel(shape));
  for (auto& x : b) x = u(rng);
  return Tensor(std::move(shape), std::move(b));
}

/// Relative Frobenius distance ‖a − b‖ / max(‖b‖, tiny).
inline double rel_frob(const Tensor& a, const Tensor& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Contracts an op's output with fixed random weights so every output entry
/// contributes a distinct amount to the scalar under test.
inline Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng, 0.5, 1.5)));
}

}  // namespace lrq::testing

#include <Eigen/Dense>

namespace lrq::testing {

inline Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
  return m;
}

inline Tensor from_eigen(const Eigen::MatrixXd& m) {
  Buffer b(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) b[i * m.cols() + j] = m(i, j);
  return Tensor({std::size_t(m.rows()), std::size_t(m.cols())}, std::move(b));
}

/// N×C matrix with orthonormal columns (thin QR of a Gaussian matrix).
inline Tensor orthonormal_columns(std::size_t n, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(n, c);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return from_eigen(qr.householderQ() * Eigen::MatrixXd::Identity(n, c));
}

}  // namespace lrq::testing

#include <array>
#include <functional>

namespace lrq::testing {

/// Regular lattice with nx·ny·nz nodes spanning [lo, hi] per axis, rows in
/// x-major order. Optional uniform jitter of ±jitter·spacing.
inline Tensor lattice(std::array<std::size_t, 3> n, std::array<double, 3> lo, std::array<double, 3> hi,
                      double jitter = 0.0, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Buffer b;
  std::array<double, 3> h{};
  for (int a = 0; a < 3; ++a) h[a] = n[a] > 1 ? (hi[a] - lo[a]) / double(n[a] - 1) : 0.0;
  for (std::size_t i = 0; i < n[0]; ++i)
    for (std::size_t j = 0; j < n[1]; ++j)
      for (std::size_t k = 0; k < n[2]; ++k) {
        const std::size_t idx[3] = {i, j, k};
        for (int a = 0; a < 3; ++a) b.push_back(lo[a] + h[a] * double(idx[a]) + (jitter > 0 ? jitter * h[a] * u(rng) : 0.0));
      }
  const std::size_t rows = b.size() / 3;
  return Tensor({rows, 3}, std::move(b));
}

/// N×m field sampled from f(x, y, z) -> m values.
inline Tensor sample(const Tensor& coords, std::size_t m,
                     const std::function<void(double, double, double, double*)>& f) {
  Buffer b(coords.rows() * m);
  for (std::size_t i = 0; i < coords.rows(); ++i) f(coords.at(i, 0), coords.at(i, 1), coords.at(i, 2), b.data() + i * m);
  return Tensor({coords.rows(), m}, std::move(b));
}

}  // namespace lrq::testing
