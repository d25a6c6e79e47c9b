#pragma once

#include <cmath>
#include <random>

#include "lrq/tensor.hpp"

namespace lrq {

using Rng = std::mt19937_64;

inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Buffer b(shape_numel(shape));
  for (auto& x : b) x = u(rng);
  return Tensor(std::move(shape), std::move(b));
}

inline Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Buffer b(shape_numel(shape));
  for (auto& x : b) x = n(rng);
  return Tensor(std::move(shape), std::move(b));
}

/// uniform(±1/√fan_in), the usual default for dense layers.
inline Tensor fan_in_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return uniform_tensor({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

}  // namespace lrq
