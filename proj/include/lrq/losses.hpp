#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrq/ops.hpp"

namespace lrq {

struct LossWeights {
  double alpha1 = 1.0;   // data
  double alpha2 = 0.1;   // physics
  double alpha3 = 0.01;  // ranking
  double lambda = 1e-6;  // explicit ‖θ‖² term
  double margin = 0.0;
};

inline void validate(const LossWeights& w) {
  for (double v : {w.alpha1, w.alpha2, w.alpha3, w.lambda, w.margin}) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("loss weights and margin must be finite and non-negative");
  }
}

struct MetricsReport {
  double mse = 0, mae = 0, max_ae = 0, mre_percent = 0;
  std::size_t n = 0;
  std::size_t n_excluded_mre = 0;  // entries with |truth| < kMreFloor
};

inline constexpr double kMreFloor = 1e-12;

inline MetricsReport metrics(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw DimensionError("metrics: " + std::to_string(pred.size()) + " predictions for " +
                         std::to_string(truth.size()) + " targets");
  }
  if (pred.empty()) throw DataError("metrics: empty input");
  MetricsReport r;
  r.n = pred.size();
  double rel = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) {
    const double e = std::abs(pred[i] - truth[i]);
    r.mse += e * e;
    r.mae += e;
    r.max_ae = std::max(r.max_ae, e);
    if (std::abs(truth[i]) < kMreFloor) {
      ++r.n_excluded_mre;
    } else {
      rel += e / std::abs(truth[i]);
    }
  }
  if (r.n_excluded_mre == r.n) throw DataError("metrics: every target is zero, relative error is undefined");
  r.mse /= double(r.n);
  r.mae /= double(r.n);
  r.mre_percent = 100.0 * rel / double(r.n - r.n_excluded_mre);
  return r;
}

inline MetricsReport metrics(const Tensor& pred, const Tensor& truth) { return metrics(pred.values(), truth.values()); }

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"mse", r.mse},       {"mae", r.mae}, {"max_ae", r.max_ae}, {"mre_percent", r.mre_percent},
          {"n", r.n},           {"n_excluded_mre", r.n_excluded_mre}};
}

/// Mean squared error over all entries.
inline Tensor mse_loss(const Tensor& pred, const Tensor& truth) {
  if (pred.numel() != truth.numel()) {
    throw DimensionError("mse: shapes " + shape_str(pred.shape()) + " and " + shape_str(truth.shape()));
  }
  return mean(square(sub(reshape(pred, truth.shape()), truth)));
}

/// Σ_{i<j} max(0, m − (ŷ_i − ŷ_j)·sign(y_i − y_j)). Differentiable in ŷ.
inline Tensor ranking_loss(const Tensor& pred, const Tensor& truth, double margin) {
  const std::size_t b = pred.numel();
  if (truth.numel() != b) throw DimensionError("ranking_loss: prediction and target lengths differ");
  if (b < 2) throw DimensionError("ranking_loss needs at least 2 samples, got " + std::to_string(b));
  // Row p of the signed pair matrix maps ŷ to s_ij(ŷ_i − ŷ_j).
  const std::size_t pairs = b * (b - 1) / 2;
  Buffer d(pairs * b, 0.0);
  std::size_t p = 0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i + 1; j < b; ++j, ++p) {
      const double s = double((truth[i] > truth[j]) - (truth[i] < truth[j]));
      d[p * b + i] = s;
      d[p * b + j] = -s;
    }
  }
  const Tensor signed_gap = matmul(Tensor({pairs, b}, std::move(d)), reshape(pred, {b, 1}));
  return sum(relu(add_scalar(scale(signed_gap, -1.0), margin)));
}

/// Σ‖θ‖² over a parameter list.
inline Tensor squared_norm(std::span<const Tensor> params) {
  Tensor acc = Tensor::scalar(0.0);
  for (const auto& t : params) acc = add(acc, sum(square(t)));
  return acc;
}

struct LossInputs {
  Tensor pred;    // data-term prediction (per-point field or per-sample scalar)
  Tensor target;
  std::optional<Tensor> physics;  // precomputed L_phys
  std::optional<Tensor> rank_pred, rank_truth;
  std::vector<Tensor> params;     // used only when λ > 0
};

struct LossBreakdown {
  Tensor data, physics, rank, decay, total;
};

/// α₁·MSE + α₂·L_phys + α₃·L_rank + λ·Σ‖θ‖². Absent terms count as zero.
inline LossBreakdown total_loss(const LossInputs& in, const LossWeights& w) {
  validate(w);
  LossBreakdown b;
  b.data = mse_loss(in.pred, in.target);
  b.physics = in.physics ? *in.physics : Tensor::scalar(0.0);
  b.rank = (in.rank_pred && in.rank_pred->numel() >= 2) ? ranking_loss(*in.rank_pred, *in.rank_truth, w.margin)
                                                         : Tensor::scalar(0.0);
  b.decay = w.lambda > 0.0 ? squared_norm(in.params) : Tensor::scalar(0.0);
  b.total = add(add(scale(b.data, w.alpha1), scale(reshape(b.physics, {}), w.alpha2)),
                add(scale(b.rank, w.alpha3), scale(b.decay, w.lambda)));
  return b;
}

}  // namespace lrq
