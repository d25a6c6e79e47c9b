#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lrq/params.hpp"

namespace lrq {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled; zeroed when decay lives in the loss
};

inline void validate(const AdamWConfig& c) {
  if (!(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1)) throw ConfigError("adamw betas must lie in [0, 1)");
  if (!(c.eps >= 0) || !(c.weight_decay >= 0) || !std::isfinite(c.weight_decay)) {
    throw ConfigError("adamw eps and weight_decay must be finite and non-negative");
  }
}

struct OptimizerState {
  std::vector<Tensor> m, v;  // moments, parameter order
  std::uint64_t step = 0;

  static OptimizerState init(const ParamRefs& params) {
    OptimizerState s;
    for (const auto& [name, t] : params) {
      s.m.push_back(Tensor::zeros(t->shape()));
      s.v.push_back(Tensor::zeros(t->shape()));
    }
    return s;
  }
};

/// Rescales all gradients together so their joint norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
  double ss = 0.0;
  for (const auto& g : grads)
    for (double x : g.values()) ss += x * x;
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& x : g.mutable_values()) x *= s;
  }
  return norm;
}

/// One AdamW step with decoupled decay:
///   θ ← θ − lr·(m̂/(√v̂ + eps) + wd·θ).
/// Every gradient is checked before anything is written, so a rejected step
/// leaves both parameters and moments untouched.
inline void adamw_step(const ParamRefs& params, std::span<const Tensor> grads, OptimizerState& state, double lr,
                       const AdamWConfig& cfg) {
  validate(cfg);
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adamw: " + std::to_string(params.size()) + " parameters, " + std::to_string(grads.size()) +
                         " gradients, " + std::to_string(state.m.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = *params[i].second;
    if (grads[i].shape() != p.shape() || state.m[i].shape() != p.shape() || state.v[i].shape() != p.shape()) {
      throw DimensionError("adamw: shape mismatch for " + params[i].first + ": param " + shape_str(p.shape()) +
                           ", grad " + shape_str(grads[i].shape()));
    }
    for (double g : grads[i].values()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for " + params[i].first + "; step rejected");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].second;
    auto th = p.mutable_values();
    auto m = state.m[i].mutable_values();
    auto v = state.v[i].mutable_values();
    const auto g = grads[i].values();
    for (std::size_t j = 0; j < th.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mh = m[j] / c1, vh = v[j] / c2;
      th[j] -= lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * th[j]);
    }
  }
}

struct LrSchedule {
  double lr0 = 1e-4;
  double decay_factor = 0.1;
  std::size_t decay_epoch = 50;
};

inline void validate(const LrSchedule& s) {
  if (!(s.lr0 > 0) || !std::isfinite(s.lr0)) throw ConfigError("lr0 must be positive");
  if (!(s.decay_factor > 0 && s.decay_factor <= 1)) throw ConfigError("decay_factor must lie in (0, 1]");
}

/// Single step decay: lr₀ before decay_epoch, lr₀·factor from then on.
inline double lr_at_epoch(std::size_t epoch, const LrSchedule& s) {
  validate(s);
  return epoch < s.decay_epoch ? s.lr0 : s.lr0 * s.decay_factor;
}

}  // namespace lrq
