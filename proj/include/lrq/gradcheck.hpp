#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "lrq/tape.hpp"
#include "lrq/tensor.hpp"

namespace lrq {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Scalar function of a list of parameters. It must build its result only
/// from the tensors it is handed so the tape can see every dependency.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

enum class FdScheme {
  kCentral,  // (f(x+h) − f(x−h)) / 2h
  kRidders,  // central differences at shrinking steps, Richardson-extrapolated
};

namespace detail {

/// Ridders' extrapolation of central differences starting from step h. The
/// large initial step keeps roundoff at eps·|f|/h while the tableau cancels
/// the truncation error, so entries many orders below |f| stay resolvable.
inline double ridders_derivative(const std::function<double(double)>& central, double h) {
  constexpr int kTab = 10;
  constexpr double kCon = 1.4, kCon2 = kCon * kCon, kSafe = 2.0;
  double a[kTab][kTab];
  double hh = h, err = std::numeric_limits<double>::max(), ans = 0.0;
  a[0][0] = central(hh);
  ans = a[0][0];
  for (int i = 1; i < kTab; ++i) {
    hh /= kCon;
    a[0][i] = central(hh);
    double fac = kCon2;
    for (int j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
      fac *= kCon2;
      const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
      if (e <= err) {
        err = e;
        ans = a[j][i];
      }
    }
    if (std::abs(a[i][i] - a[i - 1][i - 1]) >= kSafe * err) break;
  }
  return ans;
}

}  // namespace detail

/// Compares reverse-mode gradients against finite differences, one
/// coordinate at a time. The (initial) step for coordinate i is
/// h·max(1, |θ_i|).
inline GradCheckResult finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& params, double h,
                                         FdScheme scheme = FdScheme::kCentral) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_check: step must be positive");

  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p));
  Tensor root = f(leaves);
  if (!std::isfinite(root.item())) throw NumericError("finite_diff_check: f is not finite at the base point");
  tape.backward(root);

  auto eval = [&](const std::vector<Tensor>& ps) {
    const double v = f(ps).item();
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: f is not finite at a perturbed point");
    return v;
  };

  std::vector<Tensor> base;
  base.reserve(params.size());
  for (const auto& p : params) base.push_back(p.detach());
  const double f0 = eval(base);
  if (f0 != root.item()) {
    throw NumericError("finite_diff_check: f is not deterministic (" + std::to_string(f0) + " vs " +
                       std::to_string(root.item()) + ")");
  }

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor g = tape.grad(leaves[pi]);
    for (std::size_t i = 0; i < params[pi].numel(); ++i) {
      const double x = params[pi][i];
      auto central = [&](double step) {
        std::vector<Tensor> plus = base, minus = base;
        plus[pi].mutable_values()[i] = x + step;
        minus[pi].mutable_values()[i] = x - step;
        return (eval(plus) - eval(minus)) / (2.0 * step);
      };
      const double step = h * std::max(1.0, std::abs(x));
      const double num = scheme == FdScheme::kCentral ? central(step) : detail::ridders_derivative(central, step);
      const double ana = g[i];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-12});
      if (rel > res.max_rel_error || (pi == 0 && i == 0)) {
        res = {rel, pi, i, ana, num};
      }
    }
  }
  return res;
}

}  // namespace lrq
