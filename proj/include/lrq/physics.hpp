#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "lrq/grad_operator.hpp"
#include "lrq/ops.hpp"

// Field post-processing on point clouds. Symmetric tensors use Voigt storage
// in the order (xx, yy, zz, yz, xz, xy) with tensor (not engineering) shear
// components; contractions count each shear term twice.

namespace lrq {

struct MaterialProps {
  double rho = 1.0;
  double mu = 1.0;
  double cp = 1.0;
  double k = 1.0;
  double E = 200e9;
  double nu = 0.3;
};

inline void validate(const MaterialProps& m) {
  if (!(m.rho > 0 && m.mu > 0 && m.cp > 0 && m.k > 0 && m.E > 0)) {
    throw ConfigError("material constants rho, mu, cp, k, E must be positive");
  }
  if (!(m.nu >= 0.0 && m.nu < 0.5)) {
    throw ConfigError("Poisson ratio must lie in [0, 0.5), got " + std::to_string(m.nu));
  }
}

/// Per-point fields. Any member may be empty when a task does not predict it.
/// v: N×3, p: N×1, T: N×1, sigma: N×6.
struct FieldPrediction {
  Tensor v, p, T, sigma;
};

/// Surface quadrature: point index, outward unit normal, area.
struct SurfacePatches {
  std::vector<std::size_t> index;
  Tensor normal;  // P×3
  Tensor area;    // P×1

  std::size_t size() const { return index.size(); }
};

/// Volume quadrature with a strain sample per cell (Voigt).
struct VolumeCells {
  std::vector<std::size_t> index;
  Tensor volume;  // P×1
  Tensor strain;  // P×6
};

struct FlowConditions {
  double rho = 1.0;
  double U = 1.0;
  double A_ref = 1.0;
  std::array<double, 3> e_x{1.0, 0.0, 0.0};
};

inline void validate(const SurfacePatches& s, std::size_t n_points) {
  if (s.normal.rank() != 2 || s.normal.rows() != s.size() || s.normal.cols() != 3 || s.area.numel() != s.size()) {
    throw DimensionError("surface patches: index/normal/area lengths disagree");
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.index[i] >= n_points) {
      throw DimensionError("surface patch " + std::to_string(i) + " references point " + std::to_string(s.index[i]) +
                           " of " + std::to_string(n_points));
    }
    const double nn = std::sqrt(s.normal.at(i, 0) * s.normal.at(i, 0) + s.normal.at(i, 1) * s.normal.at(i, 1) +
                                s.normal.at(i, 2) * s.normal.at(i, 2));
    if (std::abs(nn - 1.0) > 1e-9) throw DataError("surface patch " + std::to_string(i) + " normal is not unit length");
    if (!(s.area[i] > 0.0)) throw DataError("surface patch " + std::to_string(i) + " has non-positive area");
  }
}

inline void validate(const VolumeCells& c, std::size_t n_points) {
  if (c.volume.numel() != c.index.size() || c.strain.rank() != 2 || c.strain.rows() != c.index.size() ||
      c.strain.cols() != 6) {
    throw DimensionError("volume cells: index/volume/strain lengths disagree");
  }
  for (std::size_t i = 0; i < c.index.size(); ++i) {
    if (c.index[i] >= n_points) throw DimensionError("volume cell references point " + std::to_string(c.index[i]));
    if (!(c.volume[i] > 0.0)) throw DataError("volume cell " + std::to_string(i) + " has non-positive volume");
  }
}

namespace detail {

inline Tensor column(const Tensor& x, std::size_t j) { return slice_cols(x, j, j + 1); }

inline Tensor sum_cols(std::initializer_list<Tensor> cols) {
  auto it = cols.begin();
  Tensor acc = *it++;
  for (; it != cols.end(); ++it) acc = add(acc, *it);
  return acc;
}

// Voigt slot of tensor component (i, j).
inline constexpr std::size_t kVoigt[3][3] = {{0, 5, 4}, {5, 1, 3}, {4, 3, 2}};

inline void require_field(const Tensor& t, std::size_t n, std::size_t cols, const char* name) {
  if (t.rank() != 2 || t.rows() != n || t.cols() != cols) {
    throw DimensionError(std::string(name) + " must be " + std::to_string(n) + " x " + std::to_string(cols) +
                         ", got " + shape_str(t.shape()));
  }
}

inline Tensor mean_over(const Tensor& per_point, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw DimensionError("no points selected for the residual");
  return mean(gather_rows(per_point, rows));
}

}  // namespace detail

/// Viscous stress τ = μ(∇v + ∇vᵀ) from the velocity gradient (N×9, column
/// 3a+b = ∂v_a/∂x_b). Returns N×9 in the same layout.
inline Tensor viscous_stress(const Tensor& grad_v, double mu) {
  std::vector<Tensor> cols;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      cols.push_back(scale(add(detail::column(grad_v, 3 * a + b), detail::column(grad_v, 3 * b + a)), mu));
  return concat_cols(cols);
}

struct PhysicsTerms {
  Tensor continuity;  // mean ‖∇·v‖²
  Tensor momentum;    // mean ‖ρ(v·∇)v + ∇p − ∇·τ‖²
  Tensor energy;      // mean ‖ρc_p(v·∇T) − ∇·(k∇T)‖²
  Tensor total;
  Tensor momentum_pointwise;  // N×3, for diagnostics
};

/// Steady incompressible residuals, averaged over `rows` (default: the
/// operator's interior points).
inline PhysicsTerms physics_terms(const FieldPrediction& pred, const ScatteredGradOperator& op,
                                  const MaterialProps& mat, const std::vector<std::size_t>* rows = nullptr) {
  const std::size_t n = op.num_points();
  detail::require_field(pred.v, n, 3, "velocity");
  detail::require_field(pred.p, n, 1, "pressure");
  detail::require_field(pred.T, n, 1, "temperature");
  using detail::column;

  const Tensor gv = grad_apply(op, pred.v);  // N×9
  const Tensor gp = grad_apply(op, pred.p);  // N×3
  const Tensor gt = grad_apply(op, pred.T);  // N×3
  const Tensor tau = viscous_stress(gv, mat.mu);
  const Tensor gtau = grad_apply(op, tau);  // N×27: ∂τ_ab/∂x_c at 3(3a+b)+c
  const Tensor ggt = grad_apply(op, gt);    // N×9: ∂(∂T/∂x_b)/∂x_c at 3b+c

  const Tensor div = detail::sum_cols({column(gv, 0), column(gv, 4), column(gv, 8)});

  std::vector<Tensor> mom;
  for (std::size_t a = 0; a < 3; ++a) {
    Tensor conv = detail::sum_cols({mul(column(pred.v, 0), column(gv, 3 * a + 0)),
                                    mul(column(pred.v, 1), column(gv, 3 * a + 1)),
                                    mul(column(pred.v, 2), column(gv, 3 * a + 2))});
    Tensor div_tau = detail::sum_cols(
        {column(gtau, 3 * (3 * a + 0) + 0), column(gtau, 3 * (3 * a + 1) + 1), column(gtau, 3 * (3 * a + 2) + 2)});
    mom.push_back(sub(add(scale(conv, mat.rho), column(gp, a)), div_tau));
  }
  const Tensor momentum = concat_cols(mom);

  const Tensor adv_t = detail::sum_cols(
      {mul(column(pred.v, 0), column(gt, 0)), mul(column(pred.v, 1), column(gt, 1)), mul(column(pred.v, 2), column(gt, 2))});
  const Tensor lap_t = detail::sum_cols({column(ggt, 0), column(ggt, 4), column(ggt, 8)});
  const Tensor energy = sub(scale(adv_t, mat.rho * mat.cp), scale(lap_t, mat.k));

  const std::vector<std::size_t>& sel = rows ? *rows : op.interior_index;
  PhysicsTerms t;
  t.continuity = detail::mean_over(square(div), sel);
  t.momentum = detail::mean_over(reshape(reduce(square(momentum), 1, Reduction::kSum), {n, 1}), sel);
  t.energy = detail::mean_over(square(energy), sel);
  t.total = add(add(t.continuity, t.momentum), t.energy);
  t.momentum_pointwise = momentum;
  return t;
}

inline Tensor physics_residual(const FieldPrediction& pred, const ScatteredGradOperator& op, const MaterialProps& mat,
                               const std::vector<std::size_t>* rows = nullptr) {
  return physics_terms(pred, op, mat, rows).total;
}

/// F = Σ [ρ(v·n)v − p n + τ·n] ΔA over the surface patches; returns [3].
inline Tensor force_integral(const FieldPrediction& pred, const SurfacePatches& s, const ScatteredGradOperator* op,
                             const MaterialProps& mat) {
  const std::size_t n = pred.p.rows();
  validate(s, n);
  detail::require_field(pred.v, n, 3, "velocity");
  using detail::column;
  const Tensor v = gather_rows(pred.v, s.index);
  const Tensor p = gather_rows(pred.p, s.index);
  const Tensor vn = detail::sum_cols(
      {mul(column(v, 0), column(s.normal, 0)), mul(column(v, 1), column(s.normal, 1)), mul(column(v, 2), column(s.normal, 2))});
  Tensor tau;
  if (op) tau = gather_rows(viscous_stress(grad_apply(*op, pred.v), mat.mu), s.index);
  std::vector<Tensor> comps;
  for (std::size_t a = 0; a < 3; ++a) {
    Tensor f = sub(scale(mul(vn, column(v, a)), mat.rho), mul(p, column(s.normal, a)));
    if (op) {
      f = add(f, detail::sum_cols({mul(column(tau, 3 * a + 0), column(s.normal, 0)),
                                   mul(column(tau, 3 * a + 1), column(s.normal, 1)),
                                   mul(column(tau, 3 * a + 2), column(s.normal, 2))}));
    }
    comps.push_back(sum(mul(f, s.area.reshaped({s.size(), 1}))));
  }
  return reshape(concat_cols({reshape(comps[0], {1, 1}), reshape(comps[1], {1, 1}), reshape(comps[2], {1, 1})}), {3});
}

/// Q = Σ −k ∇T·n ΔA.
inline Tensor heat_flux_integral(const FieldPrediction& pred, const SurfacePatches& s, const ScatteredGradOperator& op,
                                 const MaterialProps& mat) {
  validate(s, op.num_points());
  using detail::column;
  const Tensor g = gather_rows(grad_apply(op, pred.T), s.index);
  const Tensor gn = detail::sum_cols(
      {mul(column(g, 0), column(s.normal, 0)), mul(column(g, 1), column(s.normal, 1)), mul(column(g, 2), column(s.normal, 2))});
  return scale(sum(mul(gn, s.area.reshaped({s.size(), 1}))), -mat.k);
}

/// σ:ε per row for Voigt-stored tensors (shear terms counted twice).
inline Tensor voigt_contract(const Tensor& sigma, const Tensor& eps) {
  static const Tensor kWeights = Tensor::vector({1, 1, 1, 2, 2, 2});
  return matmul(mul(sigma, eps), kWeights.reshaped({6, 1}));
}

/// U = Σ ½ σ:ε ΔV over the cells; sigma is the full N×6 field.
inline Tensor strain_energy(const Tensor& sigma, const VolumeCells& cells) {
  validate(cells, sigma.rows());
  const Tensor s = gather_rows(sigma, cells.index);
  return scale(sum(mul(voigt_contract(s, cells.strain), cells.volume.reshaped({cells.index.size(), 1}))), 0.5);
}

inline Tensor strain_energy(const FieldPrediction& pred, const VolumeCells& cells) {
  return strain_energy(pred.sigma, cells);
}

inline double drag_coefficient(const Tensor& force, const FlowConditions& c) {
  if (!(c.U > 0.0 && c.A_ref > 0.0 && c.rho > 0.0)) throw ConfigError("flow conditions need positive rho, U, A_ref");
  const double fx = force[0] * c.e_x[0] + force[1] * c.e_x[1] + force[2] * c.e_x[2];
  return fx / (0.5 * c.rho * c.U * c.U * c.A_ref);
}

/// ε = ½(∇u + ∇uᵀ) in Voigt order.
inline Tensor strain_from_displacement(const Tensor& u, const ScatteredGradOperator& op) {
  detail::require_field(u, op.num_points(), 3, "displacement");
  using detail::column;
  const Tensor g = grad_apply(op, u);
  auto half_sum = [&](std::size_t a, std::size_t b) { return scale(add(column(g, a), column(g, b)), 0.5); };
  return concat_cols({column(g, 0), column(g, 4), column(g, 8), half_sum(5, 7), half_sum(2, 6), half_sum(1, 3)});
}

/// 6×6 map taking Voigt strain to Voigt stress: σ = E/(1+ν)(ε + ν/(1−2ν) tr(ε) I).
inline Tensor hooke_matrix(const MaterialProps& mat) {
  if (!(mat.nu < 0.5)) throw NumericError("Hooke's law is singular for Poisson ratio >= 0.5");
  const double g = mat.E / (1.0 + mat.nu);
  const double l = g * mat.nu / (1.0 - 2.0 * mat.nu);
  Buffer d(36, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) d[i * 6 + j] = l;
    d[i * 6 + i] += g;
  }
  for (std::size_t i = 3; i < 6; ++i) d[i * 6 + i] = g;
  return Tensor({6, 6}, std::move(d));
}

inline Tensor hooke_stress(const Tensor& eps, const MaterialProps& mat) {
  if (eps.rank() != 2 || eps.cols() != 6) throw DimensionError("strain must be N x 6, got " + shape_str(eps.shape()));
  // D is symmetric, so row-wise σ = ε·D.
  return matmul(eps, hooke_matrix(mat));
}

/// σ_vM = √(3/2 S:S) with S the deviatoric part; returns [N].
inline Tensor von_mises(const Tensor& sigma) {
  if (sigma.rank() != 2 || sigma.cols() != 6) throw DimensionError("stress must be N x 6, got " + shape_str(sigma.shape()));
  const std::size_t n = sigma.rows();
  // Deviatoric projection on the normal block, identity on shear.
  Buffer pd(36, 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) pd[i * 6 + j] = (i == j ? 1.0 : 0.0) - 1.0 / 3.0;
  for (std::size_t i = 3; i < 6; ++i) pd[i * 6 + i] = 1.0;
  const Tensor s = matmul(sigma, Tensor({6, 6}, std::move(pd)));
  return reshape(lrq::sqrt(scale(voigt_contract(s, s), 1.5)), {n});
}

/// Mean over `rows` (default interior) of ‖∇·σ + F‖².
inline Tensor equilibrium_residual(const Tensor& sigma, const Tensor& body_force, const ScatteredGradOperator& op,
                                   const std::vector<std::size_t>* rows = nullptr) {
  const std::size_t n = op.num_points();
  detail::require_field(sigma, n, 6, "stress");
  detail::require_field(body_force, n, 3, "body force");
  using detail::column;
  const Tensor g = grad_apply(op, sigma);  // N×18: ∂σ_c/∂x_b at 3c+b
  std::vector<Tensor> r;
  for (std::size_t i = 0; i < 3; ++i) {
    r.push_back(add(detail::sum_cols({column(g, 3 * detail::kVoigt[i][0] + 0), column(g, 3 * detail::kVoigt[i][1] + 1),
                                      column(g, 3 * detail::kVoigt[i][2] + 2)}),
                    column(body_force, i)));
  }
  const Tensor sq = reduce(square(concat_cols(r)), 1, Reduction::kSum);
  return detail::mean_over(reshape(sq, {n, 1}), rows ? *rows : op.interior_index);
}

}  // namespace lrq
