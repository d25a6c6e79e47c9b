#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lrq/init.hpp"
#include "lrq/physics.hpp"

// Synthetic samples with manufactured ground truth.
//
// flow: plane Poiseuille channel x ∈ [0, Lx], y ∈ [−h, h], z ∈ [0, Lz],
//   v = (U(1 − (y/h)²), 0, 0), p = −2μU/h²·(x − Lx), T = T0; d = (h, U, μ);
//   target = x-force of the walls on the fluid, −4μU·Lx·Lz/h.
// beam: box x ∈ [0, L], y, z ∈ [−a, a] with displacement
//   u_x = c0·x − c1·x·y − c2·x·z + c6·x²/L
//   u_y = ½c1·x² + c3·y − c5·x·z
//   u_z = ½c2·x² + c4·z + c5·x·y
//   (stretch, two bending modes, lateral strains, twist, axial gradient);
//   d = (c0..c6, L, E, ν); target = max σ_vM over the box.

namespace lrq {

enum class TaskKind { kFlow, kBeam };

inline std::string to_string(TaskKind t) { return t == TaskKind::kFlow ? "flow" : "beam"; }

inline TaskKind parse_task(const std::string& s) {
  if (s == "flow") return TaskKind::kFlow;
  if (s == "beam") return TaskKind::kBeam;
  throw ConfigError("unknown task '" + s + "' (expected flow or beam)");
}

inline constexpr std::size_t kMinSamplePoints = 32;

struct FlowParams {
  double h = 1.0;
  double u_max = 1.0;
  double mu = 0.05;
  double rho = 1.0;
  double T0 = 1.0;
  double length = 2.0;
  double width = 1.0;
};

struct BeamParams {
  std::array<double, 7> c{};
  double length = 2.0;
  double E = 200e9;
  double nu = 0.3;
  double half_side = 0.25;
};

inline std::size_t design_dim(TaskKind t) { return t == TaskKind::kFlow ? 3 : 10; }
inline std::size_t field_dim(TaskKind t) { return t == TaskKind::kFlow ? 5 : 1; }

struct Sample {
  TaskKind task = TaskKind::kFlow;
  std::uint64_t seed = 0;
  Tensor coords;      // N×3
  Tensor design;      // [D_in], physical units
  FieldPrediction fields;
  Tensor von_mises;   // [N], beam only
  Tensor body_force;  // N×3, beam only
  double target = 0.0;
  SurfacePatches patches;
  VolumeCells cells;
  bool closed_surface = false;

  std::size_t size() const { return coords.rows(); }

  /// Per-point regression targets: flow (v_x, v_y, v_z, p, T); beam σ_vM.
  Tensor point_targets() const {
    if (task == TaskKind::kFlow) return concat_cols({fields.v, fields.p, fields.T});
    return von_mises.reshaped({size(), 1});
  }
};

inline void validate(const FlowParams& p) {
  if (!(p.h > 0 && p.u_max > 0 && p.mu > 0 && p.rho > 0 && p.length > 0 && p.width > 0) || !std::isfinite(p.T0)) {
    throw ConfigError("flow parameters h, U_max, mu, rho, length, width must be positive");
  }
}

inline void validate(const BeamParams& p) {
  for (double c : p.c)
    if (!std::isfinite(c)) throw ConfigError("beam displacement coefficients must be finite");
  if (!(p.length > 0 && p.half_side > 0 && p.E > 0)) throw ConfigError("beam length, half side and E must be positive");
  if (!(p.nu >= 0 && p.nu < 0.5)) throw ConfigError("beam Poisson ratio must lie in [0, 0.5)");
}

inline void require_points(std::size_t n) {
  if (n < kMinSamplePoints) {
    throw ConfigError("a sample needs at least " + std::to_string(kMinSamplePoints) + " points, got " + std::to_string(n));
  }
}

struct BoxCloud {
  Tensor coords;
  // For each point, per axis: −1 on the low face, +1 on the high face, 0 inside.
  std::vector<std::array<int, 3>> face;
};

/// Exactly n points in a box: the coarsest lattice with at least n nodes,
/// jittered by ±jitter·spacing (face nodes keep their face coordinate), then
/// thinned by a seeded uniform choice of n nodes.
inline BoxCloud stratified_box(const std::array<double, 3>& lo, const std::array<double, 3>& hi, std::size_t n,
                               double jitter, Rng& rng) {
  require_points(n);
  std::array<double, 3> ext{};
  double vol = 1.0;
  for (int a = 0; a < 3; ++a) {
    ext[a] = hi[a] - lo[a];
    if (!(ext[a] > 0)) throw ConfigError("box extents must be positive");
    vol *= ext[a];
  }
  double s = std::cbrt(vol / double(n));
  std::array<std::size_t, 3> cnt{};
  for (;;) {
    for (int a = 0; a < 3; ++a) cnt[a] = std::max<std::size_t>(2, std::size_t(std::floor(ext[a] / s)) + 1);
    if (cnt[0] * cnt[1] * cnt[2] >= n) break;
    s *= 0.97;
  }
  const std::size_t total = cnt[0] * cnt[1] * cnt[2];
  std::vector<std::size_t> keep(total);
  std::iota(keep.begin(), keep.end(), 0);
  if (total > n) {
    std::vector<std::size_t> chosen;
    chosen.reserve(n);
    std::sample(keep.begin(), keep.end(), std::back_inserter(chosen), n, rng);
    keep = std::move(chosen);
  }
  std::uniform_real_distribution<double> u(-jitter, jitter);
  Buffer b(n * 3);
  BoxCloud out;
  out.face.resize(n);
  // Jitter is drawn for every lattice node so the point set does not depend
  // on which nodes were dropped.
  std::vector<std::array<double, 3>> jit(total);
  for (auto& j : jit)
    for (auto& v : j) v = u(rng);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t id = keep[r];
    const std::size_t idx[3] = {id / (cnt[1] * cnt[2]), (id / cnt[2]) % cnt[1], id % cnt[2]};
    for (int a = 0; a < 3; ++a) {
      const double h = ext[a] / double(cnt[a] - 1);
      if (idx[a] == 0) {
        b[r * 3 + a] = lo[a];
        out.face[r][a] = -1;
      } else if (idx[a] == cnt[a] - 1) {
        b[r * 3 + a] = hi[a];
        out.face[r][a] = 1;
      } else {
        b[r * 3 + a] = lo[a] + h * (double(idx[a]) + jit[id][a]);
        out.face[r][a] = 0;
      }
    }
  }
  out.coords = Tensor({n, 3}, std::move(b));
  return out;
}

inline constexpr double kLatticeJitter = 0.25;

inline double poiseuille_u(const FlowParams& p, double y) { return p.u_max * (1.0 - (y / p.h) * (y / p.h)); }

inline Sample gen_flow_sample(const FlowParams& prm, std::size_t n, std::uint64_t seed) {
  validate(prm);
  Rng rng(seed);
  const BoxCloud cloud = stratified_box({0, -prm.h, 0}, {prm.length, prm.h, prm.width}, n, kLatticeJitter, rng);
  Sample s;
  s.task = TaskKind::kFlow;
  s.seed = seed;
  s.coords = cloud.coords;
  s.design = Tensor::vector({prm.h, prm.u_max, prm.mu});
  const double dpdx = -2.0 * prm.mu * prm.u_max / (prm.h * prm.h);
  Buffer v(n * 3, 0.0), p(n), t(n, prm.T0);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = s.coords.at(i, 0), y = s.coords.at(i, 1);
    v[i * 3] = poiseuille_u(prm, y);
    p[i] = dpdx * (x - prm.length);
  }
  s.fields.v = Tensor({n, 3}, std::move(v));
  s.fields.p = Tensor({n, 1}, std::move(p));
  s.fields.T = Tensor({n, 1}, std::move(t));

  // Wall patches on y = ±h, outward normals of the fluid region.
  std::vector<std::size_t> top, bottom;
  for (std::size_t i = 0; i < n; ++i) {
    if (cloud.face[i][1] == 1) top.push_back(i);
    if (cloud.face[i][1] == -1) bottom.push_back(i);
  }
  Buffer nrm, area;
  const double wall = prm.length * prm.width;
  for (int side : {1, -1}) {
    const auto& ids = side == 1 ? top : bottom;
    for (std::size_t i : ids) {
      s.patches.index.push_back(i);
      nrm.insert(nrm.end(), {0.0, double(side), 0.0});
      area.push_back(wall / double(ids.size()));
    }
  }
  const std::size_t np = s.patches.index.size();
  s.patches.normal = Tensor({np, 3}, std::move(nrm));
  s.patches.area = Tensor({np, 1}, std::move(area));
  s.target = -4.0 * prm.mu * prm.u_max * prm.length * prm.width / prm.h;
  return s;
}

inline FlowParams flow_params_from_design(const Tensor& d) {
  if (d.numel() != 3) throw DimensionError("flow design vector must have D_in = 3, got " + std::to_string(d.numel()));
  FlowParams p;
  p.h = d[0];
  p.u_max = d[1];
  p.mu = d[2];
  return p;
}

namespace detail {

// Displacement gradient ∂u_i/∂x_j of the manufactured beam field.
inline std::array<double, 9> beam_grad(const BeamParams& p, double x, double y, double z) {
  const auto& c = p.c;
  return {c[0] - c[1] * y - c[2] * z + 2 * c[6] * x / p.length, -c[1] * x, -c[2] * x,
          c[1] * x - c[5] * z, c[3], -c[5] * x,
          c[2] * x + c[5] * y, c[5] * x, c[4]};
}

inline std::array<double, 6> beam_strain(const BeamParams& p, double x, double y, double z) {
  const auto g = beam_grad(p, x, y, z);
  return {g[0], g[4], g[8], 0.5 * (g[5] + g[7]), 0.5 * (g[2] + g[6]), 0.5 * (g[1] + g[3])};
}

}  // namespace detail

/// Analytic maximum of σ_vM over the beam box. The stress is affine in
/// position, so σ_vM is convex and its maximum sits at a corner.
inline double beam_peak_von_mises(const BeamParams& p) {
  MaterialProps m;
  m.E = p.E;
  m.nu = p.nu;
  Buffer e;
  for (double x : {0.0, p.length})
    for (double y : {-p.half_side, p.half_side})
      for (double z : {-p.half_side, p.half_side}) {
        const auto s = detail::beam_strain(p, x, y, z);
        e.insert(e.end(), s.begin(), s.end());
      }
  const Tensor vm = von_mises(hooke_stress(Tensor({8, 6}, std::move(e)), m));
  return *std::max_element(vm.values().begin(), vm.values().end());
}

inline Sample gen_beam_sample(const BeamParams& prm, std::size_t n, std::uint64_t seed) {
  validate(prm);
  Rng rng(seed);
  const double a = prm.half_side;
  const BoxCloud cloud = stratified_box({0, -a, -a}, {prm.length, a, a}, n, kLatticeJitter, rng);
  Sample s;
  s.task = TaskKind::kBeam;
  s.seed = seed;
  s.coords = cloud.coords;
  Buffer d(prm.c.begin(), prm.c.end());
  d.insert(d.end(), {prm.length, prm.E, prm.nu});
  s.design = Tensor({10}, std::move(d));
  MaterialProps m;
  m.E = prm.E;
  m.nu = prm.nu;
  Buffer u(n * 3), e(n * 6);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = s.coords.at(i, 0), y = s.coords.at(i, 1), z = s.coords.at(i, 2);
    const auto& c = prm.c;
    u[i * 3 + 0] = c[0] * x - c[1] * x * y - c[2] * x * z + c[6] * x * x / prm.length;
    u[i * 3 + 1] = 0.5 * c[1] * x * x + c[3] * y - c[5] * x * z;
    u[i * 3 + 2] = 0.5 * c[2] * x * x + c[4] * z + c[5] * x * y;
    const auto st = detail::beam_strain(prm, x, y, z);
    std::copy(st.begin(), st.end(), e.begin() + std::ptrdiff_t(i * 6));
  }
  const Tensor eps({n, 6}, std::move(e));
  s.fields.v = Tensor({n, 3}, std::move(u));  // displacement rides in the vector slot
  s.fields.sigma = hooke_stress(eps, m);
  s.von_mises = von_mises(s.fields.sigma);
  // ∇·σ is constant: ((λ+2G)·2c6/L, −λc1, −λc2); the body force balances it.
  const double g = prm.E / (2 * (1 + prm.nu)), lam = prm.E * prm.nu / ((1 + prm.nu) * (1 - 2 * prm.nu));
  s.body_force = broadcast_rows(
      Tensor::vector({-(lam + 2 * g) * 2 * prm.c[6] / prm.length, lam * prm.c[1], lam * prm.c[2]}), n);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  const double dv = prm.length * 4 * a * a / double(n);
  s.cells = {all, Tensor::full({n, 1}, dv), eps};
  s.target = beam_peak_von_mises(prm);
  return s;
}

inline BeamParams beam_params_from_design(const Tensor& d) {
  if (d.numel() != 10) throw DimensionError("beam design vector must have D_in = 10, got " + std::to_string(d.numel()));
  BeamParams p;
  for (std::size_t i = 0; i < 7; ++i) p.c[i] = d[i];
  p.length = d[7];
  p.E = d[8];
  p.nu = d[9];
  return p;
}

/// Random task parameters for dataset generation.
inline FlowParams random_flow_params(Rng& rng) {
  std::uniform_real_distribution<double> h(0.5, 1.0), u(0.5, 1.5), mu(0.01, 0.1);
  FlowParams p;
  p.h = h(rng);
  p.u_max = u(rng);
  p.mu = mu(rng);
  return p;
}

inline BeamParams random_beam_params(Rng& rng) {
  std::uniform_real_distribution<double> c(-1e-3, 1e-3), len(1.5, 2.5);
  BeamParams p;
  for (auto& x : p.c) x = c(rng);
  p.length = len(rng);
  return p;
}

inline Sample gen_sample(TaskKind task, const Tensor& design, std::size_t n, std::uint64_t seed) {
  return task == TaskKind::kFlow ? gen_flow_sample(flow_params_from_design(design), n, seed)
                                 : gen_beam_sample(beam_params_from_design(design), n, seed);
}

enum class ResampleMode { kRegenerate, kSubsample };

/// New point set for the same design. kRegenerate rebuilds the lattice at the
/// new density and re-evaluates labels analytically; kSubsample draws
/// target_n existing points without replacement.
inline Sample resample(const Sample& s, std::size_t target_n, std::uint64_t seed,
                       ResampleMode mode = ResampleMode::kRegenerate) {
  require_points(target_n);
  if (mode == ResampleMode::kRegenerate) return gen_sample(s.task, s.design, target_n, seed);
  if (target_n > s.size()) {
    throw DataError("cannot subsample " + std::to_string(target_n) + " points from a sample of " +
                    std::to_string(s.size()));
  }
  Rng rng(seed);
  std::vector<std::size_t> all(s.size()), pick;
  std::iota(all.begin(), all.end(), 0);
  std::sample(all.begin(), all.end(), std::back_inserter(pick), target_n, rng);
  std::vector<long> remap(s.size(), -1);
  for (std::size_t r = 0; r < pick.size(); ++r) remap[pick[r]] = long(r);
  auto take = [&](const Tensor& t) { return t.rank() == 2 && t.rows() == s.size() ? gather_rows(t, pick) : t; };
  Sample out = s;
  out.seed = seed;
  out.coords = take(s.coords);
  out.fields = {take(s.fields.v), take(s.fields.p), take(s.fields.T), take(s.fields.sigma)};
  if (s.von_mises.numel() == s.size()) out.von_mises = gather_rows(s.von_mises.reshaped({s.size(), 1}), pick).reshaped({target_n});
  out.body_force = take(s.body_force);
  // Keep only patches and cells whose points survived.
  SurfacePatches sp;
  Buffer nrm, area;
  for (std::size_t i = 0; i < s.patches.size(); ++i) {
    if (remap[s.patches.index[i]] < 0) continue;
    sp.index.push_back(std::size_t(remap[s.patches.index[i]]));
    for (std::size_t a = 0; a < 3; ++a) nrm.push_back(s.patches.normal.at(i, a));
    area.push_back(s.patches.area[i] * double(s.size()) / double(target_n));
  }
  sp.normal = Tensor({sp.index.size(), 3}, std::move(nrm));
  sp.area = Tensor({sp.index.size(), 1}, std::move(area));
  out.patches = std::move(sp);
  VolumeCells vc;
  Buffer vol, eps;
  for (std::size_t i = 0; i < s.cells.index.size(); ++i) {
    if (remap[s.cells.index[i]] < 0) continue;
    vc.index.push_back(std::size_t(remap[s.cells.index[i]]));
    vol.push_back(s.cells.volume[i] * double(s.size()) / double(target_n));
    for (std::size_t a = 0; a < 6; ++a) eps.push_back(s.cells.strain.at(i, a));
  }
  vc.volume = Tensor({vc.index.size(), 1}, std::move(vol));
  vc.strain = Tensor({vc.index.size(), 6}, std::move(eps));
  out.cells = std::move(vc);
  return out;
}

/// Per-dimension affine normalization. Dimensions that are constant over the
/// fitting set get std = 1 so they map to zero rather than dividing by zero.
struct Normalizer {
  std::vector<double> mean, std;

  /// Stats over the rows of a row-major matrix with `cols` columns.
  static Normalizer fit_rows(std::span<const double> data, std::size_t cols) {
    if (cols == 0 || data.empty() || data.size() % cols != 0) {
      throw DataError("cannot fit normalization stats on an empty split");
    }
    const std::size_t rows = data.size() / cols;
    Normalizer n;
    n.mean.assign(cols, 0.0);
    n.std.assign(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < cols; ++j) n.mean[j] += data[r * cols + j];
    for (auto& m : n.mean) m /= double(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < cols; ++j) {
        const double d = data[r * cols + j] - n.mean[j];
        n.std[j] += d * d;
      }
    for (std::size_t j = 0; j < cols; ++j) {
      n.std[j] = std::sqrt(n.std[j] / double(rows));
      if (!(n.std[j] > 1e-12 * std::max(1.0, std::abs(n.mean[j])))) n.std[j] = 1.0;
    }
    return n;
  }

  static Normalizer fit(const std::vector<const Tensor*>& rows) {
    if (rows.empty()) throw DataError("cannot fit normalization stats on an empty split");
    const std::size_t d = rows.front()->numel();
    std::vector<double> flat;
    for (const Tensor* r : rows) {
      if (r->numel() != d) throw DimensionError("inconsistent dimension while fitting normalization stats");
      flat.insert(flat.end(), r->values().begin(), r->values().end());
    }
    return fit_rows(flat, d);
  }

  Tensor apply(const Tensor& x) const {
    if (x.numel() != mean.size()) {
      throw DimensionError("design vector has " + std::to_string(x.numel()) + " entries, expected D_in = " +
                           std::to_string(mean.size()));
    }
    Buffer b(x.numel());
    for (std::size_t j = 0; j < b.size(); ++j) b[j] = (x[j] - mean[j]) / std[j];
    return Tensor(x.shape(), std::move(b));
  }

  double apply(double v, std::size_t j = 0) const { return (v - mean[j]) / std[j]; }
  double invert(double v, std::size_t j = 0) const { return v * std[j] + mean[j]; }
};

}  // namespace lrq
