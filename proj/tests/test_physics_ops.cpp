#include <gtest/gtest.h>

#include <cmath>

#include "lrq/geometry.hpp"
#include "lrq/gradcheck.hpp"
#include "lrq/physics.hpp"
#include "test_util.hpp"

using namespace lrq;
using namespace lrq::testing;

namespace {

Tensor unit_lattice(std::size_t n, double jitter = 0.0) { return lattice({n, n, n}, {0, 0, 0}, {1, 1, 1}, jitter, 5); }

// Interior of a lattice in the geometric sense: no coordinate on the hull.
bool strictly_inside(const Tensor& c, std::size_t i, double lo, double hi, double tol) {
  for (std::size_t a = 0; a < 3; ++a)
    if (c.at(i, a) < lo + tol || c.at(i, a) > hi - tol) return false;
  return true;
}

MaterialProps fluid(double rho = 1.2, double mu = 0.05) {
  MaterialProps m;
  m.rho = rho;
  m.mu = mu;
  m.cp = 2.0;
  m.k = 0.3;
  return m;
}

SurfacePatches patches(std::vector<std::size_t> idx, Tensor normal, Tensor area) {
  return {std::move(idx), std::move(normal), std::move(area)};
}

}  // namespace

TEST(GradOperator, LinearFieldOnLatticeIsExact) {
  const Tensor c = unit_lattice(4);
  const Tensor f = sample(c, 1, [](double x, double y, double z, double* o) { o[0] = 2 * x + 3 * y - z; });
  for (FitOrder order : {FitOrder::kLinear, FitOrder::kQuadratic}) {
    for (std::size_t k : {6, 16}) {
      const auto op = build_grad_operator(c, k, order);
      const Tensor g = grad_apply(op, f);
      for (std::size_t i = 0; i < c.rows(); ++i) {
        EXPECT_NEAR(g.at(i, 0), 2.0, 1e-10);
        EXPECT_NEAR(g.at(i, 1), 3.0, 1e-10);
        EXPECT_NEAR(g.at(i, 2), -1.0, 1e-10);
      }
    }
  }
}

TEST(GradOperator, ConstantAndLinearOnJitteredCloud) {
  const Tensor c = unit_lattice(7, 0.3);
  const auto op = build_grad_operator(c);
  const Tensor g0 = grad_apply(op, Tensor::full({c.rows(), 2}, 4.25));
  for (double v : g0.values()) EXPECT_NEAR(v, 0.0, 1e-10);
  const Tensor f = sample(c, 1, [](double x, double y, double z, double* o) { o[0] = -1.5 * x + 0.5 * y + 7 * z + 2; });
  const Tensor g = grad_apply(op, f);
  for (std::size_t i = 0; i < c.rows(); ++i) {
    EXPECT_NEAR(g.at(i, 0), -1.5, 1e-10);
    EXPECT_NEAR(g.at(i, 1), 0.5, 1e-10);
    EXPECT_NEAR(g.at(i, 2), 7.0, 1e-10);
  }
}

TEST(GradOperator, QuadraticFieldExactWhereQuadraticFitUsed) {
  const Tensor c = unit_lattice(6, 0.2);
  const auto op = build_grad_operator(c);
  EXPECT_FALSE(op.interior_index.empty());
  const Tensor f = sample(c, 1, [](double x, double y, double z, double* o) { o[0] = x * x - 2 * x * y + 3 * z * z + y; });
  const Tensor g = grad_apply(op, f);
  std::size_t quad = 0;
  for (std::size_t i = 0; i < c.rows(); ++i) {
    if (op.fit[i] != FitOrder::kQuadratic) continue;
    ++quad;
    const double x = c.at(i, 0), y = c.at(i, 1), z = c.at(i, 2);
    EXPECT_NEAR(g.at(i, 0), 2 * x - 2 * y, 1e-9);
    EXPECT_NEAR(g.at(i, 1), -2 * x + 1, 1e-9);
    EXPECT_NEAR(g.at(i, 2), 6 * z, 1e-9);
  }
  EXPECT_EQ(quad, c.rows());
}

TEST(GradOperator, GradientOfVectorFieldLayout) {
  const Tensor c = unit_lattice(4);
  const auto op = build_grad_operator(c, 8, FitOrder::kLinear);
  // f_a = (a+1)·x_b weighting gives ∂f_a/∂x_b = (a+1)(b+1).
  const Tensor f = sample(c, 2, [](double x, double y, double z, double* o) {
    o[0] = x + 2 * y + 3 * z;
    o[1] = 2 * x + 4 * y + 6 * z;
  });
  const Tensor g = grad_apply(op, f);
  ASSERT_EQ(g.shape(), (Shape{64, 6}));
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 3; ++b) EXPECT_NEAR(g.at(17, 3 * a + b), double((a + 1) * (b + 1)), 1e-10);
}

namespace {

double slope(const std::vector<double>& h, const std::vector<double>& e) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = double(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double x = std::log(h[i]), y = std::log(e[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

// With the six face neighbours (k = 6) and a linear fit, an interior lattice
// stencil is symmetric, so even-order error terms cancel: x² is exact and x³
// converges at second order. On a face the stencil is one-sided and x²
// converges at first order.
TEST(GradOperator, ConvergenceOrders) {
  std::vector<double> hs, boundary_err, interior_err_cubic;
  for (double h : {0.2, 0.1, 0.05}) {
    const std::size_t n = static_cast<std::size_t>(std::lround(1.0 / h)) + 1;
    const Tensor c = unit_lattice(n);
    const auto op = build_grad_operator(c, 6, FitOrder::kLinear);
    const Tensor sq = sample(c, 1, [](double x, double, double, double* o) { o[0] = x * x; });
    const Tensor cu = sample(c, 1, [](double x, double, double, double* o) { o[0] = x * x * x; });
    const Tensor gs = grad_apply(op, sq), gc = grad_apply(op, cu);
    double eb = 0, ei_sq = 0, ei_cu = 0;
    for (std::size_t i = 0; i < c.rows(); ++i) {
      const double x = c.at(i, 0);
      if (strictly_inside(c, i, 0.0, 1.0, 1e-9)) {
        ei_sq = std::max(ei_sq, std::abs(gs.at(i, 0) - 2 * x));
        ei_cu = std::max(ei_cu, std::abs(gc.at(i, 0) - 3 * x * x));
      } else if (x < 1e-9 || x > 1 - 1e-9) {
        eb = std::max(eb, std::abs(gs.at(i, 0) - 2 * x));
      }
    }
    EXPECT_LT(ei_sq, 1e-10) << "h=" << h;
    hs.push_back(h);
    boundary_err.push_back(eb);
    interior_err_cubic.push_back(ei_cu);
  }
  EXPECT_NEAR(slope(hs, boundary_err), 1.0, 0.15);
  EXPECT_NEAR(slope(hs, interior_err_cubic), 2.0, 0.15);
}

TEST(GradOperator, QuadraticFitConvergesAtSecondOrderOnCubic) {
  std::vector<double> hs, errs;
  for (double h : {0.2, 0.1, 0.05}) {
    const std::size_t n = static_cast<std::size_t>(std::lround(1.0 / h)) + 1;
    const Tensor c = unit_lattice(n);
    const auto op = build_grad_operator(c);
    const Tensor f = sample(c, 1, [](double x, double y, double, double* o) { o[0] = x * x * x + x * y * y; });
    const Tensor g = grad_apply(op, f);
    double e = 0;
    for (std::size_t i : op.interior_index) {
      const double x = c.at(i, 0), y = c.at(i, 1);
      e = std::max(e, std::abs(g.at(i, 0) - (3 * x * x + y * y)));
    }
    hs.push_back(h);
    errs.push_back(e);
  }
  EXPECT_GT(slope(hs, errs), 1.8);
}

TEST(GradOperator, Preconditions) {
  EXPECT_THROW(build_grad_operator(unit_lattice(3), 4), ConfigError);
  EXPECT_THROW(build_grad_operator(unit_lattice(2), 8), DimensionError);  // N = 8 is not more than k
  EXPECT_THROW(build_grad_operator(Tensor::zeros({10, 2}), 5), DimensionError);
  // All points in one plane: no neighbourhood spans three directions.
  const Tensor flat = lattice({5, 5, 1}, {0, 0, 0}, {1, 1, 0});
  try {
    build_grad_operator(flat, 8);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("point 0"), std::string::npos) << e.what();
  }
  const auto op = build_grad_operator(unit_lattice(3), 8);
  EXPECT_THROW(grad_apply(op, Tensor::zeros({26, 1})), DimensionError);
}

TEST(GradOperator, NeighbourSearchMatchesBruteForce) {
  std::mt19937_64 rng(11);
  const Tensor c = random_tensor({300, 3}, rng, -2, 2);
  NeighborSearch s(c);
  for (std::size_t i = 0; i < 300; i += 7) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < 300; ++j)
      if (j != i) all.emplace_back(s.dist2(i, j), j);
    std::sort(all.begin(), all.end());
    const auto got = s.query(i, 12);
    for (std::size_t j = 0; j < 12; ++j) EXPECT_EQ(got[j], all[j].second);
  }
}

TEST(GradOperator, BackwardIsTransposeOfForward) {
  const Tensor c = unit_lattice(4, 0.2);
  const auto op = build_grad_operator(c, 10);
  std::mt19937_64 rng(12);
  const Tensor f = random_tensor({64, 2}, rng);
  auto r = finite_diff_check([&](const std::vector<Tensor>& ps) { return probe(grad_apply(op, ps[0])); }, {f}, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

namespace {

struct Channel {
  Tensor coords;
  ScatteredGradOperator op;
};

Channel channel(double jitter) {
  Channel ch;
  ch.coords = lattice({11, 9, 6}, {0, -1, 0}, {2, 1, 1}, jitter, 3);
  ch.op = build_grad_operator(ch.coords);
  return ch;
}

FieldPrediction poiseuille(const Tensor& c, double umax, double h, double mu, double p0) {
  FieldPrediction f;
  f.v = sample(c, 3, [&](double, double y, double, double* o) {
    o[0] = umax * (1 - (y / h) * (y / h));
    o[1] = o[2] = 0;
  });
  const double dpdx = -2 * mu * umax / (h * h);
  f.p = sample(c, 1, [&](double x, double, double, double* o) { o[0] = p0 + dpdx * x; });
  f.T = sample(c, 1, [](double, double y, double, double* o) { o[0] = 300 + 5 * y; });
  return f;
}

}  // namespace

TEST(PhysicsResidual, UniformFieldsGiveZero) {
  const Channel ch = channel(0.0);
  FieldPrediction f;
  const std::size_t n = ch.coords.rows();
  f.v = broadcast_rows(Tensor::vector({1.0, -2.0, 0.5}), n);
  f.p = Tensor::full({n, 1}, 101325.0);
  f.T = Tensor::full({n, 1}, 293.0);
  const auto t = physics_terms(f, ch.op, fluid());
  EXPECT_LT(t.total.item(), 1e-12);
  EXPECT_GE(t.total.item(), 0.0);
}

TEST(PhysicsResidual, PoiseuilleSatisfiesSteadyEquations) {
  for (double jitter : {0.0, 0.25}) {
    const Channel ch = channel(jitter);
    const MaterialProps mat = fluid(1.0, 0.01);
    const double U = 1.5;
    const auto t = physics_terms(poiseuille(ch.coords, U, 1.0, mat.mu, 10.0), ch.op, mat);
    EXPECT_GT(ch.op.interior_index.size(), 50u);
    EXPECT_LT(t.momentum.item(), 1e-6 * mat.rho * U * U) << "jitter " << jitter;
    EXPECT_LT(t.continuity.item(), 1e-20);
    EXPECT_LT(t.energy.item(), 1e-12);
  }
}

TEST(PhysicsResidual, WrongPressureGradientIsDetected) {
  const Channel ch = channel(0.0);
  const MaterialProps mat = fluid(1.0, 0.01);
  FieldPrediction f = poiseuille(ch.coords, 1.0, 1.0, mat.mu, 0.0);
  f.p = scale(f.p, 2.0);  // twice the balancing gradient leaves a residual of 2μU/h² = 0.02
  const auto t = physics_terms(f, ch.op, mat);
  EXPECT_NEAR(t.momentum.item(), 0.02 * 0.02, 1e-9);
}

TEST(PhysicsResidual, PureShearIsDivergenceFree) {
  const Tensor c = unit_lattice(6, 0.3);
  const auto op = build_grad_operator(c);
  FieldPrediction f;
  f.v = sample(c, 3, [](double, double y, double, double* o) {
    o[0] = y;
    o[1] = o[2] = 0;
  });
  f.p = Tensor::zeros({c.rows(), 1});
  f.T = Tensor::zeros({c.rows(), 1});
  std::vector<std::size_t> all(c.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto t = physics_terms(f, op, fluid(), &all);
  EXPECT_LT(t.continuity.item(), 1e-10);
  // (v·∇)v = y·∂(y)/∂x = 0 and ∇·τ = 0, so momentum also vanishes.
  EXPECT_LT(physics_terms(f, op, fluid()).momentum.item(), 1e-18);
}

TEST(PhysicsResidual, EnergyTermMatchesAnalyticAdvectionDiffusion) {
  // v = (1,0,0), T = x²: ρc_p·2x − 2k per point.
  const Channel ch = channel(0.0);
  const MaterialProps mat = fluid();
  const std::size_t n = ch.coords.rows();
  FieldPrediction f;
  f.v = broadcast_rows(Tensor::vector({1, 0, 0}), n);
  f.p = Tensor::zeros({n, 1});
  f.T = sample(ch.coords, 1, [](double x, double, double, double* o) { o[0] = x * x; });
  double expect = 0;
  for (std::size_t i : ch.op.interior_index) {
    const double r = mat.rho * mat.cp * 2 * ch.coords.at(i, 0) - 2 * mat.k;
    expect += r * r;
  }
  expect /= double(ch.op.interior_index.size());
  EXPECT_NEAR(physics_terms(f, ch.op, mat).energy.item(), expect, 1e-9 * expect);
}

TEST(PhysicsResidual, MismatchedSizesRejected) {
  const Channel ch = channel(0.0);
  FieldPrediction f = poiseuille(ch.coords, 1, 1, 0.01, 0);
  f.p = Tensor::zeros({3, 1});
  EXPECT_THROW(physics_residual(f, ch.op, fluid()), DimensionError);
}

TEST(PhysicsResidual, GradientCheckThroughResidual) {
  const Tensor c = lattice({4, 4, 2}, {0, 0, 0}, {1, 1, 0.4}, 0.2, 9);
  const auto op = build_grad_operator(c, 12);
  std::mt19937_64 rng(13);
  const MaterialProps mat = fluid(1.1, 0.3);
  std::vector<std::size_t> all(c.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto r = finite_diff_check(
      [&](const std::vector<Tensor>& ps) {
        return physics_residual({ps[0], ps[1], ps[2], {}}, op, mat, &all);
      },
      {random_tensor({32, 3}, rng), random_tensor({32, 1}, rng), random_tensor({32, 1}, rng)}, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-5) << "param " << r.worst_param << " idx " << r.worst_index;
}

TEST(ForceIntegral, SinglePatchPressureForce) {
  const Tensor c = unit_lattice(3);
  FieldPrediction f;
  f.v = Tensor::zeros({27, 3});
  f.p = Tensor::full({27, 1}, 5.0);
  const auto s = patches({13}, Tensor::matrix({{1, 0, 0}}), Tensor::vector({2}));
  const Tensor F = force_integral(f, s, nullptr, fluid());
  EXPECT_TRUE(F.bitwise_equal(Tensor::vector({-10, 0, 0})));
  const auto s2 = patches({13}, Tensor::matrix({{1, 0, 0}}), Tensor::vector({4}));
  EXPECT_TRUE(force_integral(f, s2, nullptr, fluid()).bitwise_equal(Tensor::vector({-20, 0, 0})));
}

TEST(ForceIntegral, ConvectiveAndViscousTerms) {
  const Tensor c = unit_lattice(4);
  const auto op = build_grad_operator(c, 10);
  FieldPrediction f;
  // v = (y, 0, 0): τ_xy = τ_yx = μ.
  f.v = sample(c, 3, [](double, double y, double, double* o) {
    o[0] = y + 2;
    o[1] = 0;
    o[2] = 0;
  });
  f.p = Tensor::zeros({64, 1});
  const MaterialProps mat = fluid(1.5, 0.2);
  // Patch at point 21 (x=1/3, y=1/3, z=1/3) with n = e_y, ΔA = 0.5: v·n = 0, τ·n = (μ, 0, 0).
  const auto sy = patches({21}, Tensor::matrix({{0, 1, 0}}), Tensor::vector({0.5}));
  const Tensor Fy = force_integral(f, sy, &op, mat);
  EXPECT_NEAR(Fy[0], 0.2 * 0.5, 1e-12);
  EXPECT_NEAR(Fy[1], 0.0, 1e-12);
  // n = e_x: convective ρ v_x² and τ·e_x = (0, μ, 0).
  const auto sx = patches({21}, Tensor::matrix({{1, 0, 0}}), Tensor::vector({0.5}));
  const Tensor Fx = force_integral(f, sx, &op, mat);
  const double vx = 1.0 / 3.0 + 2;
  EXPECT_NEAR(Fx[0], 1.5 * vx * vx * 0.5, 1e-12);
  EXPECT_NEAR(Fx[1], 0.2 * 0.5, 1e-12);
}

TEST(ForceIntegral, InvalidPatchesRejected) {
  FieldPrediction f;
  f.v = Tensor::zeros({4, 3});
  f.p = Tensor::zeros({4, 1});
  EXPECT_THROW(force_integral(f, patches({4}, Tensor::matrix({{1, 0, 0}}), Tensor::vector({1})), nullptr, fluid()),
               DimensionError);
  EXPECT_THROW(force_integral(f, patches({0}, Tensor::matrix({{1, 1, 0}}), Tensor::vector({1})), nullptr, fluid()),
               DataError);
  EXPECT_THROW(force_integral(f, patches({0}, Tensor::matrix({{1, 0, 0}}), Tensor::vector({0})), nullptr, fluid()),
               DataError);
}

namespace {

struct SphereCloud {
  Tensor coords;
  SurfacePatches surface;
  double total_area = 0;
};

// Face centroids of an icosphere plus inner and outer shells, so the
// gradient operator has volumetric support at every surface point.
SphereCloud sphere_cloud(int levels) {
  const auto q = face_quadrature(icosphere(levels, 1.0));
  const std::size_t f = q.centroid.rows();
  Buffer b;
  for (double s : {1.0, 0.85, 1.15})
    for (std::size_t i = 0; i < f * 3; ++i) b.push_back(q.centroid[i] * s);
  SphereCloud sc;
  sc.coords = Tensor({3 * f, 3}, std::move(b));
  std::vector<std::size_t> idx(f);
  for (std::size_t i = 0; i < f; ++i) idx[i] = i;
  sc.surface = {idx, q.normal, q.area};
  for (double a : q.area.values()) sc.total_area += a;
  return sc;
}

}  // namespace

TEST(Icosphere, OutwardNormalsAndNearSphericalArea) {
  const auto q = face_quadrature(icosphere(3, 2.0));
  EXPECT_EQ(q.centroid.rows(), 20u * 64u);
  double area = 0;
  for (std::size_t i = 0; i < q.centroid.rows(); ++i) {
    double dot = 0;
    for (std::size_t a = 0; a < 3; ++a) dot += q.normal.at(i, a) * q.centroid.at(i, a);
    EXPECT_GT(dot, 0.0);
    area += q.area[i];
  }
  EXPECT_NEAR(area, 4 * std::numbers::pi * 4, 0.05 * 16 * std::numbers::pi);
}

TEST(ForceIntegral, ClosedSurfaceUniformPressureVanishes) {
  const SphereCloud sc = sphere_cloud(3);
  const std::size_t n = sc.coords.rows();
  FieldPrediction f;
  f.v = Tensor::zeros({n, 3});
  for (double p0 : {1.0, 101325.0}) {
    f.p = Tensor::full({n, 1}, p0);
    const Tensor F = force_integral(f, sc.surface, nullptr, fluid());
    const double mag = std::sqrt(F[0] * F[0] + F[1] * F[1] + F[2] * F[2]);
    EXPECT_LE(mag, 1e-9 * p0 * sc.total_area);
  }
}

TEST(HeatFlux, SinglePatchAndConstantField) {
  const Tensor c = unit_lattice(4);
  const auto op = build_grad_operator(c, 10);
  MaterialProps mat = fluid();
  mat.k = 2.0;
  FieldPrediction f;
  f.T = sample(c, 1, [](double x, double, double, double* o) { o[0] = x; });
  const auto s = patches({0}, Tensor::matrix({{1, 0, 0}}), Tensor::vector({1}));
  EXPECT_NEAR(heat_flux_integral(f, s, op, mat).item(), -2.0, 1e-12);
  f.T = Tensor::full({64, 1}, 350.0);
  EXPECT_NEAR(heat_flux_integral(f, s, op, mat).item(), 0.0, 1e-12);
}

TEST(HeatFlux, ClosedSurfaceLinearTemperatureVanishes) {
  const SphereCloud sc = sphere_cloud(2);
  const auto op = build_grad_operator(sc.coords);
  MaterialProps mat = fluid();
  mat.k = 3.0;
  FieldPrediction f;
  f.T = sample(sc.coords, 1, [](double x, double y, double z, double* o) { o[0] = x - 2 * y + 0.5 * z; });
  EXPECT_LE(std::abs(heat_flux_integral(f, sc.surface, op, mat).item()), 1e-9 * mat.k * sc.total_area);
}

TEST(StrainEnergy, HandValues) {
  VolumeCells cells{{0}, Tensor::vector({2.0}), Tensor::matrix({{0.001, 0, 0, 0, 0, 0}})};
  EXPECT_NEAR(strain_energy(Tensor::matrix({{100, 0, 0, 0, 0, 0}}), cells).item(), 0.1, 1e-15);
  VolumeCells shear{{0}, Tensor::vector({1.0}), Tensor::matrix({{0, 0, 0, 0, 0, 0.001}})};
  EXPECT_NEAR(strain_energy(Tensor::matrix({{0, 0, 0, 0, 0, 10}}), shear).item(), 0.01, 1e-15);
  EXPECT_EQ(strain_energy(Tensor::zeros({1, 6}), cells).item(), 0.0);
  VolumeCells bad{{0}, Tensor::vector({0.0}), Tensor::zeros({1, 6})};
  EXPECT_THROW(strain_energy(Tensor::zeros({1, 6}), bad), DataError);
}

TEST(StrainEnergy, ContractionMatchesFullTensorOracle) {
  std::mt19937_64 rng(14);
  const Tensor s = random_tensor({5, 6}, rng), e = random_tensor({5, 6}, rng);
  const Tensor got = voigt_contract(s, e);
  for (std::size_t i = 0; i < 5; ++i) {
    double full = 0;
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b)
        full += s.at(i, detail::kVoigt[a][b]) * e.at(i, detail::kVoigt[a][b]);
    EXPECT_NEAR(got[i], full, 1e-14);
  }
}

TEST(DragCoefficient, HandValueAndLinearity) {
  FlowConditions fc{1.0, 10.0, 2.0, {1, 0, 0}};
  EXPECT_DOUBLE_EQ(drag_coefficient(Tensor::vector({100, 0, 0}), fc), 1.0);
  EXPECT_EQ(drag_coefficient(Tensor::vector({0, 5, -3}), fc), 0.0);
  EXPECT_DOUBLE_EQ(drag_coefficient(Tensor::vector({250, 1, 1}), fc), 2.5 * drag_coefficient(Tensor::vector({100, 7, 7}), fc));
  fc.U = 0;
  EXPECT_THROW(drag_coefficient(Tensor::vector({1, 0, 0}), fc), ConfigError);
}

TEST(Strain, TranslationStretchAndRotation) {
  const Tensor c = unit_lattice(5, 0.2);
  const auto op = build_grad_operator(c);
  const Tensor t = strain_from_displacement(broadcast_rows(Tensor::vector({1, 2, 3}), c.rows()), op);
  for (double v : t.values()) EXPECT_NEAR(v, 0.0, 1e-12);
  const Tensor s = strain_from_displacement(
      sample(c, 3, [](double x, double, double, double* o) {
        o[0] = 0.003 * x;
        o[1] = o[2] = 0;
      }),
      op);
  for (std::size_t i = 0; i < c.rows(); ++i) {
    EXPECT_NEAR(s.at(i, 0), 0.003, 1e-12);
    for (std::size_t j = 1; j < 6; ++j) EXPECT_NEAR(s.at(i, j), 0.0, 1e-12);
  }
  const double w[3] = {1e-3, -2e-3, 5e-4};
  const Tensor r = strain_from_displacement(sample(c, 3,
                                                   [&](double x, double y, double z, double* o) {
                                                     o[0] = w[1] * z - w[2] * y;
                                                     o[1] = w[2] * x - w[0] * z;
                                                     o[2] = w[0] * y - w[1] * x;
                                                   }),
                                            op);
  for (double v : r.values()) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(Strain, ShearComponentsInVoigtOrder) {
  const Tensor c = unit_lattice(4);
  const auto op = build_grad_operator(c, 10);
  // u = (a·y, b·z, c·x): ε_xy = a/2, ε_yz = b/2, ε_xz = c/2.
  const Tensor e = strain_from_displacement(sample(c, 3,
                                                   [](double x, double y, double z, double* o) {
                                                     o[0] = 0.2 * y;
                                                     o[1] = 0.4 * z;
                                                     o[2] = 0.6 * x;
                                                   }),
                                            op);
  EXPECT_NEAR(e.at(5, 3), 0.2, 1e-12);
  EXPECT_NEAR(e.at(5, 4), 0.3, 1e-12);
  EXPECT_NEAR(e.at(5, 5), 0.1, 1e-12);
}

TEST(Hooke, UniaxialSteelValues) {
  MaterialProps m;
  m.E = 200e9;
  m.nu = 0.3;
  const Tensor s = hooke_stress(Tensor::matrix({{1e-3, 0, 0, 0, 0, 0}}), m);
  const double sxx = 200e9 / 1.3 * 1.75e-3, syy = 200e9 / 1.3 * 0.75e-3;
  EXPECT_NEAR(s.at(0, 0), sxx, 1e-9 * sxx);
  EXPECT_NEAR(s.at(0, 1), syy, 1e-9 * syy);
  EXPECT_NEAR(s.at(0, 2), syy, 1e-9 * syy);
  EXPECT_NEAR(s.at(0, 0) / 1e6, 269.23, 0.005);
  EXPECT_NEAR(s.at(0, 1) / 1e6, 115.38, 0.005);
  for (std::size_t j = 3; j < 6; ++j) EXPECT_EQ(s.at(0, j), 0.0);
}

TEST(Hooke, ZeroHydrostaticAndShear) {
  MaterialProps m;
  m.E = 70e9;
  m.nu = 0.25;
  EXPECT_TRUE(hooke_stress(Tensor::zeros({2, 6}), m).bitwise_equal(Tensor::zeros({2, 6})));
  const double e = 2e-4;
  const Tensor h = hooke_stress(Tensor::matrix({{e, e, e, 0, 0, 0}}), m);
  const double expect = e * m.E / (1 + m.nu) * (1 + 3 * m.nu / (1 - 2 * m.nu));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(h.at(0, j), expect, 1e-9 * expect);
  // Tensor shear strain maps to σ = 2G·ε = E/(1+ν)·ε.
  const Tensor s = hooke_stress(Tensor::matrix({{0, 0, 0, 0, 0, 1e-3}}), m);
  EXPECT_NEAR(s.at(0, 5), m.E / (1 + m.nu) * 1e-3, 1e-3);
}

TEST(Hooke, LinearityProperty) {
  std::mt19937_64 rng(15);
  MaterialProps m;
  for (int t = 0; t < 50; ++t) {
    const Tensor e1 = random_tensor({4, 6}, rng, -1e-3, 1e-3), e2 = random_tensor({4, 6}, rng, -1e-3, 1e-3);
    const double a = std::uniform_real_distribution<double>(-3, 3)(rng), b = std::uniform_real_distribution<double>(-3, 3)(rng);
    const Tensor lhs = hooke_stress(add(scale(e1, a), scale(e2, b)), m);
    const Tensor rhs = add(scale(hooke_stress(e1, m), a), scale(hooke_stress(e2, m), b));
    EXPECT_LT(rel_frob(lhs, rhs), 1e-12);
  }
}

TEST(Hooke, IncompressibleLimitRejected) {
  MaterialProps m;
  m.nu = 0.5;
  EXPECT_THROW(hooke_stress(Tensor::zeros({1, 6}), m), NumericError);
  m.nu = 0.6;
  EXPECT_THROW(hooke_stress(Tensor::zeros({1, 6}), m), NumericError);
  EXPECT_THROW(validate(m), ConfigError);
}

TEST(VonMises, ClosedFormCases) {
  const Tensor s = Tensor::matrix({{250, 0, 0, 0, 0, 0}, {-40, 0, 0, 0, 0, 0}, {7, 7, 7, 0, 0, 0}, {0, 0, 0, 0, 0, 12}});
  const Tensor v = von_mises(s);
  ASSERT_EQ(v.shape(), (Shape{4}));
  EXPECT_NEAR(v[0], 250.0, 1e-12 * 250);
  EXPECT_NEAR(v[1], 40.0, 1e-12 * 40);
  EXPECT_NEAR(v[2], 0.0, 1e-12);
  EXPECT_NEAR(v[3], std::sqrt(3.0) * 12, 1e-12 * 12 * std::sqrt(3.0));
}

TEST(VonMises, PrincipalStressOracleAndHydrostaticInvariance) {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int t = 0; t < 100; ++t) {
    const Tensor s = random_tensor({1, 6}, rng, -100, 100);
    Eigen::Matrix3d m;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) m(a, b) = s.at(0, detail::kVoigt[a][b]);
    const Eigen::Vector3d p = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(m).eigenvalues();
    const double oracle = std::sqrt(0.5 * ((p[0] - p[1]) * (p[0] - p[1]) + (p[1] - p[2]) * (p[1] - p[2]) +
                                           (p[2] - p[0]) * (p[2] - p[0])));
    const double vm = von_mises(s)[0];
    EXPECT_NEAR(vm, oracle, 1e-10 * std::max(1.0, oracle));
    Tensor shifted = s;
    const double p0 = u(rng);
    for (std::size_t j = 0; j < 3; ++j) shifted.mutable_values()[j] += p0;
    EXPECT_NEAR(von_mises(shifted)[0], vm, 1e-12 * std::max(1.0, vm));
  }
}

TEST(Equilibrium, UniformAndLinearStress) {
  const Tensor c = unit_lattice(5, 0.2);
  const auto op = build_grad_operator(c);
  const std::size_t n = c.rows();
  EXPECT_LT(equilibrium_residual(broadcast_rows(Tensor::vector({1, 2, 3, 4, 5, 6}), n), Tensor::zeros({n, 3}), op).item(),
            1e-20);
  const double gamma = 3.5;
  const Tensor s = sample(c, 6, [&](double x, double, double, double* o) {
    for (int j = 0; j < 6; ++j) o[j] = 0;
    o[0] = -gamma * x;
  });
  EXPECT_LT(equilibrium_residual(s, broadcast_rows(Tensor::vector({gamma, 0, 0}), n), op).item(), 1e-10);
  // Wrong body force leaves exactly γ² per point.
  EXPECT_NEAR(equilibrium_residual(s, Tensor::zeros({n, 3}), op).item(), gamma * gamma, 1e-9);
}

TEST(Equilibrium, ShearStressUsesVoigtSlots) {
  const Tensor c = unit_lattice(5);
  const auto op = build_grad_operator(c);
  const std::size_t n = c.rows();
  // σ_xy = y gives (∇·σ)_x = 1; σ_yz = z gives (∇·σ)_y = 1; σ_xz = x gives (∇·σ)_z = 1.
  const Tensor s = sample(c, 6, [](double x, double y, double z, double* o) {
    o[0] = o[1] = o[2] = 0;
    o[3] = z;
    o[4] = x;
    o[5] = y;
  });
  EXPECT_LT(equilibrium_residual(s, Tensor::full({n, 3}, -1.0), op).item(), 1e-20);
}

TEST(Equilibrium, ManufacturedDisplacement) {
  const Tensor c = unit_lattice(6, 0.2);
  const auto op = build_grad_operator(c);
  MaterialProps m;
  m.E = 1.0;
  m.nu = 0.3;
  // u = (x², 0, 0): σ_xx = (λ+2G)·2x, so (∇·σ)_x = 2(λ+2G).
  const Tensor eps = strain_from_displacement(sample(c, 3,
                                                     [](double x, double, double, double* o) {
                                                       o[0] = x * x;
                                                       o[1] = o[2] = 0;
                                                     }),
                                              op);
  const double g = m.E / (2 * (1 + m.nu)), lam = m.E * m.nu / ((1 + m.nu) * (1 - 2 * m.nu));
  const Tensor body = broadcast_rows(Tensor::vector({-2 * (lam + 2 * g), 0, 0}), c.rows());
  EXPECT_LT(equilibrium_residual(hooke_stress(eps, m), body, op).item(), 1e-16);
}
