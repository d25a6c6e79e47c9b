#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrq/bench.hpp"
#include "lrq/geometry.hpp"
#include "lrq/gradcheck.hpp"
#include "lrq/losses.hpp"
#include "lrq/model.hpp"
#include "lrq/optim.hpp"
#include "lrq/physics.hpp"
#include "lrq/train.hpp"

// Property suites shared by `lrq verify` and the acceptance runner. Each
// check collects every failed expectation instead of stopping at the first.

namespace lrq::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  nlohmann::json data = nlohmann::json::object();
};

class Findings {
 public:
  void require(bool ok, const std::string& what) {
    ++checked_;
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return failures_.empty(); }
  std::size_t checked() const { return checked_; }
  const std::vector<std::string>& notes() const { return notes_; }

  std::string summary() const {
    std::ostringstream os;
    if (!ok()) {
      os << failures_.size() << "/" << checked_ << " failed: ";
      for (std::size_t i = 0; i < failures_.size() && i < 3; ++i) os << (i ? "; " : "") << failures_[i];
      if (failures_.size() > 3) os << "; ...";
    } else {
      os << checked_ << " expectations";
    }
    for (const auto& n : notes_) os << "; " << n;
    return os.str();
  }

 private:
  std::size_t checked_ = 0;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

template <class F>
CheckResult timed(const std::string& name, F&& body) {
  CheckResult r;
  r.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  Findings f;
  body(f, r.data);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.passed = f.ok();
  r.detail = f.summary();
  return r;
}

namespace detail {

inline Tensor random_matrix(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Buffer b(shape_numel(shape));
  for (auto& x : b) x = u(rng);
  return Tensor(std::move(shape), std::move(b));
}

/// Σ y ⊙ w with fixed weights in [0.5, 1.5], so each output entry matters.
inline Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, random_matrix(y.shape(), rng, 0.5, 1.5)));
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Randomized audit of the covariance-attention error bound.
inline CheckResult lowrank_bound(std::size_t trials = 1000, std::uint64_t seed = 2024) {
  return timed("lowrank_bound", [&](Findings& f, nlohmann::json& data) {
    bench::BoundAuditOptions o;
    o.seed = seed;
    const auto r = bench::bound_audit(trials, o);
    data = bench::to_json(r);
    f.require(r.violations == 0, std::to_string(r.violations) + " of " + std::to_string(trials) + " trials violate the bound");
    f.require(r.orthonormal_lhs <= 1e-12 && r.orthonormal_rhs <= 1e-12,
              "orthonormal keys give lhs " + fmt(r.orthonormal_lhs) + ", rhs " + fmt(r.orthonormal_rhs));
    f.require(r.probe_wins * 10 >= r.probe_pairs * 9, "rank-1 probe won " + std::to_string(r.probe_wins) + "/" +
                                                          std::to_string(r.probe_pairs));
    f.note(std::to_string(trials) + " trials, worst lhs/rhs " + fmt(r.worst_ratio) + ", probe " +
           std::to_string(r.probe_wins) + "/" + std::to_string(r.probe_pairs));
  });
}

/// Right- vs left-associated covariance products, and the identity case
/// against standard attention.
inline CheckResult associativity(std::size_t instances = 100, std::uint64_t seed = 11) {
  return timed("associativity", [&](Findings& f, nlohmann::json& data) {
    Rng rng(seed);
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    double worst = 0.0, worst_id = 0.0;
    for (std::size_t t = 0; t < instances; ++t) {
      const std::size_t c = pick(1, 32), n = pick(1, 256);
      const Tensor q = detail::random_matrix({n, c}, rng), k = detail::random_matrix({n, c}, rng),
                   v = detail::random_matrix({n, c}, rng);
      worst = std::max(worst, bench::rel_frobenius(covariance_attention(q, k, v), covariance_attention_left(q, k, v)));
    }
    for (std::size_t t = 0; t < 10; ++t) {
      const std::size_t c = pick(1, 32), n = pick(c, 256);
      const Tensor k = bench::to_tensor(bench::orthonormal(n, c, rng));
      const Tensor q = detail::random_matrix({n, c}, rng);
      worst_id = std::max(worst_id, bench::rel_frobenius(covariance_attention(q, k, k),
                                                         standard_attention_materialized(q, k, k)));
    }
    double pair = 0.0;
    for (std::size_t n : {256, 1024, 4096}) {
      const auto a = bench::kernel_agreement(n, 32, seed + n);
      pair = std::max({pair, a.materialized_vs_associative, a.covariance_vs_standard});
      f.require(a.covariance_gap <= a.covariance_bound * (1 + 1e-9), "kernel gap exceeds bound at N=" + std::to_string(n));
    }
    data = {{"max_rel_assoc", worst}, {"max_rel_identity", worst_id}, {"max_rel_pairwise", pair}};
    f.require(worst < 1e-12, "reassociation error " + fmt(worst));
    f.require(worst_id < 1e-10, "identity-case error " + fmt(worst_id));
    f.require(pair < 1e-10, "pairwise kernel error " + fmt(pair));
    f.note("assoc " + fmt(worst) + ", identity " + fmt(worst_id) + ", pairwise " + fmt(pair));
  });
}

// ---------------------------------------------------------------------------
// Gradients

struct GradCase {
  std::string name;
  ScalarFn f;
  std::vector<Tensor> params;
  double h = 1e-6;
  FdScheme scheme = FdScheme::kCentral;
};

inline ModelConfig gradcheck_model_config() {
  ModelConfig m = default_model_config(TaskKind::kFlow);
  m.pce.hidden_dim = 8;
  m.pce.num_heads = 2;
  m.pce.num_queries = 3;
  m.pce.ffn_expansion = 2;
  m.lrqa.feature_dim = 8;
  m.lrqa.num_layers = 2;
  return m;
}

/// Jittered 4×3×2 lattice in the unit box.
inline Tensor small_cloud(Rng& rng) {
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  Buffer b;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 2; ++k) {
        b.push_back((i + u(rng)) / 3.0);
        b.push_back((j + u(rng)) / 2.0);
        b.push_back(k + u(rng));
      }
  return Tensor({24, 3}, std::move(b));
}

inline std::vector<GradCase> op_cases(std::uint64_t seed) {
  Rng rng(seed);
  auto R = [&](Shape s, double lo = -1.0, double hi = 1.0) { return detail::random_matrix(std::move(s), rng, lo, hi); };
  using detail::probe;
  std::vector<GradCase> cs;
  auto add_case = [&](std::string name, ScalarFn f, std::vector<Tensor> p) {
    cs.push_back({std::move(name), std::move(f), std::move(p)});
  };

  add_case("matmul", [](auto& p) { return probe(matmul(p[0], p[1])); }, {R({5, 7}), R({7, 3})});
  add_case("matmul_tn", [](auto& p) { return probe(matmul_tn(p[0], p[1])); }, {R({6, 4}), R({6, 5})});
  add_case("transpose", [](auto& p) { return probe(transpose(p[0])); }, {R({3, 8})});
  add_case("affine", [](auto& p) { return probe(affine(p[0], p[1], p[2])); }, {R({4, 6}), R({6, 5}), R({5})});
  for (auto kind : {Elementwise::kAdd, Elementwise::kSub, Elementwise::kMul, Elementwise::kDiv}) {
    add_case("elementwise", [kind](auto& p) { return probe(elementwise(p[0], p[1], kind)); }, {R({3, 4}), R({3, 4}, 0.5, 2.0)});
    add_case("elementwise_scalar", [kind](auto& p) { return probe(elementwise(p[0], p[1], kind)); },
             {R({3, 4}), Tensor::scalar(1.7)});
  }
  Tensor x = R({4, 5}, -2.0, 2.0);
  for (auto& v : x.mutable_values()) v += v >= 0 ? 0.05 : -0.05;  // away from the ReLU kink
  add_case("relu", [](auto& p) { return probe(relu(p[0])); }, {x});
  add_case("gelu", [](auto& p) { return probe(gelu(p[0])); }, {x});
  add_case("tanh", [](auto& p) { return probe(activation(p[0], Activation::kTanh)); }, {x});
  add_case("sqrt", [](auto& p) { return probe(lrq::sqrt(p[0])); }, {R({3, 3}, 0.2, 3.0)});
  add_case("square", [](auto& p) { return probe(square(p[0])); }, {R({3, 3})});
  add_case("layer_norm", [](auto& p) { return probe(layer_norm(p[0], p[1], p[2], 1e-5)); }, {R({3, 6}), R({6}), R({6})});
  for (auto kind : {Reduction::kMean, Reduction::kSum, Reduction::kMax, Reduction::kFrobeniusNorm}) {
    for (std::optional<std::size_t> axis : {std::optional<std::size_t>{}, std::optional<std::size_t>{0},
                                            std::optional<std::size_t>{1}}) {
      add_case("reduce", [kind, axis](auto& p) { return probe(reduce(p[0], axis, kind)); }, {R({3, 4, 2})});
    }
  }
  add_case("softmax_rows", [](auto& p) { return probe(softmax_rows(p[0])); }, {R({3, 5}, -3, 3)});
  add_case("slice_cols", [](auto& p) { return probe(slice_cols(p[0], 1, 4)); }, {R({3, 5})});
  add_case("concat_cols", [](auto& p) { return probe(concat_cols({p[0], p[1], p[0]})); }, {R({4, 2}), R({4, 3})});
  add_case("gather_rows", [](auto& p) {
    const std::vector<std::size_t> idx{2, 0, 2, 1};
    return probe(gather_rows(p[0], idx));
  }, {R({3, 4})});
  add_case("broadcast_rows", [](auto& p) { return probe(broadcast_rows(p[0], 5)); }, {R({3})});
  add_case("scale_rows", [](auto& p) { return probe(scale_rows(p[0], p[1])); }, {R({4, 3}), R({4})});
  add_case("reshape", [](auto& p) { return probe(reshape(p[0], {2, 6})); }, {R({3, 4})});
  {
    const Tensor ang = R({3, 2}, -3, 3);
    Buffer c(6), s(6);
    for (std::size_t i = 0; i < 6; ++i) {
      c[i] = std::cos(ang[i]);
      s[i] = std::sin(ang[i]);
    }
    const Tensor ct({3, 2}, c), st({3, 2}, s);
    add_case("rotate_pairs", [ct, st](auto& p) { return probe(rotate_pairs(p[0], ct, st)); }, {R({3, 4})});
  }
  add_case("covariance_attention", [](auto& p) { return probe(covariance_attention(p[0], p[1], p[2], true)); },
           {R({6, 4}), R({6, 4}), R({6, 4})});
  add_case("mse_loss", [](auto& p) { return mse_loss(p[0], p[1]); }, {R({5, 2}), R({5, 2})});
  {
    std::vector<double> yh(6);
    for (std::size_t i = 0; i < 6; ++i) yh[i] = 0.3 * double(i);  // hinges off their kinks
    // Every pair is inverted, so entry k has gradient 2k − 5 and none cancels.
    const Tensor truth = Tensor::vector({0.9, 0.7, 0.3, 0.1, -0.4, -0.8});
    add_case("ranking_loss", [truth](auto& p) { return ranking_loss(p[0], truth, 0.05); },
             {Tensor({6}, Buffer(yh.begin(), yh.end()))});
  }
  add_case("squared_norm", [](auto& p) { return squared_norm(std::span<const Tensor>(p)); }, {R({3, 2}), R({4})});
  {
    MaterialProps m;
    m.E = 1.0;
    m.nu = 0.3;
    add_case("hooke_stress", [m](auto& p) { return probe(hooke_stress(p[0], m)); }, {R({3, 6})});
    add_case("von_mises", [](auto& p) { return probe(von_mises(p[0])); }, {R({4, 6}, 1, 3)});
  }

  // Composite pieces, checked with Ridders' extrapolation.
  auto composite = [&](std::string name, ScalarFn f, std::vector<Tensor> p) {
    cs.push_back({std::move(name), std::move(f), std::move(p), 1e-3, FdScheme::kRidders});
  };
  {
    const Tensor coords = small_cloud(rng);
    const auto op = std::make_shared<ScatteredGradOperator>(build_grad_operator(coords, 16));
    std::vector<std::size_t> all(coords.rows());
    std::iota(all.begin(), all.end(), 0);
    const MaterialProps mat{1.0, 0.1, 1.0, 0.5, 1.0, 0.3};
    add_case("grad_apply", [op](auto& p) { return probe(grad_apply(*op, p[0])); }, {R({24, 2})});
    composite("physics_terms", [op, all, mat](auto& p) {
      return physics_terms(FieldPrediction{p[0], p[1], p[2], {}}, *op, mat, &all).total;
    }, {R({24, 3}), R({24, 1}), R({24, 1})});
    SurfacePatches s{{0, 5, 9}, Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0.6, 0, 0.8}}), R({3, 1}, 0.1, 1.0)};
    composite("force_integral", [op, s, mat](auto& p) {
      return probe(force_integral(FieldPrediction{p[0], p[1], {}, {}}, s, op.get(), mat));
    }, {R({24, 3}), R({24, 1})});

    LrqaConfig lc;
    lc.feature_dim = 4;
    Rng lr(seed + 1);
    LrqaLayerParams lp = LrqaLayerParams::init(4, lr);
    lp.wout = R({4, 4});
    const RopeTables rope = rope_tables(coords, lc);
    composite("lrqa_layer", [rope, lc](auto& p) {
      return probe(lrqa_layer_forward(p[0], rope, LrqaLayerParams{p[1], p[2], p[3], p[4], p[5]}, lc));
    }, {R({24, 4}), lp.wq, lp.wk, lp.wv, lp.wout, R({4})});
  }
  {
    PceConfig pc = gradcheck_model_config().pce;
    Rng pr(seed + 2);
    PceParams pp = PceParams::init(pc, pr);
    ParamRefs refs;
    pp.collect(refs);
    std::vector<Tensor> vals;
    for (const auto& [n, t] : refs) vals.push_back(*t);
    vals.push_back(R({pc.input_dim}));
    composite("pce_encode", [pp, pc](auto& p) {
      PceParams q = pp;
      ParamRefs rs;
      q.collect(rs);
      for (std::size_t i = 0; i < rs.size(); ++i) *rs[i].second = p[i];
      return probe(pce_encode(p.back(), q, pc));
    }, vals);
  }
  return cs;
}

/// Full model on three small clouds: data term, physics residual of the
/// per-point fields and a ranking loss over per-sample means, as one scalar.
inline GradCase full_model_case(std::uint64_t seed) {
  Rng rng(seed);
  const ModelConfig mc = gradcheck_model_config();
  LrqModel m = LrqModel::init(mc, rng);
  for (auto& l : m.layers) {  // O(1) projections so every layer contributes
    for (Tensor* w : {&l.wq, &l.wk, &l.wv}) *w = detail::random_matrix(w->shape(), rng);
    l.wout = detail::random_matrix(l.wout.shape(), rng, -0.3, 0.3);
    l.bias = detail::random_matrix(l.bias.shape(), rng, -0.1, 0.1);
  }
  struct Item {
    Tensor coords, design;
    std::shared_ptr<ScatteredGradOperator> op;
  };
  std::vector<Item> items;
  for (int i = 0; i < 3; ++i) {
    Item it;
    it.coords = small_cloud(rng);
    it.design = detail::random_matrix({3}, rng);
    it.op = std::make_shared<ScatteredGradOperator>(build_grad_operator(it.coords, 16));
    items.push_back(std::move(it));
  }
  std::vector<std::size_t> all(24);
  std::iota(all.begin(), all.end(), 0);
  const MaterialProps mat{1.0, 0.1, 1.0, 0.5, 1.0, 0.3};
  const Tensor truth = Tensor::vector({0.3, -1.0, 2.0});
  GradCase c;
  c.name = "full_model";
  c.h = 1e-3;
  c.scheme = FdScheme::kRidders;
  c.params = m.param_values();
  c.f = [m, items, all, mat, truth](const std::vector<Tensor>& ps) {
    LrqModel mm = m;
    auto refs = mm.params();
    for (std::size_t i = 0; i < refs.size(); ++i) *refs[i].second = ps[i];
    Tensor loss = Tensor::scalar(0.0);
    std::vector<Tensor> scalars;
    for (const auto& it : items) {
      const Tensor y = model_forward(mm, it.coords, it.design);
      const FieldPrediction fp{slice_cols(y, 0, 3), slice_cols(y, 3, 4), slice_cols(y, 4, 5), {}};
      loss = add(loss, add(detail::probe(y), physics_terms(fp, *it.op, mat, &all).total));
      scalars.push_back(reshape(reduce(slice_cols(y, 0, 1), std::nullopt, Reduction::kMean), {1, 1}));
    }
    // A wide margin keeps every hinge on its linear branch.
    return add(loss, ranking_loss(concat_cols(scalars), truth, 100.0));
  };
  return c;
}

inline CheckResult gradients(std::uint64_t seed = 6) {
  return timed("gradients", [&](Findings& f, nlohmann::json& data) {
    auto cases = op_cases(seed);
    cases.push_back(full_model_case(seed));
    double worst = 0.0;
    std::string worst_name;
    nlohmann::json per = nlohmann::json::object();
    for (const auto& c : cases) {
      const auto r = finite_diff_check(c.f, c.params, c.h, c.scheme);
      double& slot = per[c.name].is_number() ? per[c.name].get_ref<double&>() : (per[c.name] = 0.0).get_ref<double&>();
      slot = std::max(slot, r.max_rel_error);
      f.require(r.max_rel_error < 1e-5, c.name + " rel error " + fmt(r.max_rel_error) + " (param " +
                                            std::to_string(r.worst_param) + ", index " + std::to_string(r.worst_index) + ")");
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_name = c.name;
      }
    }
    data = {{"max_rel_error", worst}, {"worst_case", worst_name}, {"cases", per}};
    f.note(std::to_string(cases.size()) + " cases, worst " + fmt(worst) + " (" + worst_name + ")");
  });
}

// ---------------------------------------------------------------------------
// Conservation and elasticity

/// Icosphere face centroids plus an inner and an outer shell, so the
/// gradient operator has volumetric support at every surface point.
struct ShellCloud {
  Tensor coords;
  SurfacePatches surface;
  double total_area = 0.0;
};

inline ShellCloud shell_cloud(int levels) {
  const auto q = face_quadrature(icosphere(levels, 1.0));
  const std::size_t nf = q.centroid.rows();
  Buffer b;
  for (double s : {1.0, 0.85, 1.15})
    for (std::size_t i = 0; i < nf * 3; ++i) b.push_back(q.centroid[i] * s);
  ShellCloud sc;
  sc.coords = Tensor({3 * nf, 3}, std::move(b));
  std::vector<std::size_t> idx(nf);
  std::iota(idx.begin(), idx.end(), 0);
  sc.surface = {idx, q.normal, q.area};
  for (double a : q.area.values()) sc.total_area += a;
  return sc;
}

inline CheckResult conservation() {
  return timed("conservation", [](Findings& f, nlohmann::json& data) {
    const ShellCloud sc = shell_cloud(3);
    const std::size_t n = sc.coords.rows();
    MaterialProps mat;
    mat.k = 3.0;
    double worst_f = 0.0;
    for (double p0 : {1.0, 101325.0}) {
      FieldPrediction fp;
      fp.v = Tensor::zeros({n, 3});
      fp.p = Tensor::full({n, 1}, p0);
      const Tensor F = force_integral(fp, sc.surface, nullptr, mat);
      worst_f = std::max(worst_f, std::sqrt(F[0] * F[0] + F[1] * F[1] + F[2] * F[2]) / (p0 * sc.total_area));
    }
    f.require(worst_f <= 1e-9, "uniform-pressure force " + fmt(worst_f) + " of p·A");

    const ShellCloud hc = shell_cloud(2);
    const auto op = build_grad_operator(hc.coords);
    const std::array<double, 3> g{1.0, -2.0, 0.5};
    Buffer t(hc.coords.rows());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = g[0] * hc.coords.at(i, 0) + g[1] * hc.coords.at(i, 1) + g[2] * hc.coords.at(i, 2);
    FieldPrediction ft;
    ft.T = Tensor({hc.coords.rows(), 1}, std::move(t));
    const double gnorm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    const double q_rel = std::abs(heat_flux_integral(ft, hc.surface, op, mat).item()) / (mat.k * gnorm * hc.total_area);
    f.require(q_rel <= 1e-9, "linear-temperature heat flux " + fmt(q_rel) + " of k·|∇T|·A");

    double worst_r = 0.0;
    for (const FlowParams& prm : {FlowParams{}, FlowParams{0.5, 2.0, 0.01, 1.0, 1.0, 2.0, 1.0}}) {
      const Sample s = gen_flow_sample(prm, 4096, 3);
      const auto sop = build_grad_operator(s.coords, 16);
      const MaterialProps m = flow_material(s);
      const double res = physics_residual(s.fields, sop, m).item();
      const double rel = res / (m.rho * prm.u_max * prm.u_max);
      worst_r = std::max(worst_r, rel);
      f.require(!sop.interior_index.empty(), "no interior points in the Poiseuille cloud");
    }
    f.require(worst_r < 1e-6, "Poiseuille residual " + fmt(worst_r) + " of ρU²");
    data = {{"force_rel", worst_f}, {"heat_rel", q_rel}, {"poiseuille_rel", worst_r}};
    f.note("force " + fmt(worst_f) + ", heat " + fmt(q_rel) + ", residual " + fmt(worst_r));
  });
}

inline CheckResult elasticity() {
  return timed("elasticity", [](Findings& f, nlohmann::json& data) {
    MaterialProps m;
    m.E = 200e9;
    m.nu = 0.3;
    const Tensor s = hooke_stress(Tensor::matrix({{1e-3, 0, 0, 0, 0, 0}}), m);
    // λ + 2G and λ for E = 200 GPa, ν = 0.3, times ε_xx.
    const double sxx = 200e9 / 1.3 * 1.75e-3, syy = 200e9 / 1.3 * 0.75e-3;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
    f.require(rel(s.at(0, 0), sxx) <= 1e-9, "sigma_xx " + fmt(s.at(0, 0)));
    f.require(rel(s.at(0, 1), syy) <= 1e-9 && rel(s.at(0, 2), syy) <= 1e-9, "sigma_yy/zz " + fmt(s.at(0, 1)));
    f.require(std::abs(s.at(0, 0) / 1e6 - 269.23) < 0.005 && std::abs(s.at(0, 1) / 1e6 - 115.38) < 0.005,
              "rounded MPa values");
    for (std::size_t j = 3; j < 6; ++j) f.require(s.at(0, j) == 0.0, "shear stress from uniaxial strain");

    const double sig = 250e6, tau = 80e6, p = 40e6;
    const Tensor vm = von_mises(Tensor::matrix({{sig, 0, 0, 0, 0, 0}, {-sig, 0, 0, 0, 0, 0}, {p, p, p, 0, 0, 0},
                                                {0, 0, 0, tau, 0, 0}, {0, 0, 0, 0, tau, 0}, {0, 0, 0, 0, 0, tau}}));
    f.require(rel(vm[0], sig) <= 1e-12 && rel(vm[1], sig) <= 1e-12, "uniaxial von Mises");
    f.require(vm[2] <= 1e-12 * p, "hydrostatic von Mises " + fmt(vm[2]));
    for (std::size_t i = 3; i < 6; ++i) f.require(rel(vm[i], std::sqrt(3.0) * tau) <= 1e-12, "shear von Mises");
    data = {{"sigma_xx_MPa", s.at(0, 0) / 1e6}, {"sigma_yy_MPa", s.at(0, 1) / 1e6}};
    f.note("sigma_xx " + fmt(s.at(0, 0) / 1e6) + " MPa, sigma_yy " + fmt(s.at(0, 1) / 1e6) + " MPa");
  });
}

inline CheckResult lr_schedule() {
  return timed("lr_schedule", [](Findings& f, nlohmann::json& data) {
    const LrSchedule s;
    const double a = lr_at_epoch(49, s), b = lr_at_epoch(50, s);
    f.require(lr_at_epoch(0, s) == 1e-4, "lr(0)");
    f.require(a == 1e-4, "lr(49) = " + fmt(a));
    f.require(b == 1e-5, "lr(50) = " + fmt(b));
    f.require(lr_at_epoch(99, s) == 1e-5, "lr(99)");
    data = {{"lr49", a}, {"lr50", b}};
  });
}

inline CheckResult metrics_ranking(std::uint64_t seed = 4) {
  return timed("metrics_ranking", [&](Findings& f, nlohmann::json& data) {
    auto vec = [](const std::vector<double>& v) { return Tensor({v.size()}, Buffer(v.begin(), v.end())); };
    const auto r = metrics(std::vector<double>{1, 2}, std::vector<double>{2, 4});
    f.require(r.mse == 2.5 && r.mae == 1.5 && r.max_ae == 2.0 && r.mre_percent == 50.0, "metrics hand case");
    const auto z = metrics(std::vector<double>{1, 5, 0.5}, std::vector<double>{0, 4, 1e-13});
    f.require(z.n_excluded_mre == 2 && z.mre_percent == 25.0, "near-zero targets excluded from MRE");
    f.require(ranking_loss(vec({1, 2}), vec({2, 1}), 0.0).item() == 1.0, "ranking hand case");
    f.require(ranking_loss(vec({5, -3}), vec({1, 1}), 0.0).item() == 0.0, "tied pair at m = 0");
    f.require(ranking_loss(vec({0, 1, 2, 3}), vec({10, 20, 30, 40}), 0.5).item() == 0.0, "ordered pairs beyond margin");

    Rng rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    std::size_t not_invariant = 0, tie_nonzero = 0;
    for (int t = 0; t < 100; ++t) {
      std::vector<double> yh(9), y(9), ty(9);
      for (auto& v : yh) v = u(rng);
      for (auto& v : y) v = u(rng);
      for (std::size_t i = 0; i < 9; ++i) ty[i] = std::exp(3 * y[i]) + y[i] * y[i] * y[i];
      if (ranking_loss(vec(yh), vec(y), 0.1).item() != ranking_loss(vec(yh), vec(ty), 0.1).item()) ++not_invariant;
      const std::vector<double> same(9, y[0]);
      if (ranking_loss(vec(yh), vec(same), 0.0).item() != 0.0) ++tie_nonzero;
    }
    f.require(not_invariant == 0, std::to_string(not_invariant) + " monotone transforms changed the ranking loss");
    f.require(tie_nonzero == 0, std::to_string(tie_nonzero) + " all-tied batches gave nonzero loss");
    data = {{"not_invariant", not_invariant}, {"tie_nonzero", tie_nonzero}};
  });
}

/// Reduced scaling fits (smaller N than the full benchmark).
inline CheckResult scaling_quick() {
  return timed("scaling", [](Findings& f, nlohmann::json& data) {
    bench::ScalingOptions o;
    const auto cov = bench::scaling_run(bench::Kernel::kCovariance, {4096, 8192, 16384, 32768, 65536}, 64, o);
    const auto mat = bench::scaling_run(bench::Kernel::kStandardMaterialized, {512, 1024, 2048, 4096}, 64, o);
    f.require(cov.fit.slope >= 0.8 && cov.fit.slope <= 1.2 && cov.fit.r2 >= 0.98,
              "covariance slope " + fmt(cov.fit.slope) + " R² " + fmt(cov.fit.r2));
    f.require(mat.fit.slope >= 1.7 && mat.fit.slope <= 2.3 && mat.fit.r2 >= 0.98,
              "materialized slope " + fmt(mat.fit.slope) + " R² " + fmt(mat.fit.r2));
    data = {{"covariance", bench::to_json(cov)}, {"standard_materialized", bench::to_json(mat)}};
    f.note("slopes " + fmt(cov.fit.slope) + " / " + fmt(mat.fit.slope));
  });
}

inline nlohmann::json to_json(const CheckResult& r) {
  return {{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}, {"seconds", r.seconds}, {"data", r.data}};
}

}  // namespace lrq::verify
