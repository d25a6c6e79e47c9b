#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <new>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lrq/init.hpp"
#include "lrq/lrqa.hpp"
#include "lrq/memory.hpp"

namespace lrq::bench {

enum class Kernel { kCovariance, kStandardMaterialized, kStandardAssociative };

inline std::string to_string(Kernel k) {
  switch (k) {
    case Kernel::kCovariance: return "covariance";
    case Kernel::kStandardMaterialized: return "standard_materialized";
    case Kernel::kStandardAssociative: return "standard_associative";
  }
  return "?";
}

inline Kernel parse_kernel(const std::string& s) {
  for (Kernel k : {Kernel::kCovariance, Kernel::kStandardMaterialized, Kernel::kStandardAssociative}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown kernel '" + s + "' (covariance, standard_materialized, standard_associative)");
}

inline Tensor run_kernel(Kernel k, const Tensor& q, const Tensor& kk, const Tensor& v) {
  switch (k) {
    case Kernel::kCovariance: return covariance_attention(q, kk, v, true);
    case Kernel::kStandardMaterialized: return standard_attention_materialized(q, kk, v);
    case Kernel::kStandardAssociative: return standard_attention_associative(q, kk, v);
  }
  throw ConfigError("unknown kernel");
}

/// Tensor bytes the kernel needs beyond its three inputs, ignoring C² terms.
inline double predicted_bytes(Kernel k, std::size_t n, std::size_t c) {
  const double nc = double(n) * double(c) * 8.0;
  if (k == Kernel::kStandardMaterialized) return double(n) * double(n) * 8.0 + 2.0 * nc;
  return nc;
}

struct Inputs {
  Tensor q, k, v;
};

inline Inputs random_inputs(std::size_t n, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  const double b = 1.0 / std::sqrt(double(c));
  Inputs in;
  in.q = uniform_tensor({n, c}, b, rng);
  in.k = uniform_tensor({n, c}, b, rng);
  in.v = uniform_tensor({n, c}, b, rng);
  return in;
}

// ---------------------------------------------------------------------------
// Scaling

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::size_t points = 0;
};

/// Least squares line through (log x, log y).
inline LogLogFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DimensionError("log-log fit needs at least two points");
  const std::size_t n = x.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw NumericError("log-log fit needs positive data");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / double(n);
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / double(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0) throw NumericError("log-log fit needs distinct x values");
  LogLogFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy == 0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  f.points = n;
  return f;
}

struct ScalingRow {
  Kernel kernel{};
  std::size_t n = 0, c = 0;
  double t_mean = 0, t_median = 0, t_std = 0;
  std::size_t peak_bytes = 0;
  bool oom = false;
};

struct ScalingOptions {
  std::size_t repeats = 5;
  std::size_t warmups = 2;
  double mem_limit_bytes = 3.0 * 1024 * 1024 * 1024;  // predicted need above this → OOM row
  double min_r2 = 0.98;
  std::size_t max_attempts = 3;  // noisy fits are re-measured up to this many times
  std::uint64_t seed = 1;
};

struct ScalingReport {
  Kernel kernel{};
  std::size_t c = 0;
  std::vector<ScalingRow> rows;
  LogLogFit fit;
  bool noisy = false;
  std::size_t attempts = 0;
};

inline ScalingRow time_kernel(Kernel kernel, std::size_t n, std::size_t c, const ScalingOptions& opt) {
  ScalingRow row;
  row.kernel = kernel;
  row.n = n;
  row.c = c;
  if (predicted_bytes(kernel, n, c) + 3.0 * double(n) * double(c) * 8.0 > opt.mem_limit_bytes) {
    row.oom = true;
    return row;
  }
  try {
    const Inputs in = random_inputs(n, c, opt.seed + n);
    for (std::size_t w = 0; w < opt.warmups; ++w) run_kernel(kernel, in.q, in.k, in.v);
    std::vector<double> t;
    for (std::size_t r = 0; r < opt.repeats; ++r) {
      memory::PeakScope scope;
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor z = run_kernel(kernel, in.q, in.k, in.v);
      t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      row.peak_bytes = std::max(row.peak_bytes, scope.peak_bytes());
    }
    row.t_mean = std::accumulate(t.begin(), t.end(), 0.0) / double(t.size());
    double ss = 0;
    for (double x : t) ss += (x - row.t_mean) * (x - row.t_mean);
    row.t_std = t.size() > 1 ? std::sqrt(ss / double(t.size() - 1)) : 0.0;
    std::sort(t.begin(), t.end());
    const std::size_t h = t.size() / 2;
    row.t_median = t.size() % 2 ? t[h] : 0.5 * (t[h - 1] + t[h]);
  } catch (const std::bad_alloc&) {
    row = ScalingRow{kernel, n, c, 0, 0, 0, 0, true};
  }
  return row;
}

/// Times `kernel` at each N and fits log t_median against log N over the
/// rows that ran. A fit with R² below opt.min_r2 is re-measured; if it stays
/// low the report is flagged noisy.
inline ScalingReport scaling_run(Kernel kernel, const std::vector<std::size_t>& ns, std::size_t c,
                                 const ScalingOptions& opt = {}) {
  if (ns.size() < 4) throw ConfigError("scaling_run needs at least 4 distinct N");
  for (std::size_t i = 1; i < ns.size(); ++i) {
    if (ns[i] <= ns[i - 1]) throw ConfigError("scaling_run N values must be distinct and ascending");
  }
  if (opt.repeats < 5) throw ConfigError("scaling_run needs at least 5 repeats");
  if (opt.max_attempts < 1 || c == 0 || ns.front() == 0) throw ConfigError("scaling_run: bad options");

  ScalingReport rep;
  rep.kernel = kernel;
  rep.c = c;
  for (rep.attempts = 1; rep.attempts <= opt.max_attempts; ++rep.attempts) {
    rep.rows.clear();
    std::vector<double> x, y;
    for (std::size_t n : ns) {
      rep.rows.push_back(time_kernel(kernel, n, c, opt));
      if (!rep.rows.back().oom) {
        x.push_back(double(n));
        y.push_back(rep.rows.back().t_median);
      }
    }
    if (x.size() < 4) throw VerificationError(to_string(kernel) + ": fewer than 4 sizes fit in memory");
    rep.fit = fit_loglog(x, y);
    rep.noisy = rep.fit.r2 < opt.min_r2;
    if (!rep.noisy) break;
  }
  rep.attempts = std::min(rep.attempts, opt.max_attempts);
  return rep;
}

inline void write_csv_header(std::ostream& os) { os << "kernel,N,C,t_mean_s,t_median_s,t_std_s,peak_bytes\n"; }

inline void write_csv_rows(std::ostream& os, const ScalingReport& r) {
  for (const auto& row : r.rows) {
    os << to_string(row.kernel) << ',' << row.n << ',' << row.c << ',';
    if (row.oom) {
      os << "OOM,OOM,OOM,OOM\n";
    } else {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,", row.t_mean, row.t_median, row.t_std);
      os << buf << row.peak_bytes << '\n';
    }
  }
}

inline nlohmann::json to_json(const ScalingReport& r) {
  std::size_t oom = 0;
  for (const auto& row : r.rows) oom += row.oom;
  return {{"kernel", to_string(r.kernel)}, {"C", r.c},          {"slope", r.fit.slope},
          {"intercept", r.fit.intercept},  {"r2", r.fit.r2},    {"fit_points", r.fit.points},
          {"oom_rows", oom},               {"noisy", r.noisy},  {"attempts", r.attempts}};
}

// ---------------------------------------------------------------------------
// Approximation bound

/// N×r matrix with orthonormal columns.
inline Eigen::MatrixXd orthonormal(std::size_t n, std::size_t r, Rng& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(n, r);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ() * Eigen::MatrixXd::Identity(n, r);
}

inline Tensor to_tensor(const Eigen::MatrixXd& m) {
  Buffer b(std::size_t(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) b[std::size_t(i * m.cols() + j)] = m(i, j);
  return Tensor({std::size_t(m.rows()), std::size_t(m.cols())}, std::move(b));
}

/// U·diag(sigma)·Wᵀ with U (N×r) and W (C×r) orthonormal, r = sigma.size().
inline Tensor matrix_with_spectrum(std::size_t n, std::size_t c, const std::vector<double>& sigma, Rng& rng) {
  const std::size_t r = sigma.size();
  if (r == 0 || r > std::min(n, c)) throw DimensionError("spectrum length must lie in [1, min(N, C)]");
  Eigen::VectorXd s(r);
  for (std::size_t i = 0; i < r; ++i) s(Eigen::Index(i)) = sigma[i];
  return to_tensor(orthonormal(n, r, rng) * s.asDiagonal() * orthonormal(c, r, rng).transpose());
}

struct DecayPoint {
  double ratio = 0.0;  // σ_{i+1}/σ_i
  double mean_lhs = 0.0;
};

struct BoundAuditReport {
  std::size_t trials = 0;
  std::size_t violations = 0;
  double worst_ratio = 0.0;  // max lhs/rhs over trials with rhs > 0
  double orthonormal_lhs = 0.0, orthonormal_rhs = 0.0;
  std::size_t probe_pairs = 0, probe_wins = 0;  // rank-1 lhs ≤ full-rank lhs
  std::vector<DecayPoint> decay;
  bool passed = false;
};

struct BoundAuditOptions {
  std::size_t max_n = 256;
  std::size_t max_c = 32;
  double rel_slack = 1e-9;
  std::size_t probe_pairs = 200;
  // At unit Frobenius norm each mode contributes σ²(1 − σ²), which peaks at
  // σ² = 1/2, so only spectra at least this steep are ordered by decay rate.
  std::vector<double> decay_ratios{0.5, 0.3, 0.1, 0.03, 0.01};
  std::size_t decay_trials = 20;
  std::uint64_t seed = 2024;
};

/// Randomized audit of ‖Z − Z_std‖ ≤ ‖Q‖‖K‖‖K − KKᵀK‖ (V = K). Trial t uses
/// rank 1 + t mod C with singular values drawn from [0.05, 2]. The probe and
/// decay sweep use keys scaled to ‖K‖_F = 1.
inline BoundAuditReport bound_audit(std::size_t num_trials, const BoundAuditOptions& opt = {}) {
  if (num_trials < 1) throw ConfigError("bound_audit needs at least one trial");
  if (opt.max_c < 2 || opt.max_n < opt.max_c) throw ConfigError("bound_audit needs 2 <= C <= N");
  Rng rng(opt.seed);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  std::uniform_real_distribution<double> sv(0.05, 2.0);
  const double qb = 1.0;

  BoundAuditReport rep;
  rep.trials = num_trials;
  for (std::size_t t = 0; t < num_trials; ++t) {
    const std::size_t c = pick(2, opt.max_c);
    const std::size_t n = pick(c, opt.max_n);
    const std::size_t r = 1 + t % c;
    std::vector<double> s(r);
    for (auto& x : s) x = sv(rng);
    const Tensor k = matrix_with_spectrum(n, c, s, rng);
    const Tensor q = uniform_tensor({n, c}, qb, rng);
    const BoundCheck b = verify_lowrank_bound(k, q);
    if (b.lhs > b.rhs * (1.0 + opt.rel_slack)) ++rep.violations;
    if (b.rhs > 0) rep.worst_ratio = std::max(rep.worst_ratio, b.lhs / b.rhs);
  }

  {
    const std::size_t c = opt.max_c, n = opt.max_n;
    const Tensor k = to_tensor(orthonormal(n, c, rng));
    const Tensor q = uniform_tensor({n, c}, qb, rng);
    const BoundCheck b = verify_lowrank_bound(k, q);
    rep.orthonormal_lhs = b.lhs;
    rep.orthonormal_rhs = b.rhs;
  }

  auto unit_spectrum = [](std::vector<double> s) {
    double ss = 0;
    for (double x : s) ss += x * x;
    for (double& x : s) x /= std::sqrt(ss);
    return s;
  };
  rep.probe_pairs = opt.probe_pairs;
  for (std::size_t i = 0; i < opt.probe_pairs; ++i) {
    const std::size_t c = pick(2, opt.max_c);
    const std::size_t n = pick(c, opt.max_n);
    std::vector<double> full(c);
    for (auto& x : full) x = sv(rng);
    const Tensor q = uniform_tensor({n, c}, qb, rng);
    const double lhs1 = verify_lowrank_bound(matrix_with_spectrum(n, c, {1.0}, rng), q).lhs;
    const double lhsf = verify_lowrank_bound(matrix_with_spectrum(n, c, unit_spectrum(full), rng), q).lhs;
    if (lhs1 <= lhsf) ++rep.probe_wins;
  }

  for (double ratio : opt.decay_ratios) {
    DecayPoint d{ratio, 0.0};
    const std::size_t c = opt.max_c, n = opt.max_n;
    std::vector<double> s(c);
    for (std::size_t i = 0; i < c; ++i) s[i] = std::pow(ratio, double(i));
    s = unit_spectrum(s);
    for (std::size_t t = 0; t < opt.decay_trials; ++t) {
      const Tensor q = uniform_tensor({n, c}, qb, rng);
      d.mean_lhs += verify_lowrank_bound(matrix_with_spectrum(n, c, s, rng), q).lhs;
    }
    d.mean_lhs /= double(std::max<std::size_t>(1, opt.decay_trials));
    rep.decay.push_back(d);
  }

  rep.passed = rep.violations == 0 && rep.orthonormal_lhs <= 1e-12 && rep.orthonormal_rhs <= 1e-12 &&
               rep.probe_wins * 10 >= rep.probe_pairs * 9;
  return rep;
}

inline nlohmann::json to_json(const BoundAuditReport& r) {
  nlohmann::json decay = nlohmann::json::array();
  for (const auto& d : r.decay) decay.push_back({{"ratio", d.ratio}, {"mean_lhs", d.mean_lhs}});
  return {{"trials", r.trials},
          {"violations", r.violations},
          {"worst_ratio", r.worst_ratio},
          {"orthonormal_lhs", r.orthonormal_lhs},
          {"orthonormal_rhs", r.orthonormal_rhs},
          {"probe_pairs", r.probe_pairs},
          {"probe_wins", r.probe_wins},
          {"decay", decay},
          {"passed", r.passed}};
}

// ---------------------------------------------------------------------------
// Memory

/// Peak tensor bytes allocated inside one kernel call; inputs are excluded.
inline std::size_t memory_audit(Kernel kernel, std::size_t n, std::size_t c, std::uint64_t seed = 3) {
  const Inputs in = random_inputs(n, c, seed);
  memory::PeakScope scope;
  { const Tensor z = run_kernel(kernel, in.q, in.k, in.v); }
  return scope.peak_bytes();
}

struct AffineMemoryFit {
  double a = 0.0;  // coefficient of N·C·8
  double b = 0.0;  // coefficient of C²·8
  double max_rel_residual = 0.0;
};

/// Least squares fit of peak = a·N·C·8 + b·C²·8 over the given (N, C) grid.
inline AffineMemoryFit fit_memory_model(Kernel kernel, const std::vector<std::pair<std::size_t, std::size_t>>& grid) {
  if (grid.size() < 2) throw ConfigError("memory fit needs at least two (N, C) points");
  std::vector<double> u, w, y;
  for (auto [n, c] : grid) {
    u.push_back(double(n) * double(c) * 8.0);
    w.push_back(double(c) * double(c) * 8.0);
    y.push_back(double(memory_audit(kernel, n, c)));
  }
  double suu = 0, suw = 0, sww = 0, suy = 0, swy = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    suu += u[i] * u[i];
    suw += u[i] * w[i];
    sww += w[i] * w[i];
    suy += u[i] * y[i];
    swy += w[i] * y[i];
  }
  const double det = suu * sww - suw * suw;
  if (det == 0) throw NumericError("memory fit grid is degenerate");
  AffineMemoryFit f;
  f.a = (suy * sww - swy * suw) / det;
  f.b = (swy * suu - suy * suw) / det;
  for (std::size_t i = 0; i < y.size(); ++i) {
    f.max_rel_residual = std::max(f.max_rel_residual, std::abs(f.a * u[i] + f.b * w[i] - y[i]) / y[i]);
  }
  return f;
}

/// Resident-set high-water mark of this process in bytes (0 if unavailable).
inline std::size_t process_peak_rss() {
  std::ifstream f("/proc/self/status");
  std::string line;
  while (std::getline(f, line)) {
    if (line.rfind("VmHWM:", 0) == 0) return std::stoull(line.substr(6)) * 1024;
  }
  return 0;
}

struct LargeRun {
  std::size_t n = 0, c = 0;
  double seconds = 0.0;       // the layer forward only
  std::size_t tensor_peak = 0;  // tracked tensor bytes, inputs included
  std::size_t rss_peak = 0;
  double checksum = 0.0;
};

/// One streaming LR-QA layer forward on a random cloud of n points.
inline LargeRun large_forward(std::size_t n, std::size_t c, std::uint64_t seed = 5) {
  LargeRun r;
  r.n = n;
  r.c = c;
  memory::PeakScope scope;
  LrqaConfig cfg;
  cfg.feature_dim = c;
  Rng rng(seed);
  const Tensor coords = uniform_tensor({n, 3}, 1.0, rng);
  const Tensor x = uniform_tensor({n, c}, 1.0, rng);
  LrqaLayerParams p = LrqaLayerParams::init(c, rng);
  p.wout = uniform_tensor({c, c}, 1.0 / std::sqrt(double(c)), rng);
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor y = lrqa_layer_forward_streaming(x, coords, p, cfg);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (double v : y.values()) r.checksum += v;
  r.tensor_peak = scope.peak_bytes();
  r.rss_peak = process_peak_rss();
  return r;
}

// ---------------------------------------------------------------------------
// Cross-kernel agreement

struct Agreement {
  double materialized_vs_associative = 0.0;  // random inputs
  double covariance_vs_standard = 0.0;       // orthonormal K, V = K
  double covariance_gap = 0.0;               // random K, V = K: ‖Z − Z_std‖
  double covariance_bound = 0.0;             // its upper bound
};

inline double rel_frobenius(const Tensor& a, const Tensor& b) {
  return frobenius_norm(sub(a, b)).item() / std::max(frobenius_norm(b).item(), 1e-300);
}

inline Agreement kernel_agreement(std::size_t n, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Agreement a;
  const Inputs in = random_inputs(n, c, seed);
  a.materialized_vs_associative = rel_frobenius(standard_attention_materialized(in.q, in.k, in.v),
                                                standard_attention_associative(in.q, in.k, in.v));
  const Tensor k = to_tensor(orthonormal(n, c, rng));
  a.covariance_vs_standard = rel_frobenius(covariance_attention(in.q, k, k), standard_attention_materialized(in.q, k, k));
  const BoundCheck b = verify_lowrank_bound(in.k, in.q);
  a.covariance_gap = b.lhs;
  a.covariance_bound = b.rhs;
  return a;
}

}  // namespace lrq::bench
