#include <gtest/gtest.h>

#include <sstream>

#include "lrq/bench.hpp"
#include "test_util.hpp"

using namespace lrq;
using namespace lrq::bench;

namespace {

ScalingOptions quick_options() {
  ScalingOptions o;
  o.repeats = 5;
  o.warmups = 1;
  o.max_attempts = 1;
  return o;
}

std::size_t count_lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

}  // namespace

TEST(LogLogFit, RecoversExactPowerLaw) {
  std::vector<double> x{1e3, 2e3, 4e3, 8e3, 16e3}, y;
  for (double v : x) y.push_back(3e-9 * std::pow(v, 1.5));
  const auto f = fit_loglog(x, y);
  EXPECT_NEAR(f.slope, 1.5, 1e-12);
  EXPECT_NEAR(f.intercept, std::log(3e-9), 1e-9);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
  EXPECT_EQ(f.points, 5u);
}

TEST(LogLogFit, ScatterLowersR2) {
  const auto f = fit_loglog({1, 2, 4, 8, 16}, {1, 8, 2, 16, 4});
  EXPECT_LT(f.r2, 0.98);
  EXPECT_GT(f.r2, 0.0);
  EXPECT_THROW(fit_loglog({1, 2}, {1, 0}), NumericError);
  EXPECT_THROW(fit_loglog({2, 2}, {1, 3}), NumericError);
}

TEST(Kernel, NamesRoundTrip) {
  for (Kernel k : {Kernel::kCovariance, Kernel::kStandardMaterialized, Kernel::kStandardAssociative}) {
    EXPECT_EQ(parse_kernel(to_string(k)), k);
  }
  EXPECT_THROW(parse_kernel("softmax"), ConfigError);
}

TEST(ScalingRun, RejectsBadSchedules) {
  EXPECT_THROW(scaling_run(Kernel::kCovariance, {64, 128, 256}, 8), ConfigError);
  EXPECT_THROW(scaling_run(Kernel::kCovariance, {64, 128, 128, 256}, 8), ConfigError);
  EXPECT_THROW(scaling_run(Kernel::kCovariance, {256, 128, 512, 1024}, 8), ConfigError);
  auto o = quick_options();
  o.repeats = 4;
  EXPECT_THROW(scaling_run(Kernel::kCovariance, {64, 128, 256, 512}, 8, o), ConfigError);
}

TEST(ScalingRun, OneCsvRowPerSizeAndOomRowsExcluded) {
  auto o = quick_options();
  o.mem_limit_bytes = 1.2e6;  // 256² doubles fit, 512² do not
  const std::vector<std::size_t> ns{32, 64, 128, 256, 512};
  const auto r = scaling_run(Kernel::kStandardMaterialized, ns, 8, o);
  ASSERT_EQ(r.rows.size(), ns.size());
  EXPECT_FALSE(r.rows[3].oom);
  EXPECT_TRUE(r.rows[4].oom);
  EXPECT_EQ(r.fit.points, 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_GT(r.rows[i].t_median, 0.0);
    EXPECT_GE(r.rows[i].t_std, 0.0);
    EXPECT_GE(r.rows[i].peak_bytes, ns[i] * ns[i] * 8);
  }

  std::ostringstream csv;
  write_csv_header(csv);
  write_csv_rows(csv, r);
  EXPECT_EQ(count_lines(csv.str()), ns.size() + 1);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "kernel,N,C,t_mean_s,t_median_s,t_std_s,peak_bytes");
  EXPECT_NE(csv.str().find("standard_materialized,512,8,OOM"), std::string::npos);

  const auto js = to_json(r);
  EXPECT_EQ(js.at("oom_rows"), 1);
  EXPECT_EQ(js.at("kernel"), "standard_materialized");
}

TEST(ScalingRun, TooFewSizesInMemoryIsAnError) {
  auto o = quick_options();
  o.mem_limit_bytes = 1e3;
  EXPECT_THROW(scaling_run(Kernel::kStandardMaterialized, {64, 128, 256, 512}, 8, o), VerificationError);
}

TEST(ScalingRun, CovarianceGrowsRoughlyLinearlyAtModerateSizes) {
  auto o = quick_options();
  o.max_attempts = 3;
  const auto r = scaling_run(Kernel::kCovariance, {8192, 16384, 32768, 65536}, 32, o);
  EXPECT_GT(r.fit.slope, 0.7);
  EXPECT_LT(r.fit.slope, 1.3);
}

TEST(Kernels, SameSeedSameOutputs) {
  const Inputs a = random_inputs(128, 16, 9), b = random_inputs(128, 16, 9);
  for (Kernel k : {Kernel::kCovariance, Kernel::kStandardMaterialized, Kernel::kStandardAssociative}) {
    const Tensor za = run_kernel(k, a.q, a.k, a.v), zb = run_kernel(k, b.q, b.k, b.v);
    EXPECT_TRUE(std::equal(za.values().begin(), za.values().end(), zb.values().begin())) << to_string(k);
  }
}

TEST(Kernels, PairwiseAgreement) {
  for (std::size_t n : {64, 512, 2048}) {
    const auto a = kernel_agreement(n, 16, n);
    EXPECT_LT(a.materialized_vs_associative, 1e-10) << n;
    EXPECT_LT(a.covariance_vs_standard, 1e-10) << n;
    EXPECT_LE(a.covariance_gap, a.covariance_bound * (1 + 1e-9)) << n;
  }
}

TEST(BoundAudit, RandomAuditHasNoViolations) {
  BoundAuditOptions o;
  o.max_n = 96;
  o.max_c = 12;
  o.probe_pairs = 40;
  o.decay_trials = 4;
  const auto r = bound_audit(150, o);
  EXPECT_EQ(r.violations, 0u);
  EXPECT_LE(r.worst_ratio, 1.0 + 1e-9);
  EXPECT_GT(r.worst_ratio, 0.0);
  EXPECT_LE(r.orthonormal_lhs, 1e-12);
  EXPECT_LE(r.orthonormal_rhs, 1e-12);
  EXPECT_GE(r.probe_wins * 10, r.probe_pairs * 9);
  EXPECT_TRUE(r.passed);
  EXPECT_THROW(bound_audit(0, o), ConfigError);
}

TEST(BoundAudit, ResidualShrinksAsSpectrumDecays) {
  BoundAuditOptions o;
  o.max_n = 64;
  o.max_c = 8;
  o.probe_pairs = 1;
  o.decay_trials = 6;
  const auto r = bound_audit(1, o);
  ASSERT_EQ(r.decay.size(), o.decay_ratios.size());
  for (std::size_t i = 1; i < r.decay.size(); ++i) EXPECT_LT(r.decay[i].mean_lhs, r.decay[i - 1].mean_lhs) << i;
}

TEST(BoundAudit, SpectrumIsReproduced) {
  Rng rng(4);
  const Tensor k = matrix_with_spectrum(20, 6, {3.0, 2.0, 0.5}, rng);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(lrq::testing::to_eigen(k));
  const auto s = svd.singularValues();
  EXPECT_NEAR(s(0), 3.0, 1e-12);
  EXPECT_NEAR(s(1), 2.0, 1e-12);
  EXPECT_NEAR(s(2), 0.5, 1e-12);
  EXPECT_NEAR(s(3), 0.0, 1e-12);
}

TEST(MemoryAudit, CovarianceIsLinearInN) {
  const double f = double(memory_audit(Kernel::kCovariance, 8192, 32)) /
                   double(memory_audit(Kernel::kCovariance, 4096, 32));
  EXPECT_GE(f, 1.8);
  EXPECT_LE(f, 2.2);
}

TEST(MemoryAudit, MaterializedIsQuadraticInN) {
  const double f = double(memory_audit(Kernel::kStandardMaterialized, 2048, 32)) /
                   double(memory_audit(Kernel::kStandardMaterialized, 1024, 32));
  EXPECT_GE(f, 3.5);
  EXPECT_LE(f, 4.5);
}

TEST(MemoryAudit, CovarianceFitsAffineModel) {
  const auto f = fit_memory_model(Kernel::kCovariance, {{1024, 16}, {2048, 16}, {1024, 32}, {4096, 32}, {2048, 64},
                                                        {512, 128}});
  EXPECT_LE(f.a, 8.0);
  EXPECT_LE(f.b, 16.0);
  EXPECT_GT(f.a, 0.5);
  EXPECT_LT(f.max_rel_residual, 0.05);
}

TEST(LargeForward, TensorMemoryStaysLinear) {
  const auto r = large_forward(100000, 16);
  // coords, input and output, plus chunk scratch
  const double io = 100000.0 * (3 + 16 + 16) * 8;
  EXPECT_GE(double(r.tensor_peak), io);
  EXPECT_LE(double(r.tensor_peak), 1.25 * io);
  EXPECT_TRUE(std::isfinite(r.checksum));
  EXPECT_EQ(large_forward(100000, 16).checksum, r.checksum);
}
