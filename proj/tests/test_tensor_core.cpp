#include <gtest/gtest.h>

#include <sstream>

#include "lrq/gradcheck.hpp"
#include "lrq/tensor_io.hpp"
#include "test_util.hpp"

using namespace lrq;
using lrq::testing::probe;
using lrq::testing::random_tensor;
using lrq::testing::rel_frob;

namespace {

void expect_values(const Tensor& t, std::initializer_list<double> want, double tol = 0.0) {
  ASSERT_EQ(t.numel(), want.size());
  std::size_t i = 0;
  for (double w : want) EXPECT_NEAR(t[i++], w, tol) << "at " << i - 1;
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, Buffer(5)), DimensionError);
  Tensor t({2, 3}, Buffer(6, 1.0));
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(shape_str(t.shape()), "[2x3]");
}

TEST(Tensor, CopyOnWriteDoesNotAliasCopies) {
  Tensor a = Tensor::ones({3});
  Tensor b = a;
  b.mutable_values()[0] = 7.0;
  EXPECT_EQ(a[0], 1.0);
  EXPECT_EQ(b[0], 7.0);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  std::mt19937_64 rng(1);
  Tensor a = random_tensor({3, 4}, rng);
  EXPECT_TRUE(matmul(Tensor::identity(3), a).bitwise_equal(a));
}

TEST(Matmul, SmallHandExpansion) {
  Tensor c = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5}, {6}}));
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  expect_values(c, {17, 39});
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] x [2x3]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, MatchesNaiveTripleLoopOnOddSizes) {
  std::mt19937_64 rng(2);
  for (auto [m, k, n] : {std::tuple{7, 5, 3}, {13, 17, 33}, {1, 40, 19}, {25, 3, 48}}) {
    Tensor a = random_tensor({std::size_t(m), std::size_t(k)}, rng);
    Tensor b = random_tensor({std::size_t(k), std::size_t(n)}, rng);
    Buffer ref(m * n, 0.0);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        for (int p = 0; p < k; ++p) ref[i * n + j] += a.at(i, p) * b.at(p, j);
    EXPECT_LT(rel_frob(matmul(a, b), Tensor({std::size_t(m), std::size_t(n)}, ref)), 1e-14);
    EXPECT_LT(rel_frob(matmul_tn(transpose(a), b),
                       matmul(a, b)),
              1e-14);
  }
}

TEST(Matmul, AssociativeWithinTolerance) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    Tensor a = random_tensor({8, 8}, rng), b = random_tensor({8, 8}, rng), c = random_tensor({8, 8}, rng);
    EXPECT_LT(rel_frob(matmul(matmul(a, b), c), matmul(a, matmul(b, c))), 1e-12);
  }
}

TEST(Elementwise, Examples) {
  std::mt19937_64 rng(4);
  Tensor a = random_tensor({2, 3}, rng);
  EXPECT_TRUE(add(a, Tensor::zeros({2, 3})).bitwise_equal(a));
  expect_values(elementwise(Tensor::vector({1, 2, 3}), 2.0, Elementwise::kMul), {2, 4, 6});
  expect_values(mul(Tensor::vector({1, 2, 3}), Tensor::scalar(2.0)), {2, 4, 6});
  EXPECT_THROW(div(a, Tensor::zeros({2, 3})), NumericError);
  EXPECT_THROW(elementwise(a, 0.0, Elementwise::kDiv), NumericError);
  EXPECT_THROW(add(a, Tensor::zeros({3, 2})), DimensionError);
}

TEST(Activation, Examples) {
  expect_values(relu(Tensor::vector({-1, 0, 2})), {0, 0, 2});
  EXPECT_EQ(activation(Tensor::scalar(0.0), Activation::kTanh).item(), 0.0);
  EXPECT_EQ(gelu(Tensor::scalar(0.0)).item(), 0.0);
  // tanh-approximate GELU at 1: 0.5·(1 + tanh(√(2/π)·1.044715))
  EXPECT_NEAR(gelu(Tensor::scalar(1.0)).item(), 0.5 * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * 1.044715)), 1e-15);
}

TEST(LayerNorm, Examples) {
  Tensor g3 = Tensor::ones({3}), b3 = Tensor::zeros({3});
  expect_values(layer_norm(Tensor::matrix({{5, 5, 5}}), g3, b3, 1e-5), {0, 0, 0});
  expect_values(layer_norm(Tensor::matrix({{1, -1}}), Tensor::ones({2}), Tensor::zeros({2}), 1e-14), {1, -1}, 1e-12);
  Tensor bias = Tensor::vector({0.5, -2, 3});
  expect_values(layer_norm(Tensor::matrix({{1, 7, -3}}), Tensor::zeros({3}), bias, 1e-5), {0.5, -2, 3});
  EXPECT_THROW(layer_norm(Tensor::matrix({{1, 2}}), Tensor::ones({2}), Tensor::zeros({2}), 0.0), NumericError);
}

TEST(Reduce, Examples) {
  expect_values(reduce(Tensor::matrix({{1, 3}, {5, 7}}), 0, Reduction::kMean), {3, 5});
  expect_values(reduce(Tensor::matrix({{1, 3}, {5, 7}}), 1, Reduction::kSum), {4, 12});
  EXPECT_EQ(frobenius_norm(Tensor::matrix({{3, 4}})).item(), 5.0);
  EXPECT_EQ(reduce(Tensor::vector({2, -9, 7}), std::nullopt, Reduction::kMax).item(), 7.0);
  EXPECT_THROW(reduce(Tensor::zeros({2, 2}), 2, Reduction::kSum), DimensionError);
  EXPECT_THROW(reduce(Tensor::zeros({0, 2}), 0, Reduction::kSum), DimensionError);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Tensor x = tape.leaf(Tensor::vector({1, 2, 3, 4}));
  tape.backward(sum(x));
  EXPECT_TRUE(tape.grad(x).bitwise_equal(Tensor::ones({4})));
}

TEST(Backward, SquaredNormGivesTwoX) {
  Tape tape;
  Tensor x = tape.leaf(Tensor::vector({3, 4}));
  tape.backward(square(frobenius_norm(x)));
  expect_values(tape.grad(x), {6, 8}, 1e-14);
  auto r = finite_diff_check([](const std::vector<Tensor>& p) { return square(frobenius_norm(p[0])); },
                             {Tensor::vector({3, 4})}, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(Backward, RootMustBeScalarAndOnTape) {
  Tape tape, other;
  Tensor x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(scale(x, 2.0)), DimensionError);
  EXPECT_THROW(other.backward(sum(x)), Error);
  EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), Error);
}

TEST(Backward, FanOutSumsBranchesExactly) {
  std::mt19937_64 rng(5);
  Tensor x0 = random_tensor({4, 3}, rng);
  auto g = [](const Tensor& x) { return sum(gelu(x)); };
  auto h = [](const Tensor& x) { return frobenius_norm(x); };
  Tape t1, t2, t3;
  Tensor a = t1.leaf(x0), b = t2.leaf(x0), c = t3.leaf(x0);
  t1.backward(g(a));
  t2.backward(h(b));
  t3.backward(add(g(c), h(c)));
  Tensor expected = add(t1.grad(a), t2.grad(b));
  EXPECT_TRUE(t3.grad(c).bitwise_equal(expected));
}

TEST(Backward, UnreachedLeafGetsZeros) {
  Tape tape;
  Tensor x = tape.leaf(Tensor::vector({1, 2}));
  Tensor y = tape.leaf(Tensor::vector({3, 4, 5}));
  tape.backward(sum(x));
  EXPECT_TRUE(tape.grad(y).bitwise_equal(Tensor::zeros({3})));
}

TEST(Backward, MixedTapesRejected) {
  Tape t1, t2;
  Tensor a = t1.leaf(Tensor::vector({1})), b = t2.leaf(Tensor::vector({1}));
  EXPECT_THROW(add(a, b), Error);
}

TEST(FiniteDiff, QuadraticAndLinear) {
  auto sq = finite_diff_check([](const std::vector<Tensor>& p) { return mul(p[0], p[0]); },
                              {Tensor::scalar(3.0)}, 1e-5);
  EXPECT_LT(sq.max_rel_error, 1e-8);
  EXPECT_NEAR(sq.analytic, 6.0, 1e-15);
  auto lin = finite_diff_check(
      [](const std::vector<Tensor>& p) { return sum(scale(p[0], 0.5)); }, {Tensor::vector({1, -2, 0.25})}, 1e-3);
  EXPECT_LT(lin.max_rel_error, 1e-10);
}

TEST(FiniteDiff, RejectsNondeterministicAndNonFinite) {
  int calls = 0;
  auto noisy = [&](const std::vector<Tensor>& p) { return add_scalar(sum(p[0]), 1e-3 * (++calls)); };
  EXPECT_THROW(finite_diff_check(noisy, {Tensor::vector({1, 2})}, 1e-6), NumericError);
  auto inf = [](const std::vector<Tensor>& p) { return add_scalar(sum(p[0]), INFINITY); };
  EXPECT_THROW(finite_diff_check(inf, {Tensor::vector({1})}, 1e-6), NumericError);
  EXPECT_THROW(finite_diff_check(inf, {Tensor::vector({1})}, 0.0), ConfigError);
}

// Every differentiable op on random small inputs.
class OpGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{6};
  void check(const ScalarFn& f, std::vector<Tensor> params) {
    auto r = finite_diff_check(f, params, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-5) << "param " << r.worst_param << " index " << r.worst_index << " analytic "
                                     << r.analytic << " numeric " << r.numeric;
  }
};

TEST_F(OpGradients, Matmul) {
  check([](auto& p) { return probe(matmul(p[0], p[1])); }, {random_tensor({5, 7}, rng), random_tensor({7, 3}, rng)});
  check([](auto& p) { return probe(matmul_tn(p[0], p[1])); },
        {random_tensor({6, 4}, rng), random_tensor({6, 5}, rng)});
  check([](auto& p) { return probe(transpose(p[0])); }, {random_tensor({3, 8}, rng)});
}

TEST_F(OpGradients, Affine) {
  check([](auto& p) { return probe(affine(p[0], p[1], p[2])); },
        {random_tensor({4, 6}, rng), random_tensor({6, 5}, rng), random_tensor({5}, rng)});
}

TEST_F(OpGradients, Elementwise) {
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng, 0.5, 2.0);
  for (auto kind : {Elementwise::kAdd, Elementwise::kSub, Elementwise::kMul, Elementwise::kDiv}) {
    check([kind](auto& p) { return probe(elementwise(p[0], p[1], kind)); }, {a, b});
    check([kind](auto& p) { return probe(elementwise(p[0], p[1], kind)); }, {a, Tensor::scalar(1.7)});
    check([kind](auto& p) { return probe(elementwise(p[0], 1.3, kind)); }, {a});
  }
  check([](auto& p) { return probe(elementwise(p[0], p[1], Elementwise::kDiv)); }, {Tensor::scalar(0.8), b});
}

TEST_F(OpGradients, Activations) {
  Tensor x = random_tensor({4, 5}, rng, -2.0, 2.0);
  auto m = x.mutable_values();
  for (auto& v : m) v += (v >= 0 ? 0.05 : -0.05);  // keep ReLU inputs off the kink
  check([](auto& p) { return probe(relu(p[0])); }, {x});
  check([](auto& p) { return probe(gelu(p[0])); }, {x});
  check([](auto& p) { return probe(activation(p[0], Activation::kTanh)); }, {x});
  check([](auto& p) { return probe(lrq::sqrt(p[0])); }, {random_tensor({3, 3}, rng, 0.2, 3.0)});
}

TEST_F(OpGradients, LayerNorm) {
  check([](auto& p) { return probe(layer_norm(p[0], p[1], p[2], 1e-5)); },
        {random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)});
}

TEST_F(OpGradients, Reductions) {
  Tensor x = random_tensor({3, 4, 2}, rng);
  for (auto kind : {Reduction::kMean, Reduction::kSum, Reduction::kMax, Reduction::kFrobeniusNorm}) {
    for (std::optional<std::size_t> axis : {std::optional<std::size_t>{}, std::optional<std::size_t>{0},
                                            std::optional<std::size_t>{1}, std::optional<std::size_t>{2}}) {
      check([kind, axis](auto& p) { return probe(reduce(p[0], axis, kind)); }, {x});
    }
  }
}

TEST_F(OpGradients, SoftmaxAndStructural) {
  check([](auto& p) { return probe(softmax_rows(p[0])); }, {random_tensor({3, 5}, rng, -3, 3)});
  check([](auto& p) { return probe(slice_cols(p[0], 1, 4)); }, {random_tensor({3, 5}, rng)});
  check([](auto& p) { return probe(concat_cols({p[0], p[1], p[0]})); },
        {random_tensor({4, 2}, rng), random_tensor({4, 3}, rng)});
  std::vector<std::size_t> idx{2, 0, 2, 1};
  check([idx](auto& p) { return probe(gather_rows(p[0], idx)); }, {random_tensor({3, 4}, rng)});
  check([](auto& p) { return probe(broadcast_rows(p[0], 5)); }, {random_tensor({3}, rng)});
  check([](auto& p) { return probe(scale_rows(p[0], p[1])); }, {random_tensor({4, 3}, rng), random_tensor({4}, rng)});
  Tensor ang = random_tensor({3, 2}, rng, -3, 3);
  Buffer c(6), s(6);
  for (std::size_t i = 0; i < 6; ++i) {
    c[i] = std::cos(ang[i]);
    s[i] = std::sin(ang[i]);
  }
  Tensor ct({3, 2}, c), st({3, 2}, s);
  check([ct, st](auto& p) { return probe(rotate_pairs(p[0], ct, st)); }, {random_tensor({3, 4}, rng)});
}

TEST(Determinism, RepeatedForwardIsBitwiseEqual) {
  std::mt19937_64 rng(7);
  Tensor a = random_tensor({37, 29}, rng), b = random_tensor({29, 41}, rng);
  Tensor g = Tensor::ones({41}), z = Tensor::zeros({41});
  auto run = [&] { return reduce(layer_norm(gelu(matmul(a, b)), g, z, 1e-5), 0, Reduction::kMean); };
  EXPECT_TRUE(run().bitwise_equal(run()));
}

TEST(TensorIo, RoundTripIsBitExact) {
  std::mt19937_64 rng(8);
  Tensor t = random_tensor({3, 1, 4}, rng);
  std::stringstream ss;
  io::write_tensor(ss, t);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "LRQT");
  EXPECT_EQ(bytes.size(), 4 + 4 + 3 * 8 + 12 * 8u);
  EXPECT_TRUE(io::read_tensor(ss).bitwise_equal(t));
}

TEST(TensorIo, TruncationAndBadMagicAreDataErrors) {
  std::stringstream ss;
  io::write_tensor(ss, Tensor::ones({5}));
  std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(io::read_tensor(cut), DataError);
  bytes[0] = 'X';
  std::stringstream bad(bytes);
  EXPECT_THROW(io::read_tensor(bad), DataError);
}

TEST(Memory, PeakScopeSeesTransientAllocation) {
  memory::PeakScope scope;
  { Buffer b(1000); }
  EXPECT_GE(scope.peak_bytes(), 8000u);
}
