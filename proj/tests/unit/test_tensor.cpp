#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "nfnoise/error.hpp"
#include "nfnoise/ops.hpp"

using namespace nfnoise;

TEST(Elementwise, ExpOfZerosIsOnes) {
  auto y = exp(Tensor::zeros({3}));
  for (real v : y.values()) EXPECT_FLOAT_EQ(v, 1.0f);
}

TEST(Elementwise, PowGammaValue) {
  auto y = pow(Tensor::full({1}, 0.5f), 2.2f);
  EXPECT_NEAR(y.item(), 0.21764, 1e-5);
}

TEST(Elementwise, MulGradientIsOtherOperand) {
  Tensor a({1}, {2.0f});
  Tensor b({1}, {3.0f});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  sum(a * b).backward();
  EXPECT_FLOAT_EQ(a.grad()[0], 3.0f);
  EXPECT_FLOAT_EQ(b.grad()[0], 2.0f);
}

TEST(Elementwise, DispatchCoversEveryOp) {
  Tensor a({2}, {0.5f, 2.0f});
  Tensor b({2}, {2.0f, 0.5f});
  EXPECT_FLOAT_EQ(elementwise(ElementwiseOp::add, a, b).values()[0], 2.5f);
  EXPECT_FLOAT_EQ(elementwise(ElementwiseOp::sub, a, b).values()[0], -1.5f);
  EXPECT_FLOAT_EQ(elementwise(ElementwiseOp::mul, a, b).values()[1], 1.0f);
  EXPECT_FLOAT_EQ(elementwise(ElementwiseOp::div, a, b).values()[1], 4.0f);
  EXPECT_FLOAT_EQ(elementwise(ElementwiseOp::pow, a, b).values()[0], 0.25f);
  EXPECT_FLOAT_EQ(elementwise(ElementwiseOp::log, b).values()[0], std::log(2.0f));
  EXPECT_FLOAT_EQ(elementwise(ElementwiseOp::tanh, a).values()[0], std::tanh(0.5f));
  EXPECT_FLOAT_EQ(elementwise(ElementwiseOp::relu, neg(a)).values()[0], 0.0f);
  EXPECT_FLOAT_EQ(elementwise(ElementwiseOp::negate, a).values()[1], -2.0f);
  EXPECT_FLOAT_EQ(elementwise(ElementwiseOp::exp, a).values()[0], std::exp(0.5f));
  EXPECT_THROW(elementwise(ElementwiseOp::add, a), ShapeError);
}

TEST(Elementwise, DomainErrors) {
  EXPECT_THROW(log(Tensor({2}, {1.0f, 0.0f})), DomainError);
  EXPECT_THROW(log(Tensor({1}, {-1.0f})), DomainError);
  EXPECT_THROW(div(Tensor::ones({2}), Tensor::zeros({2})), DomainError);
  EXPECT_THROW(pow(Tensor::full({1}, -1.0f), 0.5f), DomainError);
  EXPECT_THROW(exp(Tensor::full({1}, 1000.0f)), NumericError);
}

TEST(Broadcast, ShapesAndValues) {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row({3}, {10, 20, 30});
  Tensor col({2, 1}, {100, 200});
  auto y = a + row;
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
  EXPECT_FLOAT_EQ(y.at({1, 2}), 36.0f);
  auto z = a + col;
  EXPECT_FLOAT_EQ(z.at({1, 0}), 204.0f);
  auto outer = col * Tensor({1, 3}, {1, 2, 3});
  EXPECT_EQ(outer.shape(), (Shape{2, 3}));
  EXPECT_FLOAT_EQ(outer.at({1, 2}), 600.0f);
  EXPECT_THROW(a + Tensor::ones({2}), ShapeError);
}

TEST(Broadcast, OperandValuesUnchanged) {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row({3}, {10, 20, 30});
  const std::vector<real> a0(a.values().begin(), a.values().end());
  const std::vector<real> r0(row.values().begin(), row.values().end());
  (void)(a * row);
  EXPECT_TRUE(std::equal(a0.begin(), a0.end(), a.values().begin()));
  EXPECT_TRUE(std::equal(r0.begin(), r0.end(), row.values().begin()));
}

TEST(Broadcast, GradientReducesOverStretchedAxes) {
  Tensor a({2, 3}, 1.0f);
  Tensor row({3}, {1, 2, 3});
  row.set_requires_grad(true);
  sum(a * row).backward();
  for (real g : row.grad()) EXPECT_FLOAT_EQ(g, 2.0f);
}

TEST(Conv2d, OneByOneIdentityKernel) {
  Rng rng(3);
  auto x = Tensor::randn({3, 4, 5}, rng);
  Tensor w({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) w.mutable_values()[c * 3 + c] = 1.0f;
  auto y = conv2d(x, w, Tensor::zeros({3}));
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST(Conv2d, AllOnesKernelCountsNeighbours) {
  auto y = conv2d(Tensor::ones({1, 3, 3}), Tensor::ones({1, 1, 3, 3}), Tensor::zeros({1}));
  EXPECT_FLOAT_EQ(y.at({0, 1, 1}), 9.0f);
  EXPECT_FLOAT_EQ(y.at({0, 0, 0}), 4.0f);
  EXPECT_FLOAT_EQ(y.at({0, 2, 2}), 4.0f);
  EXPECT_FLOAT_EQ(y.at({0, 0, 1}), 6.0f);
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(conv2d(Tensor::ones({2, 3, 3}), Tensor::ones({1, 3, 3, 3}), Tensor{}), ShapeError);
  EXPECT_THROW(conv2d(Tensor::ones({1, 3, 3}), Tensor::ones({1, 1, 2, 2}), Tensor{}), ShapeError);
}

TEST(Dense, IdentityAndAnalytic) {
  Tensor x({2}, {0.5f, -1.5f});
  auto y = dense(x, Tensor::eye(2), Tensor::zeros({2}));
  EXPECT_FLOAT_EQ(y.values()[0], 0.5f);
  EXPECT_FLOAT_EQ(y.values()[1], -1.5f);
  auto z = dense(Tensor({2}, {2, 3}), Tensor({1, 2}, {1, 1}), Tensor({1}, {1}));
  EXPECT_EQ(z.shape(), (Shape{1}));
  EXPECT_FLOAT_EQ(z.item(), 6.0f);
  EXPECT_THROW(dense(Tensor::ones({3}), Tensor::eye(2), Tensor{}), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  Rng rng(1);
  auto x = Tensor::randn({2, 3, 4}, rng);
  x.set_requires_grad(true);
  sum(x).backward();
  for (real g : x.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, SumOfSquares) {
  Tensor x({3}, {1, 2, 3});
  x.set_requires_grad(true);
  sum(square(x)).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 4.0f);
  EXPECT_FLOAT_EQ(x.grad()[2], 6.0f);
}

TEST(Backward, NonParticipatingParameterGetsZero) {
  Tensor x({2}, {1, 2});
  Tensor unused({2}, {5, 5});
  x.set_requires_grad(true);
  unused.set_requires_grad(true);
  sum(x * x).backward();
  EXPECT_EQ(unused.grad()[0], 0.0f);
  EXPECT_EQ(unused.grad()[1], 0.0f);
}

TEST(Backward, NonScalarLossThrows) {
  Tensor x({2}, {1, 2});
  x.set_requires_grad(true);
  EXPECT_THROW((x * x).backward(), ShapeError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tensor x({1}, {3.0f});
  x.set_requires_grad(true);
  auto y = x * x;
  sum(y + y * x).backward();  // 2x + 3x^2 at 3 = 33
  EXPECT_FLOAT_EQ(x.grad()[0], 33.0f);
}

TEST(Backward, DeterministicBitIdentical) {
  auto run = [] {
    Rng rng(42);
    auto x = Tensor::randn({2, 3, 4, 4}, rng);
    auto w = Tensor::randn({5, 3, 3, 3}, rng, 0.3f);
    w.set_requires_grad(true);
    sum(tanh(conv2d(x, w, Tensor{}))).backward();
    return std::vector<real>(w.grad().begin(), w.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(NoGrad, SuppressesRecording) {
  Tensor x({2}, {1, 2});
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    auto y = x * x;
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE((x * x).requires_grad());
}

TEST(Shapes, PermuteSliceConcat) {
  Tensor x({2, 3}, {0, 1, 2, 3, 4, 5});
  auto t = permute(x, {1, 0});
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_FLOAT_EQ(t.at({2, 1}), 5.0f);
  auto s = slice(x, 1, 1, 2);
  EXPECT_EQ(s.shape(), (Shape{2, 2}));
  EXPECT_FLOAT_EQ(s.at({1, 0}), 4.0f);
  auto c = concat({slice(x, 1, 0, 1), slice(x, 1, 1, 2)}, 1);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(c.values()[i], x.values()[i]);
  auto r = sum(x, {0});
  EXPECT_EQ(r.shape(), (Shape{3}));
  EXPECT_FLOAT_EQ(r.values()[2], 7.0f);
  auto k = sum(x, {1}, true);
  EXPECT_EQ(k.shape(), (Shape{2, 1}));
  EXPECT_FLOAT_EQ(k.values()[1], 12.0f);
}

TEST(LinearAlgebra, LogAbsDetAndInverse) {
  Tensor w({2, 2}, {2, 1, 1, 3});
  EXPECT_NEAR(logabsdet(w).item(), std::log(5.0), 1e-6);
  auto inv = matrix_inverse(w);
  EXPECT_NEAR(inv.at({0, 0}), 0.6, 1e-6);
  EXPECT_NEAR(inv.at({0, 1}), -0.2, 1e-6);
  EXPECT_THROW(logabsdet(Tensor({2, 2}, {1, 2, 2, 4})), DomainError);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(5);
  auto p = softmax_last(Tensor::randn({4, 7}, rng, 3.0f));
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0;
    for (std::size_t j = 0; j < 7; ++j) total += p.at({r, j});
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}
