#include <gtest/gtest.h>

#include "nfnoise/adam.hpp"
#include "nfnoise/error.hpp"
#include "nfnoise/ops.hpp"

using namespace nfnoise;

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  std::vector<Tensor> params{Tensor({3}, {1, 2, 3})};
  params[0].set_requires_grad(true);
  auto state = make_adam_state(params);
  adam_step(params, state);
  EXPECT_EQ(state.step, 1u);
  EXPECT_EQ(params[0].values()[0], 1.0f);
  EXPECT_EQ(params[0].values()[2], 3.0f);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Tensor> params{Tensor({1}, {1.0f})};
  std::vector<real> grad{1.0f};
  std::vector<std::span<const real>> grads{grad};
  auto state = make_adam_state(params, {.lr = 0.1f});
  adam_step(params, grads, state);
  EXPECT_NEAR(params[0].item(), 0.9, 1e-6);
}

TEST(Adam, ConvergesOnQuadratic) {
  std::vector<Tensor> params{Tensor({1}, {0.0f})};
  params[0].set_requires_grad(true);
  auto state = make_adam_state(params, {.lr = 0.1f});
  for (int i = 0; i < 100; ++i) {
    params[0].zero_grad();
    sum(square(params[0] - 3.0f)).backward();
    adam_step(params, state);
  }
  EXPECT_NEAR(params[0].item(), 3.0, 0.05);
}

TEST(Adam, ShapeMismatchThrows) {
  std::vector<Tensor> params{Tensor({2}, {1, 2})};
  std::vector<real> grad{1.0f};
  std::vector<std::span<const real>> grads{grad};
  auto state = make_adam_state(params);
  EXPECT_THROW(adam_step(params, grads, state), ShapeError);
  auto other = make_adam_state(std::vector<Tensor>{Tensor({5})});
  EXPECT_THROW(adam_step(params, other), ShapeError);
}

TEST(Adam, MomentShapesMatchParameters) {
  std::vector<Tensor> params{Tensor({2, 3}), Tensor({4})};
  auto state = make_adam_state(params);
  ASSERT_EQ(state.m.size(), 2u);
  EXPECT_EQ(state.m[0].size(), 6u);
  EXPECT_EQ(state.v[1].size(), 4u);
}

TEST(ClipGradNorm, RescalesToMaximum) {
  std::vector<Tensor> params{Tensor({2}, {0, 0})};
  params[0].mutable_grad()[0] = 3;
  params[0].mutable_grad()[1] = 4;
  EXPECT_NEAR(clip_grad_norm(params, 1.0), 5.0, 1e-9);
  EXPECT_NEAR(params[0].grad()[0], 0.6, 1e-6);
  EXPECT_NEAR(params[0].grad()[1], 0.8, 1e-6);
}
