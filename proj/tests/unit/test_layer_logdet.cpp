// Analytic log-determinants against finite-difference Jacobians (double
// precision build).

#include <gtest/gtest.h>

#include "nfnoise/spline.hpp"
#include "support/layer_fixtures.hpp"

using namespace nfnoise;
using namespace nftest;

TEST(LayerLogDet, MatchesNumericJacobian) {
  Rng rng(101);
  for (const auto& factory : all_layer_factories()) {
    double worst = 0;
    for (int trial = 0; trial < 10; ++trial) {
      auto layer = factory.make(rng);
      randomize(*layer, rng, factory.param_scale);
      auto ctx = random_context(rng, 1, 2, 2, 0.05, 0.95);
      auto x = random_input(rng, ctx, factory.needs_positive_image);
      const double analytic = layer->forward(x, ctx).logdet.item();
      worst = std::max(worst, std::abs(analytic - jacobian_logdet(*layer, x, ctx)));
    }
    EXPECT_LT(worst, 1e-3) << factory.name;
  }
}

TEST(LayerLogDet, ComposedLogDetIsSum) {
  Rng rng(102);
  auto factories = all_layer_factories();
  auto ctx = random_context(rng, 1, 2, 2, 0.05, 0.95);
  auto x = Tensor::uniform({1, 3, 2, 2}, rng, -0.5, 0.5);
  std::vector<std::shared_ptr<FlowLayer>> layers;
  for (auto& f : factories) {
    if (f.needs_positive_image) continue;
    layers.push_back(f.make(rng));
    randomize(*layers.back(), rng, 0.1);
  }
  Tensor y = x;
  double total = 0;
  Eigen::MatrixXd unused;
  for (auto& l : layers) {
    auto out = l->forward(y, ctx);
    total += out.logdet.item();
    y = out.y;
  }
  // Chain rule on the numeric Jacobians.
  double numeric = 0;
  y = x;
  for (auto& l : layers) {
    numeric += jacobian_logdet(*l, y, ctx);
    y = l->forward(y, ctx).y;
  }
  EXPECT_NEAR(total, numeric, 1e-3 * layers.size());
}

TEST(SplineExact, RoundTripWithSteepBins) {
  Rng rng(103);
  SplineConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    auto x = Tensor::uniform({64}, rng, -3.5, 3.5);
    auto params = Tensor::randn({64, cfg.params_per_element()}, rng, 1.5);
    auto y = rq_spline_forward(x, params, cfg).y;
    EXPECT_LT(max_abs_diff(rq_spline_inverse(y, params, cfg), x), 1e-9);
  }
}

TEST(SplineExact, StrictlyMonotoneAtProbes) {
  Rng rng(104);
  SplineConfig cfg;
  const std::size_t p = cfg.params_per_element();
  for (int trial = 0; trial < 20; ++trial) {
    auto one = Tensor::randn({1, p}, rng, 2.0);
    auto params = one + Tensor::zeros({100, p});
    std::vector<real> probes(100);
    for (int i = 0; i < 100; ++i) probes[i] = -3.2 + 6.4 * i / 99.0;
    auto out = rq_spline_forward(Tensor({100}, probes), params, cfg);
    for (int i = 1; i < 100; ++i) EXPECT_GT(out.y.values()[i], out.y.values()[i - 1]);
    // Derivative from the closed form agrees with a central difference.
    for (int i = 0; i < 100; ++i) {
      const real h = 1e-6;
      auto up = rq_spline_forward(Tensor({1}, {probes[i] + h}), one, cfg).y.item();
      auto down = rq_spline_forward(Tensor({1}, {probes[i] - h}), one, cfg).y.item();
      const double numeric = (up - down) / (2 * h);
      EXPECT_GT(numeric, 0.0);
      EXPECT_NEAR(std::log(numeric), out.logabsdet.values()[i], 1e-4);
    }
  }
}
