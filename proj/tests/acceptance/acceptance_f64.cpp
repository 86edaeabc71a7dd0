// Double-precision half: finite-difference oracles need float64 arithmetic.

#include <fmt/format.h>

#include <cmath>

#include "acceptance.hpp"
#include "nfnoise/model_zoo.hpp"
#include "nfnoise/training.hpp"
#include "support/gradcheck.hpp"
#include "support/layer_fixtures.hpp"

namespace acceptance {

using namespace nfnoise;

Outcome logdet_exactness() {
  constexpr double kTol = 1e-3;
  constexpr int kTrials = 50;
  Rng rng(2002);
  double worst = 0;
  std::string worst_layer;
  std::size_t layers = 0;
  for (const auto& factory : nftest::all_layer_factories(32)) {
    ++layers;
    for (int trial = 0; trial < kTrials; ++trial) {
      auto layer = factory.make(rng);
      nftest::randomize(*layer, rng, factory.param_scale);
      const auto ctx = nftest::random_context(rng, 1, 2, 2, 0.05, 0.95);
      const auto x = nftest::random_input(rng, ctx, factory.needs_positive_image);
      NoGradGuard guard;
      const double analytic = layer->forward(x, ctx).logdet.item();
      const double err = std::abs(analytic - nftest::jacobian_logdet(*layer, x, ctx, 1e-6));
      if (!(err <= worst)) {
        worst = err;
        worst_layer = factory.name;
      }
    }
  }
  return {worst < kTol, fmt::format("{} layers x {} parameterizations, max |logdet - numeric| {:.2e} ({}) < {:.0e}",
                                    layers, kTrials, worst, worst_layer, kTol)};
}

Outcome gradient_correctness() {
  constexpr double kTol = 1e-3;
  const auto spec = proposed_spec(1, 2, 5, 5);
  auto model = build_model(spec, 3003);
  Rng rng(3004);
  for (std::size_t i = 0; i < model.size(); ++i) nftest::randomize(*model.slot(i).layer, rng, 0.05);
  const auto ctx = nftest::random_context(rng, 1, 4, 4, 0.1, 0.9);
  const auto noise = Tensor::randn({1, 3, 4, 4}, rng, 0.05);
  const auto params = model.parameters();
  const auto r = nftest::grad_check([&](const std::vector<Tensor>&) { return nll_per_dim(model, noise, ctx); },
                                    params, 1e-6);
  return {r.max_rel_error < kTol, fmt::format("{} parameters, max relative error {:.2e} < {:.0e}{}",
                                              model.parameter_count(), r.max_rel_error, kTol,
                                              r.max_rel_error < kTol ? "" : " at " + r.worst)};
}

}  // namespace acceptance
