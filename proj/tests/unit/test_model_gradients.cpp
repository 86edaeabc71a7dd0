// Finite-difference checks of the full model NLL (double-precision build).

#include <gtest/gtest.h>

#include "nfnoise/model_zoo.hpp"
#include "nfnoise/training.hpp"
#include "support/gradcheck.hpp"

using namespace nfnoise;
using nftest::grad_check;

namespace {

constexpr double kTol = 1e-3;
// Small step so differences rarely straddle a ReLU kink or a spline knot.
constexpr double kStep = 1e-6;

struct Problem {
  Tensor noise;
  ConditioningContext ctx;
};

Problem small_problem(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  auto clean = Tensor::uniform({n, 3, 4, 4}, rng, 0.1, 0.9);
  std::vector<std::size_t> cam(n), iso(n);
  for (std::size_t i = 0; i < n; ++i) {
    cam[i] = rng.below(5);
    iso[i] = rng.below(5);
  }
  return {Tensor::randn({n, 3, 4, 4}, rng, 0.05), make_context(clean, cam, iso, 5, 5)};
}

// Moves every parameter off its initialization so no gradient is trivially zero.
void perturb(FlowModel& model, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& p : model.parameters()) {
    for (auto& v : p.mutable_values()) v += static_cast<real>(scale * rng.normal());
  }
}

void expect_model_grad(const ModelSpec& spec, double scale) {
  auto model = build_model(spec, 3);
  perturb(model, 4, scale);
  const auto prob = small_problem(2, 5);
  auto inputs = model.parameters();
  inputs.push_back(prob.noise);
  const auto r = grad_check(
      [&](const std::vector<Tensor>& v) { return nll_per_dim(model, v.back(), prob.ctx); }, inputs, kStep);
  EXPECT_LT(r.max_rel_error, kTol) << spec.name << ": " << r.worst;
}

}  // namespace

TEST(ModelGradCheck, ProposedSingleBlock) {
  expect_model_grad(proposed_spec(1, 1, 5, 5), 0.05);
}

TEST(ModelGradCheck, NoiseFlowBaseline) {
  expect_model_grad(with_conditioner_width(baseline_spec("noise_flow", 5, 5), 2), 0.05);
}

TEST(ModelGradCheck, SplineAndGammaRows) {
  expect_model_grad(with_conditioner_width(ablation_spec("CL+CSC_x2", 5, 5), 2), 0.05);
  expect_model_grad(with_conditioner_width(ablation_spec("IG+proposed", 5, 5), 2), 0.02);
  expect_model_grad(baseline_spec("full_cov", 5, 5), 0.05);
}
