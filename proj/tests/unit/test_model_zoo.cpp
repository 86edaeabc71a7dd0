#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "nfnoise/error.hpp"
#include "nfnoise/model_zoo.hpp"
#include "nfnoise/ops.hpp"
#include "support/layer_fixtures.hpp"

using namespace nfnoise;
using namespace nftest;

namespace {

void randomize_model(const FlowModel& model, Rng& rng, double scale = 0.05) {
  for (std::size_t i = 0; i < model.size(); ++i) randomize(*model.slot(i).layer, rng, scale);
}

Tensor small_noise(Rng& rng, const ConditioningContext& ctx) {
  return Tensor::uniform(ctx.clean.shape(), rng, -0.03, 0.03);
}

double squared_norm(const Tensor& t) {
  double s = 0;
  for (auto v : t.values()) s += double(v) * v;
  return s;
}

/// Mean Gaussian negative log-likelihood per dimension, computed directly.
double nll_per_dim(const FlowModel& model, const Tensor& x, const ConditioningContext& ctx) {
  NoGradGuard guard;
  const auto out = model.forward(x, ctx);
  double total = 0;
  for (auto v : out.y.values()) total += 0.5 * double(v) * v + 0.5 * std::log(2 * std::numbers::pi);
  for (auto v : out.logdet.values()) total -= v;
  return total / static_cast<double>(x.numel());
}

}  // namespace

TEST(ModelZoo, ProposedLayerLayout) {
  const auto spec = proposed_spec(4, 2);
  ASSERT_EQ(spec.layers.size(), 20u);
  for (std::size_t s = 0; s < 4; ++s) {
    EXPECT_EQ(spec.layers[5 * s].type, "conditional_linear");
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_EQ(spec.layers[5 * s + 1 + 2 * k].type, "conv1x1");
      EXPECT_EQ(spec.layers[5 * s + 2 + 2 * k].type, "conditional_affine_coupling");
    }
  }
  EXPECT_EQ(proposed_spec(1, 1).layers.size(), 3u);
  EXPECT_THROW(proposed_spec(0, 2), ConfigError);
}

TEST(ModelZoo, BaselineParameterCounts) {
  EXPECT_EQ(build_model(baseline_spec("isotropic"), 1).parameter_count(), 50u);
  EXPECT_EQ(build_model(baseline_spec("diagonal"), 1).parameter_count(), 150u);
  EXPECT_EQ(build_model(baseline_spec("full_cov"), 1).parameter_count(), 375u);
  EXPECT_EQ(build_model(baseline_spec("nlf"), 1).parameter_count(), 300u);
  const auto small = build_model(baseline_spec("noise_flow"), 1).parameter_count();
  const auto large = build_model(baseline_spec("noise_flow_large"), 1).parameter_count();
  EXPECT_LT(small, large);
  std::cout << "noise_flow parameters: " << small << ", noise_flow_large: " << large
            << ", proposed: " << build_model(proposed_spec(), 1).parameter_count() << '\n';
  EXPECT_THROW(baseline_spec("gmm"), ConfigError);
}

TEST(ModelZoo, ProposedIsIdentityAtInitUpToRotation) {
  Rng rng(11);
  const auto model = build_model(with_conditioner_width(proposed_spec(4, 2), 8), 3);
  const auto ctx = random_context(rng, 3, 6, 6, 0.1, 0.9);
  const auto x = Tensor::randn(ctx.clean.shape(), rng, 0.05f);
  NoGradGuard guard;
  const auto out = model.forward(x, ctx);
  for (auto v : out.logdet.values()) EXPECT_LT(std::abs(v), 1e-5);
  EXPECT_NEAR(squared_norm(out.y) / squared_norm(x), 1.0, 1e-5);
}

TEST(ModelZoo, BuildIsDeterministicInSeed) {
  const auto spec = with_conditioner_width(proposed_spec(1, 2), 8);
  const auto a = build_model(spec, 7).state();
  const auto b = build_model(spec, 7).state();
  const auto c = build_model(spec, 8).state();
  ASSERT_EQ(a.size(), b.size());
  bool any_differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(max_abs_diff(a[i].tensor, b[i].tensor), 0.0);
    any_differs |= max_abs_diff(a[i].tensor, c[i].tensor) > 0;
  }
  EXPECT_TRUE(any_differs);
}

TEST(ModelZoo, CheckpointNames) {
  const auto model = build_model(with_conditioner_width(proposed_spec(1, 1), 4), 1);
  const auto names = model.named_parameters();
  EXPECT_EQ(names.front().name, "00.conditional_linear.log_scale");
  EXPECT_EQ(names[2].name, "01.conv1x1.weight");
  EXPECT_EQ(names[3].name.rfind("02.conditional_affine_coupling.f_st.", 0), 0u);
}

TEST(ModelSpecJson, RoundTripIsLossless) {
  for (const auto& name : {"proposed", "noise_flow", "CCS_iso_only_x2", "CL+CSC_I_x2+CAC_x2", "IG+proposed"}) {
    const auto spec = spec_by_name(name, 4, 3);
    const auto text = to_json(spec).dump(2);
    const auto back = model_spec_from_json(nlohmann::json::parse(text));
    EXPECT_EQ(back, spec) << name;
    EXPECT_EQ(to_json(back).dump(2), text) << name;
  }
}

TEST(ModelSpecJson, RejectsUnknownKeysAndTypes) {
  auto j = to_json(baseline_spec("diagonal"));
  j["colour"] = 1;
  EXPECT_THROW(model_spec_from_json(j), ConfigError);
  j = to_json(baseline_spec("diagonal"));
  j["layers"][0]["type"] = "householder";
  EXPECT_THROW(model_spec_from_json(j), ConfigError);
  j = to_json(proposed_spec(1, 1));
  j["layers"][2]["options"]["depth"] = 3;
  EXPECT_THROW(model_spec_from_json(j), ConfigError);
  j = to_json(proposed_spec(1, 1));
  j["layers"][0]["mask"]["time"] = false;
  EXPECT_THROW(model_spec_from_json(j), ConfigError);
  j = to_json(proposed_spec(1, 1));
  j["layers"][2]["options"]["width"] = 0;
  auto bad = model_spec_from_json(j);
  EXPECT_THROW(build_model(bad, 1), ConfigError);
  j = to_json(proposed_spec(1, 1));
  j["layers"] = nlohmann::json::array();
  EXPECT_THROW(model_spec_from_json(j), ConfigError);
}

TEST(ModelSpecJson, DefaultsForOmittedFields) {
  const auto spec = model_spec_from_json(nlohmann::json::parse(R"({"layers": [{"type": "gain"}]})"));
  EXPECT_EQ(spec.n_cam, 5u);
  EXPECT_EQ(spec.n_iso, 5u);
  EXPECT_EQ(spec.dequant.levels, 256);
  EXPECT_TRUE(spec.layers[0].mask.all());
}

TEST(ModelZoo, SavedModelReproducesOutputs) {
  Rng rng(21);
  const auto spec = with_conditioner_width(ablation_spec("SC_x2+CL+CA_I+CSC_x2"), 6);
  const auto model = build_model(spec, 5);
  randomize_model(model, rng);
  const auto dir = std::filesystem::temp_directory_path() / "nfnoise_zoo_roundtrip";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "model.nfck", model.state());
  {
    std::ofstream(dir / "model_spec.json") << to_json(spec).dump(2);
  }
  std::ifstream in(dir / "model_spec.json");
  const auto loaded_spec = model_spec_from_json(nlohmann::json::parse(in));
  auto loaded = build_model(loaded_spec, 999);
  loaded.load_state(load_checkpoint(dir / "model.nfck"));

  const auto ctx = random_context(rng, 4, 8, 8, 0.1, 0.9);
  const auto x = small_noise(rng, ctx);
  NoGradGuard guard;
  const auto a = model.forward(x, ctx);
  const auto b = loaded.forward(x, ctx);
  EXPECT_LE(max_abs_diff(a.y, b.y), 1e-4);
  EXPECT_LE(max_abs_diff(a.logdet, b.logdet), 1e-4);
  std::filesystem::remove_all(dir);
}

TEST(ModelZoo, LoadStateRejectsMismatch) {
  auto a = build_model(baseline_spec("diagonal"), 1);
  const auto b = build_model(baseline_spec("isotropic"), 1);
  EXPECT_THROW(a.load_state(b.state()), ConfigError);
}

TEST(ModelZoo, NlfWithZeroSignalTermMatchesDiagonal) {
  Rng rng(31);
  const auto nlf = build_model(baseline_spec("nlf"), 1);
  const auto diag = build_model(baseline_spec("diagonal"), 1);
  randomize(*diag.slot(0).layer, rng, 0.5);
  auto* sd = dynamic_cast<SignalDependent*>(nlf.slot(0).layer.get());
  ASSERT_NE(sd, nullptr);
  for (auto& v : sd->beta1_raw().mutable_values()) v = -100;
  for (auto& v : sd->beta2_raw().mutable_values()) v = SignalDependent::raw_for(1);
  const auto src = diag.slot(0).layer->parameters();
  const auto dst = nlf.slot(1).layer->parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    Tensor d = dst[i].tensor;
    std::copy(src[i].tensor.values().begin(), src[i].tensor.values().end(), d.mutable_values().begin());
  }
  const auto ctx = random_context(rng, 6, 5, 5);
  const auto x = small_noise(rng, ctx);
  EXPECT_NEAR(nll_per_dim(nlf, x, ctx), nll_per_dim(diag, x, ctx), 1e-6);
}

TEST(ModelZoo, MaskedRowsIgnoreMaskedInputs) {
  struct Case {
    const char* row;
    bool clean, camera, iso;  // which inputs may influence the output
  };
  for (const Case c : {Case{"CCS_iso_only_x2", false, false, true}, Case{"CCS_camera_only_x2", false, true, false},
                       Case{"CCS_clean_only_x2", true, false, false}, Case{"CAC_cg_x2+CA_Icg", true, true, true}}) {
    Rng rng(41);
    const auto model = build_model(with_conditioner_width(ablation_spec(c.row), 6), 2);
    randomize_model(model, rng, 0.2);
    auto ctx = random_context(rng, 2, 6, 6);
    const auto x = small_noise(rng, ctx);
    NoGradGuard guard;
    const auto base = model.forward(x, ctx).y;

    auto other = ctx;
    other.clean = Tensor::uniform(ctx.clean.shape(), rng, 0.0, 1.0);
    const double d_clean = max_abs_diff(base, model.forward(x, other).y);
    const std::vector<std::size_t> cam0 = {0, 1}, cam1 = {3, 4}, iso0 = {0, 1}, iso1 = {2, 3};
    auto a = make_context(ctx.clean, cam0, iso0, kCams, kIsos);
    auto b = make_context(ctx.clean, cam1, iso0, kCams, kIsos);
    auto g = make_context(ctx.clean, cam0, iso1, kCams, kIsos);
    const auto ya = model.forward(x, a).y;
    const double d_cam = max_abs_diff(ya, model.forward(x, b).y);
    const double d_iso = max_abs_diff(ya, model.forward(x, g).y);
    EXPECT_EQ(d_clean > 1e-6, c.clean) << c.row << " clean " << d_clean;
    EXPECT_EQ(d_cam > 1e-6, c.camera) << c.row << " camera " << d_cam;
    EXPECT_EQ(d_iso > 1e-6, c.iso) << c.row << " iso " << d_iso;
  }
}

TEST(ModelZoo, EveryNamedModelIsBijective) {
  std::vector<std::string> names = {"proposed"};
  for (const auto& k : baseline_kinds()) names.push_back(k);
  for (const auto& r : ablation_rows()) names.push_back(r);
  for (const auto& name : names) {
    Rng rng(51);
    const auto spec = with_conditioner_width(spec_by_name(name), 4);
    const auto model = build_model(spec, 1);
    randomize_model(model, rng);
    const auto ctx = random_context(rng, 2, 4, 4, 0.1, 0.9);
    const auto x = small_noise(rng, ctx);
    NoGradGuard guard;
    const auto z = model.forward(x, ctx).y;
    EXPECT_LE(max_abs_diff(model.inverse(z, ctx), x), 1e-5) << name;
  }
}

TEST(ModelNames, NormalizationAndAliases) {
  EXPECT_EQ(ablation_spec("CL_CA_{I,c,g}").name, "CL+CA_Icg");
  EXPECT_EQ(ablation_spec("(CL-CCS\xC3\x97" "2)\xC3\x97" "4").name, "(CL-CCS_x2)_x4");
  EXPECT_EQ(ablation_spec("ccs_x2").name, "CCS_x2");
  EXPECT_EQ(spec_by_name("Noise_Flow").name, "noise_flow");
  EXPECT_EQ(spec_by_name("proposed").layers.size(), 20u);
  EXPECT_THROW(spec_by_name("CL+CCS_x3"), ConfigError);
  // Every row has a distinct key.
  std::set<std::string> keys;
  for (const auto& r : ablation_rows()) keys.insert(normalize_model_name(r));
  EXPECT_EQ(keys.size(), ablation_rows().size());
}

TEST(ModelNames, EquivalentRowsShareStructure) {
  EXPECT_EQ(ablation_spec("CL+CAC_x2").layers, ablation_spec("CL-CCS_x2").layers);
  EXPECT_EQ(ablation_spec("(CL+CAC_x2)_x4").layers, proposed_spec(4, 2).layers);
}
