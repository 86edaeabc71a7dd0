#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "nfnoise/conditioners.hpp"
#include "nfnoise/flow_model.hpp"

namespace nfnoise::inline NFNOISE_ABI {

struct LayerSpec {
  std::string type;
  ContextMask mask;
  nlohmann::json options = nlohmann::json::object();

  bool operator==(const LayerSpec&) const = default;
};

struct DequantSpec {
  int levels = 256;
  bool independent = true;  // separate uniform draws for clean and noisy

  bool operator==(const DequantSpec&) const = default;
};

/// Declarative model description, stored as model_spec.json next to
/// checkpoints.
struct ModelSpec {
  std::string name;
  std::size_t n_cam = 5;
  std::size_t n_iso = 5;
  DequantSpec dequant;
  std::vector<LayerSpec> layers;

  bool operator==(const ModelSpec&) const = default;
};

nlohmann::json to_json(const ModelSpec& spec);
/// Strict: unknown keys or layer types throw ConfigError.
ModelSpec model_spec_from_json(const nlohmann::json& j);

/// Registered layer type names.
const std::vector<std::string>& layer_types();

/// Builds one layer. Options: width, kernel, rescale_width (conditioners);
/// bins, tail_bound, rescale (splines); gamma, relative (inverse_gamma).
std::shared_ptr<FlowLayer> make_layer(const LayerSpec& spec, std::size_t n_cam, std::size_t n_iso, Rng& rng);

/// Instantiates a spec. Layer i is initialized from its own seed stream.
FlowModel build_model(const ModelSpec& spec, std::uint64_t seed);

/// [CL, (conv1x1, CAC) x K] x S.
ModelSpec proposed_spec(std::size_t s = 4, std::size_t k = 2, std::size_t n_cam = 5, std::size_t n_iso = 5,
                        ConvNetConfig net = {});

/// kind: isotropic, diagonal, full_cov, nlf, noise_flow, noise_flow_large.
ModelSpec baseline_spec(const std::string& kind, std::size_t n_cam = 5, std::size_t n_iso = 5);
const std::vector<std::string>& baseline_kinds();

/// Ablation and architecture-search rows, e.g. "CCS_iso_only_x2",
/// "(CL-CCS_x2)_x4", "CL+CA_Icg". Lookup ignores case, punctuation and the
/// multiplication sign, so "CL_CA_{I,c,g}" and "(CL-CCS×2)×4" also resolve.
ModelSpec ablation_spec(const std::string& row, std::size_t n_cam = 5, std::size_t n_iso = 5);
const std::vector<std::string>& ablation_rows();

/// "proposed", a baseline kind or an ablation row. Throws ConfigError.
ModelSpec spec_by_name(const std::string& name, std::size_t n_cam = 5, std::size_t n_iso = 5);

/// Copy of `spec` with every conditioner network set to `width` channels.
ModelSpec with_conditioner_width(ModelSpec spec, std::size_t width);

/// Canonical lookup key for a model name.
std::string normalize_model_name(const std::string& name);

}  // namespace nfnoise::inline NFNOISE_ABI
