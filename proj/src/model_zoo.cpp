#include "nfnoise/model_zoo.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include "nfnoise/error.hpp"

namespace nfnoise::inline NFNOISE_ABI {

namespace {

using nlohmann::json;

const std::set<std::string> kConditionerKeys = {"width", "kernel", "rescale_width"};
const std::set<std::string> kSplineKeys = {"width", "kernel", "rescale_width", "bins", "tail_bound", "rescale"};

const std::map<std::string, std::set<std::string>>& option_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"conv1x1", {}},
      {"conditional_conv1x1", {}},
      {"conditional_linear", {}},
      {"conditional_linear_iso", {}},
      {"affine_coupling", kConditionerKeys},
      {"conditional_affine_coupling", kConditionerKeys},
      {"conditional_affine_full", kConditionerKeys},
      {"conditional_affine_clean", kConditionerKeys},
      {"spline_coupling", kSplineKeys},
      {"conditional_spline_coupling", kSplineKeys},
      {"inverse_gamma", {"gamma", "relative"}},
      {"signal_dependent", {}},
      {"gain", {}},
  };
  return keys;
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
T option(const json& options, const char* key, T fallback) {
  if (!options.contains(key)) return fallback;
  try {
    return options.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("layer option '") + key + "' has the wrong type");
  }
}

std::size_t positive_option(const json& options, const char* key, std::size_t fallback) {
  const auto v = option<long long>(options, key, static_cast<long long>(fallback));
  if (v <= 0) throw ConfigError(std::string("layer option '") + key + "' must be positive");
  return static_cast<std::size_t>(v);
}

AffineConfig affine_config(const json& options) {
  AffineConfig cfg;
  cfg.net.width = positive_option(options, "width", cfg.net.width);
  cfg.net.kernel = positive_option(options, "kernel", cfg.net.kernel);
  if (cfg.net.kernel % 2 == 0) throw ConfigError("layer option 'kernel' must be odd");
  cfg.rescale_width = positive_option(options, "rescale_width", cfg.rescale_width);
  return cfg;
}

SplineConfig spline_config(const json& options) {
  SplineConfig cfg;
  cfg.bins = positive_option(options, "bins", cfg.bins);
  cfg.tail_bound = static_cast<real>(option<double>(options, "tail_bound", cfg.tail_bound));
  if (!(cfg.tail_bound > 0)) throw ConfigError("layer option 'tail_bound' must be positive");
  return cfg;
}

json mask_to_json(const ContextMask& m) { return {{"clean", m.clean}, {"camera", m.camera}, {"iso", m.iso}}; }

ContextMask mask_from_json(const json& j) {
  reject_unknown(j, {"clean", "camera", "iso"}, "layer mask");
  ContextMask m;
  try {
    if (j.contains("clean")) m.clean = j.at("clean").get<bool>();
    if (j.contains("camera")) m.camera = j.at("camera").get<bool>();
    if (j.contains("iso")) m.iso = j.at("iso").get<bool>();
  } catch (const json::exception&) {
    throw ConfigError("layer mask entries must be booleans");
  }
  return m;
}

LayerSpec layer(std::string type, json options = json::object(), ContextMask mask = {}) {
  return {std::move(type), mask, std::move(options)};
}

json width_options(const ConvNetConfig& net) {
  json o = json::object();
  const ConvNetConfig defaults;
  if (net.width != defaults.width) o["width"] = net.width;
  if (net.kernel != defaults.kernel) o["kernel"] = net.kernel;
  return o;
}

/// (conv1x1, coupling) x k
void append_steps(ModelSpec& spec, std::size_t k, const std::string& coupling, json options = json::object(),
                  ContextMask mask = {}) {
  for (std::size_t i = 0; i < k; ++i) {
    spec.layers.push_back(layer("conv1x1"));
    spec.layers.push_back(layer(coupling, options, mask));
  }
}

void append(ModelSpec& spec, const ModelSpec& other) {
  spec.layers.insert(spec.layers.end(), other.layers.begin(), other.layers.end());
}

ModelSpec empty_spec(std::string name, std::size_t n_cam, std::size_t n_iso) {
  ModelSpec spec;
  spec.name = std::move(name);
  spec.n_cam = n_cam;
  spec.n_iso = n_iso;
  return spec;
}

using RowBuilder = ModelSpec (*)(std::size_t, std::size_t);

struct AblationRow {
  const char* id;
  RowBuilder build;
};

constexpr ContextMask kIsoOnly{false, false, true};
constexpr ContextMask kCameraOnly{false, true, false};
constexpr ContextMask kCleanOnly{true, false, false};
constexpr ContextMask kNoClean{false, true, true};

ModelSpec ccs_masked(std::size_t n_cam, std::size_t n_iso, ContextMask mask) {
  ModelSpec s = empty_spec("", n_cam, n_iso);
  append_steps(s, 2, "conditional_affine_coupling", json::object(), mask);
  return s;
}

ModelSpec cl_plus(std::size_t n_cam, std::size_t n_iso) {
  ModelSpec s = empty_spec("", n_cam, n_iso);
  s.layers.push_back(layer("conditional_linear"));
  return s;
}

const std::vector<AblationRow>& rows() {
  static const std::vector<AblationRow> table = {
      {"CL", [](std::size_t c, std::size_t i) { return cl_plus(c, i); }},
      {"CCS_iso_only_x2", [](std::size_t c, std::size_t i) { return ccs_masked(c, i, kIsoOnly); }},
      {"CCS_camera_only_x2", [](std::size_t c, std::size_t i) { return ccs_masked(c, i, kCameraOnly); }},
      {"CCS_clean_only_x2", [](std::size_t c, std::size_t i) { return ccs_masked(c, i, kCleanOnly); }},
      {"CCS_x2", [](std::size_t c, std::size_t i) { return ccs_masked(c, i, {}); }},
      {"CL-CCS_x2", [](std::size_t c, std::size_t i) { return proposed_spec(1, 2, c, i); }},
      {"(CL-CCS_x2)_x2", [](std::size_t c, std::size_t i) { return proposed_spec(2, 2, c, i); }},
      {"(CL-CCS_x2)_x4", [](std::size_t c, std::size_t i) { return proposed_spec(4, 2, c, i); }},
      {"SC_x2+CL+CA_I+CSC_x2",
       [](std::size_t c, std::size_t i) {
         ModelSpec s = empty_spec("", c, i);
         append_steps(s, 2, "spline_coupling");
         s.layers.push_back(layer("conditional_linear"));
         s.layers.push_back(layer("conditional_affine_clean"));
         append_steps(s, 2, "conditional_spline_coupling");
         return s;
       }},
      {"CL+CA_I+CSC_x2",
       [](std::size_t c, std::size_t i) {
         ModelSpec s = cl_plus(c, i);
         s.layers.push_back(layer("conditional_affine_clean"));
         append_steps(s, 2, "conditional_spline_coupling");
         return s;
       }},
      {"AC_x2+CL+CA_I+CAC_x2",
       [](std::size_t c, std::size_t i) {
         ModelSpec s = empty_spec("", c, i);
         append_steps(s, 2, "affine_coupling");
         s.layers.push_back(layer("conditional_linear"));
         s.layers.push_back(layer("conditional_affine_clean"));
         append_steps(s, 2, "conditional_affine_coupling");
         return s;
       }},
      {"CL+CA_I+CAC_x2",
       [](std::size_t c, std::size_t i) {
         ModelSpec s = cl_plus(c, i);
         s.layers.push_back(layer("conditional_affine_clean"));
         append_steps(s, 2, "conditional_affine_coupling");
         return s;
       }},
      {"CL+CSC_I_x2+CAC_x2",
       [](std::size_t c, std::size_t i) {
         ModelSpec s = cl_plus(c, i);
         append_steps(s, 2, "conditional_spline_coupling", {{"rescale", false}});
         append_steps(s, 2, "conditional_affine_coupling");
         return s;
       }},
      {"CL+CAC_x2", [](std::size_t c, std::size_t i) { return proposed_spec(1, 2, c, i); }},
      {"CL+CSC_x2",
       [](std::size_t c, std::size_t i) {
         ModelSpec s = cl_plus(c, i);
         append_steps(s, 2, "conditional_spline_coupling");
         return s;
       }},
      {"CL+CA_Icg",
       [](std::size_t c, std::size_t i) {
         ModelSpec s = cl_plus(c, i);
         s.layers.push_back(layer("conditional_affine_full"));
         return s;
       }},
      {"CAC_cg_x2+CA_Icg",
       [](std::size_t c, std::size_t i) {
         ModelSpec s = ccs_masked(c, i, kNoClean);
         s.layers.push_back(layer("conditional_affine_full"));
         return s;
       }},
      {"(CL+CAC_x2)_x4", [](std::size_t c, std::size_t i) { return proposed_spec(4, 2, c, i); }},
      {"(CL+CA_Icg)_x4",
       [](std::size_t c, std::size_t i) {
         ModelSpec s = empty_spec("", c, i);
         for (int k = 0; k < 4; ++k) {
           s.layers.push_back(layer("conditional_linear"));
           s.layers.push_back(layer("conditional_affine_full"));
         }
         return s;
       }},
      {"IG+proposed",
       [](std::size_t c, std::size_t i) {
         ModelSpec s = empty_spec("", c, i);
         s.layers.push_back(layer("inverse_gamma"));
         append(s, proposed_spec(4, 2, c, i));
         return s;
       }},
      {"IG+noise_flow",
       [](std::size_t c, std::size_t i) {
         ModelSpec s = empty_spec("", c, i);
         s.layers.push_back(layer("inverse_gamma"));
         append(s, baseline_spec("noise_flow", c, i));
         return s;
       }},
  };
  return table;
}

ModelSpec noise_flow(std::size_t n_cam, std::size_t n_iso, std::size_t width) {
  ModelSpec s = empty_spec("", n_cam, n_iso);
  const json opts = {{"width", width}};
  s.layers.push_back(layer("signal_dependent"));
  append_steps(s, 4, "affine_coupling", opts);
  s.layers.push_back(layer("gain"));
  append_steps(s, 4, "affine_coupling", opts);
  return s;
}

}  // namespace

json to_json(const ModelSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) {
    layers.push_back({{"type", l.type}, {"mask", mask_to_json(l.mask)}, {"options", l.options}});
  }
  return {{"name", spec.name},
          {"n_cam", spec.n_cam},
          {"n_iso", spec.n_iso},
          {"dequant", {{"levels", spec.dequant.levels}, {"independent", spec.dequant.independent}}},
          {"layers", layers}};
}

ModelSpec model_spec_from_json(const json& j) {
  reject_unknown(j, {"name", "n_cam", "n_iso", "dequant", "layers"}, "model spec");
  ModelSpec spec;
  try {
    spec.name = j.value("name", std::string{});
    const auto n_cam = j.value("n_cam", 5LL);
    const auto n_iso = j.value("n_iso", 5LL);
    if (n_cam <= 0 || n_iso <= 0) throw ConfigError("n_cam and n_iso must be positive");
    spec.n_cam = static_cast<std::size_t>(n_cam);
    spec.n_iso = static_cast<std::size_t>(n_iso);
    if (j.contains("dequant")) {
      const auto& d = j.at("dequant");
      reject_unknown(d, {"levels", "independent"}, "dequant");
      spec.dequant.levels = d.value("levels", 256);
      spec.dequant.independent = d.value("independent", true);
      if (spec.dequant.levels < 2) throw ConfigError("dequant.levels must be at least 2");
    }
    if (!j.contains("layers") || !j.at("layers").is_array()) throw ConfigError("model spec needs a 'layers' array");
    for (const auto& lj : j.at("layers")) {
      reject_unknown(lj, {"type", "mask", "options"}, "layer");
      LayerSpec l;
      l.type = lj.at("type").get<std::string>();
      const auto it = option_keys().find(l.type);
      if (it == option_keys().end()) throw ConfigError("unknown layer type '" + l.type + "'");
      if (lj.contains("mask")) l.mask = mask_from_json(lj.at("mask"));
      if (lj.contains("options")) {
        l.options = lj.at("options");
        reject_unknown(l.options, it->second, "options of " + l.type);
      }
      spec.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model spec: ") + e.what());
  }
  if (spec.layers.empty()) throw ConfigError("model spec has no layers");
  return spec;
}

const std::vector<std::string>& layer_types() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [name, keys] : option_keys()) v.push_back(name);
    return v;
  }();
  return names;
}

std::shared_ptr<FlowLayer> make_layer(const LayerSpec& spec, std::size_t n_cam, std::size_t n_iso, Rng& rng) {
  const auto it = option_keys().find(spec.type);
  if (it == option_keys().end()) throw ConfigError("unknown layer type '" + spec.type + "'");
  reject_unknown(spec.options, it->second, "options of " + spec.type);
  const auto& o = spec.options;
  const std::size_t pairs = n_cam * n_iso;
  const std::string& t = spec.type;
  if (t == "conv1x1") return std::make_shared<Conv1x1>(rng);
  if (t == "conditional_conv1x1") return std::make_shared<ConditionalConv1x1>(pairs);
  if (t == "conditional_linear") return std::make_shared<ConditionalLinear>(pairs, false);
  if (t == "conditional_linear_iso") return std::make_shared<ConditionalLinear>(pairs, true);
  if (t == "signal_dependent") return std::make_shared<SignalDependent>(pairs);
  if (t == "gain") return std::make_shared<Gain>(n_iso);
  if (t == "inverse_gamma") {
    const double gamma = option<double>(o, "gamma", 2.2);
    if (!(gamma > 0)) throw ConfigError("inverse_gamma option 'gamma' must be positive");
    return std::make_shared<InverseGamma>(option<bool>(o, "relative", true), static_cast<real>(gamma));
  }
  if (t == "spline_coupling" || t == "conditional_spline_coupling") {
    return std::make_shared<SplineCoupling>(t == "conditional_spline_coupling", option<bool>(o, "rescale", true),
                                            n_cam, n_iso, spline_config(o), affine_config(o), rng);
  }
  AffineKind kind = AffineKind::unconditional;
  if (t == "conditional_affine_coupling") kind = AffineKind::conditional;
  if (t == "conditional_affine_full") kind = AffineKind::full;
  if (t == "conditional_affine_clean") kind = AffineKind::clean_only;
  return std::make_shared<AffineLayer>(kind, n_cam, n_iso, affine_config(o), rng);
}

FlowModel build_model(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.layers.empty()) throw ConfigError("model spec has no layers");
  FlowModel model(spec.n_cam, spec.n_iso);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    model.add(make_layer(spec.layers[i], spec.n_cam, spec.n_iso, rng), spec.layers[i].mask);
  }
  return model;
}

ModelSpec proposed_spec(std::size_t s, std::size_t k, std::size_t n_cam, std::size_t n_iso, ConvNetConfig net) {
  if (s == 0 || k == 0) throw ConfigError("proposed model needs S >= 1 and K >= 1");
  ModelSpec spec = empty_spec("proposed", n_cam, n_iso);
  for (std::size_t i = 0; i < s; ++i) {
    spec.layers.push_back(layer("conditional_linear"));
    append_steps(spec, k, "conditional_affine_coupling", width_options(net));
  }
  return spec;
}

const std::vector<std::string>& baseline_kinds() {
  static const std::vector<std::string> kinds = {"isotropic", "diagonal", "full_cov",
                                                 "nlf",       "noise_flow", "noise_flow_large"};
  return kinds;
}

ModelSpec baseline_spec(const std::string& kind, std::size_t n_cam, std::size_t n_iso) {
  ModelSpec s = empty_spec(kind, n_cam, n_iso);
  if (kind == "isotropic") {
    s.layers.push_back(layer("conditional_linear_iso"));
  } else if (kind == "diagonal") {
    s.layers.push_back(layer("conditional_linear"));
  } else if (kind == "full_cov") {
    s.layers.push_back(layer("conditional_conv1x1"));
    s.layers.push_back(layer("conditional_linear"));
  } else if (kind == "nlf") {
    s.layers.push_back(layer("signal_dependent"));
    s.layers.push_back(layer("conditional_linear"));
  } else if (kind == "noise_flow") {
    s.layers = noise_flow(n_cam, n_iso, 4).layers;
  } else if (kind == "noise_flow_large") {
    s.layers = noise_flow(n_cam, n_iso, 8).layers;
  } else {
    throw ConfigError("unknown baseline '" + kind + "'");
  }
  return s;
}

ModelSpec with_conditioner_width(ModelSpec spec, std::size_t width) {
  if (width == 0) throw ConfigError("conditioner width must be positive");
  for (auto& l : spec.layers) {
    if (option_keys().at(l.type).count("width")) l.options["width"] = width;
  }
  return spec;
}

std::string normalize_model_name(const std::string& name) {
  static const std::string kTimes = "\xC3\x97";  // U+00D7 MULTIPLICATION SIGN
  std::string s = name;
  for (auto pos = s.find(kTimes); pos != std::string::npos; pos = s.find(kTimes, pos)) s.replace(pos, kTimes.size(), "x");
  std::string key;
  for (unsigned char ch : s) {
    if (std::isalnum(ch)) key.push_back(static_cast<char>(std::tolower(ch)));
  }
  return key;
}

const std::vector<std::string>& ablation_rows() {
  static const std::vector<std::string> ids = [] {
    std::vector<std::string> v;
    for (const auto& r : rows()) v.emplace_back(r.id);
    return v;
  }();
  return ids;
}

ModelSpec ablation_spec(const std::string& row, std::size_t n_cam, std::size_t n_iso) {
  const std::string key = normalize_model_name(row);
  for (const auto& r : rows()) {
    if (normalize_model_name(r.id) == key) {
      ModelSpec s = r.build(n_cam, n_iso);
      s.name = r.id;
      return s;
    }
  }
  throw ConfigError("unknown ablation row '" + row + "'");
}

ModelSpec spec_by_name(const std::string& name, std::size_t n_cam, std::size_t n_iso) {
  const std::string key = normalize_model_name(name);
  if (key == "proposed") return proposed_spec(4, 2, n_cam, n_iso);
  for (const auto& kind : baseline_kinds()) {
    if (normalize_model_name(kind) == key) return baseline_spec(kind, n_cam, n_iso);
  }
  try {
    return ablation_spec(name, n_cam, n_iso);
  } catch (const ConfigError&) {
    throw ConfigError("unknown model '" + name + "'");
  }
}

}  // namespace nfnoise::inline NFNOISE_ABI
