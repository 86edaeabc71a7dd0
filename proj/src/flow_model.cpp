#include "nfnoise/flow_model.hpp"

#include <cstdio>

#include "nfnoise/error.hpp"
#include "nfnoise/ops.hpp"

namespace nfnoise::inline NFNOISE_ABI {

namespace {

std::string index_prefix(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02zu", i);
  return buf;
}

template <class F>
auto run_layer(const FlowModel& model, std::size_t i, const char* direction, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError("layer " + model.layer_label(i) + " " + direction + ": " + e.what());
  } catch (const DomainError& e) {
    throw NumericError("layer " + model.layer_label(i) + " " + direction + ": " + e.what());
  }
}

}  // namespace

FlowModel::FlowModel(std::size_t n_cam, std::size_t n_iso) : n_cam_(n_cam), n_iso_(n_iso) {
  if (n_cam == 0 || n_iso == 0) throw ConfigError("model grid must have at least one camera and one ISO");
}

void FlowModel::add(std::shared_ptr<FlowLayer> layer, ContextMask mask) {
  if (!layer) throw ConfigError("null layer");
  slots_.push_back({std::move(layer), mask});
}

std::string FlowModel::layer_label(std::size_t i) const {
  return index_prefix(i) + " (" + slots_.at(i).layer->type() + ")";
}

FlowOutput FlowModel::forward(const Tensor& x, const ConditioningContext& ctx) const {
  check_flow_input(x, "model");
  FlowOutput acc{x, Tensor::zeros({x.size(0)})};
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const auto& slot = slots_[i];
    auto out = run_layer(*this, i, "forward", [&] { return slot.layer->forward(acc.y, apply_mask(ctx, slot.mask)); });
    if (!all_finite(out.y) || !all_finite(out.logdet)) {
      throw NumericError("layer " + layer_label(i) + " forward: non-finite output");
    }
    acc.y = out.y;
    acc.logdet = acc.logdet + out.logdet;
  }
  return acc;
}

Tensor FlowModel::inverse(const Tensor& z, const ConditioningContext& ctx) const {
  check_flow_input(z, "model");
  Tensor x = z;
  for (std::size_t i = slots_.size(); i-- > 0;) {
    const auto& slot = slots_[i];
    x = run_layer(*this, i, "inverse", [&] { return slot.layer->inverse(x, apply_mask(ctx, slot.mask)); });
    if (!all_finite(x)) throw NumericError("layer " + layer_label(i) + " inverse: non-finite output");
  }
  return x;
}

std::vector<NamedTensor> FlowModel::named_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const std::string prefix = index_prefix(i) + "." + slots_[i].layer->type() + ".";
    for (auto& p : slots_[i].layer->parameters()) out.push_back({prefix + p.name, p.tensor});
  }
  return out;
}

std::vector<Tensor> FlowModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

std::size_t FlowModel::parameter_count() const {
  std::size_t n = 0;
  for (auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

std::vector<NamedTensor> FlowModel::state() const {
  auto params = named_parameters();
  for (auto& p : params) p.tensor = p.tensor.detach();
  return params;
}

void FlowModel::load_state(const std::vector<NamedTensor>& state) {
  auto params = named_parameters();
  if (params.size() != state.size()) {
    throw ConfigError("checkpoint has " + std::to_string(state.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != state[i].name) {
      throw ConfigError("checkpoint tensor '" + state[i].name + "' where model expects '" + params[i].name + "'");
    }
    if (params[i].tensor.shape() != state[i].tensor.shape()) {
      throw ConfigError("checkpoint tensor '" + state[i].name + "' has shape " + shape_string(state[i].tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_values();
    auto src = state[i].tensor.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace nfnoise::inline NFNOISE_ABI
