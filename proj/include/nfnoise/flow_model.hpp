#pragma once

#include <memory>
#include <vector>

#include "nfnoise/layers.hpp"

namespace nfnoise::inline NFNOISE_ABI {

struct LayerSlot {
  std::shared_ptr<FlowLayer> layer;
  ContextMask mask;
};

/// Ordered composition of flow layers. Layer i sees the context through its
/// own mask. Parameter names are "{index:02d}.{type}.{param}".
class FlowModel {
 public:
  FlowModel(std::size_t n_cam, std::size_t n_iso);

  void add(std::shared_ptr<FlowLayer> layer, ContextMask mask = {});

  /// Data -> base. logdet is the sum of the layer log-determinants. Numeric
  /// failures are rethrown with the offending layer named.
  FlowOutput forward(const Tensor& x, const ConditioningContext& ctx) const;
  /// Base -> data.
  Tensor inverse(const Tensor& z, const ConditioningContext& ctx) const;

  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  /// Detached copies of every parameter.
  std::vector<NamedTensor> state() const;
  /// Copies values in; names and shapes must match exactly (ConfigError).
  void load_state(const std::vector<NamedTensor>& state);

  std::size_t size() const { return slots_.size(); }
  const LayerSlot& slot(std::size_t i) const { return slots_.at(i); }
  std::size_t n_cam() const { return n_cam_; }
  std::size_t n_iso() const { return n_iso_; }

  /// "03 (conditional_affine_coupling)"
  std::string layer_label(std::size_t i) const;

 private:
  std::size_t n_cam_;
  std::size_t n_iso_;
  std::vector<LayerSlot> slots_;
};

}  // namespace nfnoise::inline NFNOISE_ABI
