#pragma once

#include <cstddef>
#include <span>

#include "nfnoise/tensor.hpp"

namespace nfnoise::inline NFNOISE_ABI {

/// Conditioning inputs for a batch of N patches.
struct ConditioningContext {
  Tensor clean;          // [N,3,H,W], dequantized clean patch in [0,1)
  Tensor camera_onehot;  // [N,n_cam]
  Tensor iso_onehot;     // [N,n_iso]
  Tensor pair_onehot;    // [N,n_cam*n_iso], index camera*n_iso + iso

  std::size_t batch() const { return clean.size(0); }
  std::size_t n_cam() const { return camera_onehot.size(1); }
  std::size_t n_iso() const { return iso_onehot.size(1); }
};

/// Builds one-hot encodings from per-sample camera and ISO indices. Throws
/// ConfigError for out-of-range indices and ShapeError for a batch mismatch.
ConditioningContext make_context(Tensor clean, std::span<const std::size_t> camera, std::span<const std::size_t> iso,
                                 std::size_t n_cam, std::size_t n_iso);

/// Which conditioning inputs a layer may see. A masked input is replaced by
/// zeros; masking the camera or the ISO also zeroes the pair encoding.
struct ContextMask {
  bool clean = true;
  bool camera = true;
  bool iso = true;

  bool all() const { return clean && camera && iso; }
  bool operator==(const ContextMask&) const = default;
};

ConditioningContext apply_mask(const ConditioningContext& ctx, ContextMask mask);

}  // namespace nfnoise::inline NFNOISE_ABI
