#include "nfnoise/context.hpp"

#include "nfnoise/error.hpp"

namespace nfnoise::inline NFNOISE_ABI {

ConditioningContext make_context(Tensor clean, std::span<const std::size_t> camera, std::span<const std::size_t> iso,
                                 std::size_t n_cam, std::size_t n_iso) {
  if (clean.rank() != 4 || clean.size(1) != 3) {
    throw ShapeError("clean patch batch must be [N,3,H,W], got " + shape_string(clean.shape()));
  }
  const std::size_t n = clean.size(0);
  if (camera.size() != n || iso.size() != n) throw ShapeError("one camera and ISO index per patch required");
  ConditioningContext ctx;
  ctx.clean = std::move(clean);
  ctx.camera_onehot = Tensor::zeros({n, n_cam});
  ctx.iso_onehot = Tensor::zeros({n, n_iso});
  ctx.pair_onehot = Tensor::zeros({n, n_cam * n_iso});
  auto cam = ctx.camera_onehot.mutable_values();
  auto gain = ctx.iso_onehot.mutable_values();
  auto pair = ctx.pair_onehot.mutable_values();
  for (std::size_t i = 0; i < n; ++i) {
    if (camera[i] >= n_cam) throw ConfigError("camera index " + std::to_string(camera[i]) + " outside the grid");
    if (iso[i] >= n_iso) throw ConfigError("ISO index " + std::to_string(iso[i]) + " outside the grid");
    cam[i * n_cam + camera[i]] = 1;
    gain[i * n_iso + iso[i]] = 1;
    pair[i * n_cam * n_iso + camera[i] * n_iso + iso[i]] = 1;
  }
  return ctx;
}

ConditioningContext apply_mask(const ConditioningContext& ctx, ContextMask mask) {
  if (mask.all()) return ctx;
  ConditioningContext out = ctx;
  if (!mask.clean) out.clean = Tensor::zeros(ctx.clean.shape());
  if (!mask.camera) out.camera_onehot = Tensor::zeros(ctx.camera_onehot.shape());
  if (!mask.iso) out.iso_onehot = Tensor::zeros(ctx.iso_onehot.shape());
  if (!mask.camera || !mask.iso) out.pair_onehot = Tensor::zeros(ctx.pair_onehot.shape());
  return out;
}

}  // namespace nfnoise::inline NFNOISE_ABI
