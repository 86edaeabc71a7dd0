#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nfnoise/tensor.hpp"

namespace nfnoise::inline NFNOISE_ABI {

struct AdamConfig {
  real lr = real(1e-3);
  real beta1 = real(0.9);
  real beta2 = real(0.999);
  real eps = real(1e-8);
};

/// Moment estimates for one parameter list. m[i] and v[i] match params[i].
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<real>> m;
  std::vector<std::vector<real>> v;
};

AdamState make_adam_state(std::span<const Tensor> params, AdamConfig config = {});

/// One bias-corrected Adam update using explicit gradients. Throws
/// ShapeError when the state or gradients do not match the parameters.
void adam_step(std::span<Tensor> params, std::span<const std::span<const real>> grads, AdamState& state);

/// Same, reading each parameter's accumulated gradient.
void adam_step(std::span<Tensor> params, AdamState& state);

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before rescaling.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace nfnoise::inline NFNOISE_ABI
