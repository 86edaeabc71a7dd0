#pragma once

#include "nfnoise/tensor.hpp"

namespace nfnoise::inline NFNOISE_ABI {

/// Monotone rational-quadratic spline on [-tail_bound, tail_bound], identity
/// outside. Boundary derivatives are fixed to 1 so the tails join smoothly.
struct SplineConfig {
  std::size_t bins = 8;
  real tail_bound = 3;
  real min_bin_width = real(1e-3);
  real min_bin_height = real(1e-3);
  real min_derivative = real(1e-3);

  /// Unnormalized parameters per element: K widths, K heights, K-1 interior
  /// derivatives.
  std::size_t params_per_element() const { return 3 * bins - 1; }
};

struct SplineOutput {
  Tensor y;
  Tensor logabsdet;  // same shape as the input, 0 in the tails
};

/// `params` has shape x.shape() + [3K-1]. All-zero parameters give the
/// identity. When `wh_scale` is defined it multiplies the unnormalized widths
/// and heights; it must broadcast against x.shape() + [K].
SplineOutput rq_spline_forward(const Tensor& x, const Tensor& params, const SplineConfig& config,
                               const Tensor& wh_scale = {});

/// Exact inverse through the per-bin quadratic. Not recorded.
Tensor rq_spline_inverse(const Tensor& y, const Tensor& params, const SplineConfig& config,
                         const Tensor& wh_scale = {});

}  // namespace nfnoise::inline NFNOISE_ABI
