#pragma once

#include <span>
#include <vector>

#include "nfnoise/tensor.hpp"

namespace nfnoise::inline NFNOISE_ABI {

// Differentiable primitives. Binary element-wise ops broadcast numpy-style:
// shapes are right-aligned and dimensions of size 1 stretch.

Shape broadcast_shape(const Shape& a, const Shape& b);

enum class ElementwiseOp { add, sub, mul, div, exp, log, pow, tanh, relu, negate };

/// Dispatch by op tag. Unary ops ignore `b`; pow takes its exponent from `b`.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Throws DomainError when any divisor is zero.
Tensor div(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, real b);
Tensor mul(const Tensor& a, real b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, real b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, real b) { return add(a, -b); }
inline Tensor operator*(const Tensor& a, real b) { return mul(a, b); }
inline Tensor operator*(real a, const Tensor& b) { return mul(b, a); }

Tensor neg(const Tensor& x);
inline Tensor operator-(const Tensor& x) { return neg(x); }
Tensor exp(const Tensor& x);
/// Throws DomainError for non-positive inputs.
Tensor log(const Tensor& x);
/// x^p. Negative bases need an integral exponent; zero bases a positive one.
Tensor pow(const Tensor& x, real p);
/// Element-wise x^p with a broadcast (possibly learnable) exponent; x > 0.
Tensor pow(const Tensor& x, const Tensor& p);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Gradient passes where lo <= x <= hi.
Tensor clamp(const Tensor& x, real lo, real hi);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::vector<std::size_t> axes, bool keepdim = false);
Tensor mean(const Tensor& x);
/// Sum over every axis except the first: [N, ...] -> [N].
Tensor sum_per_sample(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor slice(const Tensor& x, std::size_t dim, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t dim);

/// [n,k] x [k,m] -> [n,m].
Tensor matmul(const Tensor& a, const Tensor& b);
/// y = x w^T + b for x of shape [n] or [batch, n], w [m, n], b [m] (optional).
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);
/// Stride-1 convolution with zero "same" padding. x is [C_in,H,W] or
/// [N,C_in,H,W]; w is [C_out,C_in,kH,kW] with odd kernel sizes; b is [C_out]
/// or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);
/// Applies a C x C matrix to the channel vector of every pixel. w is [C,C]
/// (shared) or [N,C,C] (one per sample); x is [N,C,H,W] or [C,H,W].
Tensor channel_mix(const Tensor& x, const Tensor& w);
/// log|det w| for [C,C] (-> scalar) or [N,C,C] (-> [N]). Throws DomainError
/// when |det| <= 1e-12.
Tensor logabsdet(const Tensor& w);
/// Plain matrix inverse of [C,C] or [N,C,C]; not recorded.
Tensor matrix_inverse(const Tensor& w);

/// Inclusive cumulative sum along the last axis.
Tensor cumsum_last(const Tensor& x);
/// x [..., K], one index per leading position -> [...].
Tensor gather_last(const Tensor& x, std::span<const std::size_t> index);
Tensor softmax_last(const Tensor& x);

/// Throws NumericError naming `where` if any value is NaN or Inf.
void require_finite(const Tensor& t, const std::string& where);
bool all_finite(const Tensor& t);

}  // namespace nfnoise::inline NFNOISE_ABI
