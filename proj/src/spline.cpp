#include "nfnoise/spline.hpp"

#include <algorithm>
#include <cmath>

#include "nfnoise/error.hpp"
#include "nfnoise/ops.hpp"

namespace nfnoise::inline NFNOISE_ABI {

namespace {

struct Knots {
  Tensor cum_widths;   // [..., K+1]
  Tensor cum_heights;  // [..., K+1]
  Tensor widths;       // [..., K]
  Tensor heights;      // [..., K]
  Tensor derivatives;  // [..., K+1]
};

Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s;
  out.back() = last;
  return out;
}

// Normalizes unnormalized bin sizes into knot positions spanning [-T, T].
std::pair<Tensor, Tensor> knot_positions(const Tensor& raw, std::size_t bins, real min_size, real bound) {
  const std::size_t last = raw.rank() - 1;
  auto sizes = softmax_last(raw) * (real{1} - min_size * static_cast<real>(bins)) + min_size;
  auto inner = slice(cumsum_last(sizes), last, 0, bins - 1) * (real{2} * bound) + (-bound);
  auto cum = concat({Tensor::full(with_last(raw.shape(), 1), -bound), inner,
                     Tensor::full(with_last(raw.shape(), 1), bound)},
                    last);
  auto width = slice(cum, last, 1, bins) - slice(cum, last, 0, bins);
  return {cum, width};
}

Knots build_knots(const Tensor& x, const Tensor& params, const SplineConfig& cfg, const Tensor& wh_scale) {
  const std::size_t k = cfg.bins;
  if (k < 2) throw ConfigError("spline needs at least two bins");
  Shape expected = x.shape();
  expected.push_back(cfg.params_per_element());
  if (params.shape() != expected) {
    throw ShapeError("spline parameters " + shape_string(params.shape()) + " do not match " + shape_string(expected));
  }
  if (!all_finite(params)) throw NumericError("spline: non-finite bin parameters");
  const std::size_t last = params.rank() - 1;
  auto raw_w = slice(params, last, 0, k);
  auto raw_h = slice(params, last, k, k);
  auto raw_d = slice(params, last, 2 * k, k - 1);
  if (wh_scale.defined()) {
    raw_w = raw_w * wh_scale;
    raw_h = raw_h * wh_scale;
  }
  Knots knots;
  std::tie(knots.cum_widths, knots.widths) = knot_positions(raw_w, k, cfg.min_bin_width, cfg.tail_bound);
  std::tie(knots.cum_heights, knots.heights) = knot_positions(raw_h, k, cfg.min_bin_height, cfg.tail_bound);
  // Offset so that a zero parameter yields derivative exactly 1.
  const real offset = static_cast<real>(std::log(std::expm1(1.0 - static_cast<double>(cfg.min_derivative))));
  auto inner = softplus(raw_d + offset) + cfg.min_derivative;
  auto ones = Tensor::ones(with_last(raw_d.shape(), 1));
  knots.derivatives = concat({ones, inner, ones}, last);
  return knots;
}

// Largest bin index whose left knot is <= v, clamped to [0, K-1].
std::size_t find_bin(const real* knots, std::size_t bins, real v) {
  const real* end = knots + bins + 1;
  auto it = std::upper_bound(knots, end, v);
  const auto idx = static_cast<std::ptrdiff_t>(it - knots) - 1;
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(bins) - 1));
}

}  // namespace

SplineOutput rq_spline_forward(const Tensor& x, const Tensor& params, const SplineConfig& cfg, const Tensor& wh_scale) {
  const std::size_t k = cfg.bins;
  const real bound = cfg.tail_bound;
  auto knots = build_knots(x, params, cfg, wh_scale);

  const auto xv = x.values();
  const std::size_t n = xv.size();
  std::vector<std::size_t> idx(n), idx_next(n);
  std::vector<real> inside(n);
  const auto cw = knots.cum_widths.values();
  for (std::size_t i = 0; i < n; ++i) {
    inside[i] = (xv[i] > -bound && xv[i] < bound) ? real{1} : real{0};
    const real clamped = std::clamp(xv[i], -bound, bound);
    idx[i] = find_bin(cw.data() + i * (k + 1), k, clamped);
    idx_next[i] = idx[i] + 1;
  }
  const Tensor mask(x.shape(), std::move(inside));

  auto xin = clamp(x, -bound, bound);
  auto in_cw = gather_last(knots.cum_widths, idx);
  auto in_w = gather_last(knots.widths, idx);
  auto in_ch = gather_last(knots.cum_heights, idx);
  auto in_h = gather_last(knots.heights, idx);
  auto in_d = gather_last(knots.derivatives, idx);
  auto in_d1 = gather_last(knots.derivatives, idx_next);
  auto delta = in_h / in_w;

  auto theta = (xin - in_cw) / in_w;
  auto one_minus = add(neg(theta), real{1});
  auto theta_om = theta * one_minus;
  auto theta_sq = square(theta);
  auto numerator = in_h * (delta * theta_sq + in_d * theta_om);
  auto denominator = delta + (in_d + in_d1 - delta * real{2}) * theta_om;
  auto y_in = in_ch + numerator / denominator;
  auto deriv_num = square(delta) * (in_d1 * theta_sq + delta * theta_om * real{2} + in_d * square(one_minus));
  auto lad = log(deriv_num) - log(denominator) * real{2};

  auto outside = add(neg(mask), real{1});
  SplineOutput out;
  out.y = mask * y_in + outside * x;
  out.logabsdet = mask * lad;
  return out;
}

Tensor rq_spline_inverse(const Tensor& y, const Tensor& params, const SplineConfig& cfg, const Tensor& wh_scale) {
  NoGradGuard guard;
  const std::size_t k = cfg.bins;
  const double bound = cfg.tail_bound;
  auto knots = build_knots(y, params, cfg, wh_scale);
  const auto yv = y.values();
  const auto cw = knots.cum_widths.values();
  const auto ch = knots.cum_heights.values();
  const auto wd = knots.widths.values();
  const auto ht = knots.heights.values();
  const auto dv = knots.derivatives.values();
  std::vector<real> out(yv.size());
  for (std::size_t i = 0; i < yv.size(); ++i) {
    const double v = yv[i];
    if (!(v > -bound && v < bound)) {
      out[i] = yv[i];
      continue;
    }
    const std::size_t b = find_bin(ch.data() + i * (k + 1), k, yv[i]);
    const double in_cw = cw[i * (k + 1) + b];
    const double in_ch = ch[i * (k + 1) + b];
    const double in_w = wd[i * k + b];
    const double in_h = ht[i * k + b];
    const double d0 = dv[i * (k + 1) + b];
    const double d1 = dv[i * (k + 1) + b + 1];
    const double delta = in_h / in_w;
    const double dy = v - in_ch;
    const double s = d0 + d1 - 2.0 * delta;
    const double a = in_h * (delta - d0) + dy * s;
    const double bq = in_h * d0 - dy * s;
    const double c = -delta * dy;
    const double disc = std::max(0.0, bq * bq - 4.0 * a * c);
    const double root = (2.0 * c) / (-bq - std::sqrt(disc));
    out[i] = static_cast<real>(root * in_w + in_cw);
  }
  return Tensor(y.shape(), std::move(out));
}

}  // namespace nfnoise::inline NFNOISE_ABI
