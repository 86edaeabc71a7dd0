#include "nfnoise/layers.hpp"

#include <Eigen/QR>
#include <cmath>

#include "nfnoise/error.hpp"
#include "nfnoise/ops.hpp"

namespace nfnoise::inline NFNOISE_ABI {

namespace {

constexpr real kLarge = real(1e30);

std::size_t pixels(const Tensor& x) { return x.size(2) * x.size(3); }

Tensor per_sample(std::size_t n, const Tensor& scalar) { return Tensor::zeros({n}) + scalar; }

void check_clean(const Tensor& x, const ConditioningContext& ctx, const std::string& layer) {
  if (!ctx.clean.defined() || ctx.clean.shape() != x.shape()) {
    throw ShapeError(layer + ": clean patch shape " +
                     (ctx.clean.defined() ? shape_string(ctx.clean.shape()) : std::string("<none>")) +
                     " does not match input " + shape_string(x.shape()));
  }
}

void check_pairs(const ConditioningContext& ctx, std::size_t n_pairs, std::size_t batch, const std::string& layer) {
  if (!ctx.pair_onehot.defined() || ctx.pair_onehot.rank() != 2 || ctx.pair_onehot.size(1) != n_pairs ||
      ctx.pair_onehot.size(0) != batch) {
    throw ConfigError(layer + ": context pair encoding does not match " + std::to_string(n_pairs) + " cells");
  }
}

Tensor bounded_log_scale(const Tensor& raw) { return tanh(raw * (real{1} / kLogScaleBound)) * kLogScaleBound; }

Tensor rescale_input(const ConditioningContext& ctx) { return concat({ctx.camera_onehot, ctx.iso_onehot}, 1); }

}  // namespace

void check_flow_input(const Tensor& x, const char* layer) {
  if (x.rank() != 4 || x.size(1) != 3) {
    throw ShapeError(std::string(layer) + ": expected [N,3,H,W] input, got " + shape_string(x.shape()));
  }
}

// ---------------------------------------------------------------- Conv1x1

Conv1x1::Conv1x1(Rng& rng) {
  Eigen::Matrix3d a;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = rng.normal();
  Eigen::Matrix3d q = a.householderQr().householderQ();
  std::vector<real> values(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) values[i * 3 + j] = static_cast<real>(q(i, j));
  weight_ = Tensor({3, 3}, std::move(values));
  weight_.set_requires_grad(true);
}

FlowOutput Conv1x1::forward(const Tensor& x, const ConditioningContext&) const {
  check_flow_input(x, "conv1x1");
  auto lad = logabsdet(weight_) * static_cast<real>(pixels(x));
  return {channel_mix(x, weight_), per_sample(x.size(0), lad)};
}

Tensor Conv1x1::inverse(const Tensor& y, const ConditioningContext&) const {
  check_flow_input(y, "conv1x1");
  return channel_mix(y, matrix_inverse(weight_));
}

// ---------------------------------------------------- ConditionalConv1x1

ConditionalConv1x1::ConditionalConv1x1(std::size_t n_pairs) : delta_(make_parameter({n_pairs, 9})) {}

Tensor ConditionalConv1x1::matrices(const ConditioningContext& ctx) const {
  const std::size_t n = ctx.pair_onehot.size(0);
  return reshape(matmul(ctx.pair_onehot, delta_), {n, 3, 3}) + Tensor::eye(3);
}

FlowOutput ConditionalConv1x1::forward(const Tensor& x, const ConditioningContext& ctx) const {
  check_flow_input(x, "conditional_conv1x1");
  check_pairs(ctx, delta_.size(0), x.size(0), type());
  auto w = matrices(ctx);
  return {channel_mix(x, w), logabsdet(w) * static_cast<real>(pixels(x))};
}

Tensor ConditionalConv1x1::inverse(const Tensor& y, const ConditioningContext& ctx) const {
  check_flow_input(y, "conditional_conv1x1");
  check_pairs(ctx, delta_.size(0), y.size(0), type());
  return channel_mix(y, matrix_inverse(matrices(ctx)));
}

// ----------------------------------------------------- ConditionalLinear

ConditionalLinear::ConditionalLinear(std::size_t n_pairs, bool isotropic)
    : isotropic_(isotropic),
      log_scale_(make_parameter({n_pairs, isotropic ? std::size_t{1} : std::size_t{3}})),
      bias_(make_parameter({n_pairs, isotropic ? std::size_t{1} : std::size_t{3}})) {}

std::pair<Tensor, Tensor> ConditionalLinear::lookup(const ConditioningContext& ctx) const {
  const std::size_t n = ctx.pair_onehot.size(0);
  const std::size_t c = log_scale_.size(1);
  return {reshape(matmul(ctx.pair_onehot, log_scale_), {n, c, 1, 1}),
          reshape(matmul(ctx.pair_onehot, bias_), {n, c, 1, 1})};
}

FlowOutput ConditionalLinear::forward(const Tensor& x, const ConditioningContext& ctx) const {
  check_flow_input(x, "conditional_linear");
  check_pairs(ctx, log_scale_.size(0), x.size(0), type());
  auto [ls, t] = lookup(ctx);
  const real per_value = static_cast<real>(pixels(x) * (isotropic_ ? 3 : 1));
  return {x * exp(ls) + t, sum_per_sample(ls) * per_value};
}

Tensor ConditionalLinear::inverse(const Tensor& y, const ConditioningContext& ctx) const {
  check_flow_input(y, "conditional_linear");
  check_pairs(ctx, log_scale_.size(0), y.size(0), type());
  auto [ls, t] = lookup(ctx);
  return (y - t) * exp(-ls);
}

// ----------------------------------------------------------- AffineLayer

namespace {

std::size_t affine_in_channels(AffineKind kind) {
  switch (kind) {
    case AffineKind::unconditional: return 1;
    case AffineKind::conditional: return 4;
    case AffineKind::full:
    case AffineKind::clean_only: return 3;
  }
  return 0;
}

bool affine_rescaled(AffineKind kind) { return kind == AffineKind::conditional || kind == AffineKind::full; }

}  // namespace

AffineLayer::AffineLayer(AffineKind kind, std::size_t n_cam, std::size_t n_iso, AffineConfig config, Rng& rng)
    : kind_(kind),
      f_st_(affine_in_channels(kind),
            (kind == AffineKind::unconditional || kind == AffineKind::conditional) ? 4 : 6, config.net, rng) {
  if (affine_rescaled(kind)) f_r_.emplace(n_cam + n_iso, config.rescale_width, rng);
}

std::string AffineLayer::type() const {
  switch (kind_) {
    case AffineKind::unconditional: return "affine_coupling";
    case AffineKind::conditional: return "conditional_affine_coupling";
    case AffineKind::full: return "conditional_affine_full";
    case AffineKind::clean_only: return "conditional_affine_clean";
  }
  return "affine";
}

std::vector<NamedTensor> AffineLayer::parameters() const {
  std::vector<NamedTensor> out;
  f_st_.collect(out, "f_st.");
  if (f_r_) f_r_->collect(out, "f_r.");
  return out;
}

std::pair<Tensor, Tensor> AffineLayer::scale_and_bias(const Tensor& x, const ConditioningContext& ctx) const {
  Tensor input;
  switch (kind_) {
    case AffineKind::unconditional: input = slice(x, 1, 0, 1); break;
    case AffineKind::conditional:
      check_clean(x, ctx, type());
      input = concat({slice(x, 1, 0, 1), ctx.clean}, 1);
      break;
    case AffineKind::full:
    case AffineKind::clean_only:
      check_clean(x, ctx, type());
      input = ctx.clean;
      break;
  }
  const std::size_t parts = is_coupling() ? 2 : 3;
  auto h = f_st_(input);
  auto ls = bounded_log_scale(slice(h, 1, 0, parts));
  auto bias = slice(h, 1, parts, parts);
  if (f_r_) {
    auto r = (*f_r_)(rescale_input(ctx));
    ls = ls * reshape(r, {r.size(0), 1, 1, 1});
  }
  return {ls, bias};
}

FlowOutput AffineLayer::forward(const Tensor& x, const ConditioningContext& ctx) const {
  check_flow_input(x, "affine");
  auto [ls, bias] = scale_and_bias(x, ctx);
  Tensor y;
  if (is_coupling()) {
    y = concat({slice(x, 1, 0, 1), slice(x, 1, 1, 2) * exp(ls) + bias}, 1);
  } else {
    y = x * exp(ls) + bias;
  }
  return {y, sum_per_sample(ls)};
}

Tensor AffineLayer::inverse(const Tensor& y, const ConditioningContext& ctx) const {
  check_flow_input(y, "affine");
  auto [ls, bias] = scale_and_bias(y, ctx);
  if (is_coupling()) return concat({slice(y, 1, 0, 1), (slice(y, 1, 1, 2) - bias) * exp(-ls)}, 1);
  return (y - bias) * exp(-ls);
}

// -------------------------------------------------------- SplineCoupling

SplineCoupling::SplineCoupling(bool conditional, bool rescale, std::size_t n_cam, std::size_t n_iso,
                               SplineConfig spline, AffineConfig config, Rng& rng)
    : conditional_(conditional),
      spline_(spline),
      f_(conditional ? 4 : 1, 2 * spline.params_per_element(), config.net, rng) {
  if (rescale) f_r_.emplace(n_cam + n_iso, config.rescale_width, rng);
}

std::vector<NamedTensor> SplineCoupling::parameters() const {
  std::vector<NamedTensor> out;
  f_.collect(out, "f.");
  if (f_r_) f_r_->collect(out, "f_r.");
  return out;
}

std::pair<Tensor, Tensor> SplineCoupling::spline_params(const Tensor& x, const ConditioningContext& ctx) const {
  Tensor input = slice(x, 1, 0, 1);
  if (conditional_) {
    check_clean(x, ctx, type());
    input = concat({input, ctx.clean}, 1);
  }
  const std::size_t n = x.size(0), h = x.size(2), w = x.size(3);
  const std::size_t p = spline_.params_per_element();
  auto raw = reshape(f_(input), {n, 2, p, h, w});
  auto params = permute(raw, {0, 1, 3, 4, 2});
  Tensor scale;
  if (f_r_) {
    auto r = (*f_r_)(rescale_input(ctx));
    scale = reshape(r, {n, 1, 1, 1, 1});
  }
  return {params, scale};
}

FlowOutput SplineCoupling::forward(const Tensor& x, const ConditioningContext& ctx) const {
  check_flow_input(x, "spline_coupling");
  auto [params, scale] = spline_params(x, ctx);
  auto out = rq_spline_forward(slice(x, 1, 1, 2), params, spline_, scale);
  return {concat({slice(x, 1, 0, 1), out.y}, 1), sum_per_sample(out.logabsdet)};
}

Tensor SplineCoupling::inverse(const Tensor& y, const ConditioningContext& ctx) const {
  check_flow_input(y, "spline_coupling");
  auto [params, scale] = spline_params(y, ctx);
  return concat({slice(y, 1, 0, 1), rq_spline_inverse(slice(y, 1, 1, 2), params, spline_, scale)}, 1);
}

// ---------------------------------------------------------- InverseGamma

InverseGamma::InverseGamma(bool relative_to_clean, real gamma)
    : relative_(relative_to_clean), gamma_(make_parameter({1}, gamma)) {
  check_gamma();
}

void InverseGamma::check_gamma() const {
  if (!(gamma_.values()[0] > real{0})) throw DomainError("inverse_gamma: gamma must be positive");
}

FlowOutput InverseGamma::forward(const Tensor& x, const ConditioningContext& ctx) const {
  check_flow_input(x, "inverse_gamma");
  check_gamma();
  Tensor base;
  Tensor y;
  if (relative_) {
    check_clean(x, ctx, type());
    base = clamp(ctx.clean + x, kEps, kLarge);
    y = pow(base, gamma_) - pow(clamp(ctx.clean.detach(), kEps, kLarge), gamma_);
  } else {
    base = clamp(x, kEps, kLarge);
    y = pow(base, gamma_);
  }
  auto lad = log(gamma_) + (gamma_ + real{-1}) * log(base);
  return {y, sum_per_sample(lad)};
}

Tensor InverseGamma::inverse(const Tensor& y, const ConditioningContext& ctx) const {
  check_flow_input(y, "inverse_gamma");
  check_gamma();
  const double g = gamma_.values()[0];
  const auto yv = y.values();
  std::vector<real> out(yv.size());
  if (relative_) {
    check_clean(y, ctx, type());
    const auto cv = ctx.clean.values();
    for (std::size_t i = 0; i < yv.size(); ++i) {
      const double c = std::max<double>(cv[i], kEps);
      const double lifted = std::max<double>(yv[i] + std::pow(c, g), std::pow(kEps, g));
      out[i] = static_cast<real>(std::pow(lifted, 1.0 / g) - cv[i]);
    }
  } else {
    for (std::size_t i = 0; i < yv.size(); ++i) {
      out[i] = static_cast<real>(std::pow(std::max<double>(yv[i], std::pow(kEps, g)), 1.0 / g));
    }
  }
  return Tensor(y.shape(), std::move(out));
}

// ------------------------------------------------------- SignalDependent

real SignalDependent::raw_for(real beta) {
  return static_cast<real>(std::log(std::expm1(static_cast<double>(beta))));
}

SignalDependent::SignalDependent(std::size_t n_pairs)
    : beta1_raw_(make_parameter({n_pairs, 3}, raw_for(real(1e-2)))),
      beta2_raw_(make_parameter({n_pairs, 3}, raw_for(1))) {}

Tensor SignalDependent::variance(const ConditioningContext& ctx) const {
  const std::size_t n = ctx.pair_onehot.size(0);
  auto b1 = reshape(softplus(matmul(ctx.pair_onehot, beta1_raw_)), {n, 3, 1, 1});
  auto b2 = reshape(softplus(matmul(ctx.pair_onehot, beta2_raw_)), {n, 3, 1, 1});
  auto var = b1 * ctx.clean + b2;
  for (real v : var.values()) {
    if (!(v > real{0})) throw DomainError("signal_dependent: non-positive realized variance");
  }
  return var;
}

FlowOutput SignalDependent::forward(const Tensor& x, const ConditioningContext& ctx) const {
  check_flow_input(x, "signal_dependent");
  check_clean(x, ctx, type());
  check_pairs(ctx, beta1_raw_.size(0), x.size(0), type());
  auto var = variance(ctx);
  return {x * pow(var, real{-0.5}), sum_per_sample(log(var)) * real{-0.5}};
}

Tensor SignalDependent::inverse(const Tensor& y, const ConditioningContext& ctx) const {
  check_flow_input(y, "signal_dependent");
  check_clean(y, ctx, type());
  check_pairs(ctx, beta1_raw_.size(0), y.size(0), type());
  return y * sqrt(variance(ctx));
}

// ------------------------------------------------------------------ Gain

Gain::Gain(std::size_t n_iso) : log_gain_(make_parameter({n_iso})) {}

FlowOutput Gain::forward(const Tensor& x, const ConditioningContext& ctx) const {
  check_flow_input(x, "gain");
  const std::size_t n = x.size(0);
  if (ctx.iso_onehot.size(1) != log_gain_.size(0)) throw ConfigError("gain: ISO encoding size mismatch");
  auto lg = matmul(ctx.iso_onehot, reshape(log_gain_, {log_gain_.size(0), 1}));  // [N,1]
  return {x * exp(reshape(lg, {n, 1, 1, 1})), reshape(lg, {n}) * static_cast<real>(3 * pixels(x))};
}

Tensor Gain::inverse(const Tensor& y, const ConditioningContext& ctx) const {
  check_flow_input(y, "gain");
  if (ctx.iso_onehot.size(1) != log_gain_.size(0)) throw ConfigError("gain: ISO encoding size mismatch");
  auto lg = matmul(ctx.iso_onehot, reshape(log_gain_, {log_gain_.size(0), 1}));
  return y * exp(-reshape(lg, {y.size(0), 1, 1, 1}));
}

}  // namespace nfnoise::inline NFNOISE_ABI
