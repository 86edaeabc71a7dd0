#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nfnoise/checkpoint.hpp"
#include "nfnoise/conditioners.hpp"
#include "nfnoise/context.hpp"
#include "nfnoise/spline.hpp"
#include "nfnoise/tensor.hpp"

namespace nfnoise::inline NFNOISE_ABI {

// All layers act on batches x of shape [N,3,H,W]; forward maps data to the
// base space and returns the per-sample log|det| of that map.

struct FlowOutput {
  Tensor y;
  Tensor logdet;  // [N]
};

class FlowLayer {
 public:
  virtual ~FlowLayer() = default;
  /// Stable name used in model specs and checkpoint keys.
  virtual std::string type() const = 0;
  virtual FlowOutput forward(const Tensor& x, const ConditioningContext& ctx) const = 0;
  virtual Tensor inverse(const Tensor& y, const ConditioningContext& ctx) const = 0;
  /// Handles to the trainable tensors; updating their values updates the layer.
  virtual std::vector<NamedTensor> parameters() const = 0;
};

/// Bound applied to raw log-scales: ls = a * tanh(raw / a).
inline constexpr real kLogScaleBound = 5;

/// Invertible 1x1 convolution with a shared 3x3 matrix.
class Conv1x1 final : public FlowLayer {
 public:
  /// Starts from a random orthogonal matrix.
  explicit Conv1x1(Rng& rng);
  std::string type() const override { return "conv1x1"; }
  FlowOutput forward(const Tensor& x, const ConditioningContext& ctx) const override;
  Tensor inverse(const Tensor& y, const ConditioningContext& ctx) const override;
  std::vector<NamedTensor> parameters() const override { return {{"weight", weight_}}; }
  Tensor& weight() { return weight_; }

 private:
  Tensor weight_;
};

/// 1x1 convolution whose matrix is I + D[pair], with D a per-(camera, ISO)
/// table starting at zero. Gives a full 3x3 channel covariance per cell.
class ConditionalConv1x1 final : public FlowLayer {
 public:
  explicit ConditionalConv1x1(std::size_t n_pairs);
  std::string type() const override { return "conditional_conv1x1"; }
  FlowOutput forward(const Tensor& x, const ConditioningContext& ctx) const override;
  Tensor inverse(const Tensor& y, const ConditioningContext& ctx) const override;
  std::vector<NamedTensor> parameters() const override { return {{"delta", delta_}}; }
  Tensor& delta() { return delta_; }

 private:
  Tensor matrices(const ConditioningContext& ctx) const;
  Tensor delta_;  // [P,9]
};

/// Conditional linear flow: y = x * exp(ls[pair]) + t[pair], one value per
/// channel, or one shared value for all channels when `isotropic`.
class ConditionalLinear final : public FlowLayer {
 public:
  ConditionalLinear(std::size_t n_pairs, bool isotropic);
  std::string type() const override { return isotropic_ ? "conditional_linear_iso" : "conditional_linear"; }
  FlowOutput forward(const Tensor& x, const ConditioningContext& ctx) const override;
  Tensor inverse(const Tensor& y, const ConditioningContext& ctx) const override;
  std::vector<NamedTensor> parameters() const override { return {{"log_scale", log_scale_}, {"bias", bias_}}; }
  Tensor& log_scale() { return log_scale_; }
  Tensor& bias() { return bias_; }

 private:
  std::pair<Tensor, Tensor> lookup(const ConditioningContext& ctx) const;
  bool isotropic_;
  Tensor log_scale_;  // [P,C]
  Tensor bias_;       // [P,C]
};

enum class AffineKind {
  unconditional,  // coupling, f_st(x^A)
  conditional,    // coupling, f_st(x^A, clean), rescaled by f_r(c, g)
  full,           // all channels, f_st(clean), rescaled by f_r(c, g)
  clean_only,     // all channels, f_st(clean)
};

struct AffineConfig {
  ConvNetConfig net;
  std::size_t rescale_width = 16;
};

/// Affine coupling family: y = x * exp(LS * r) + B on the transformed part.
/// Couplings keep channel 0 fixed and transform channels 1 and 2.
class AffineLayer final : public FlowLayer {
 public:
  AffineLayer(AffineKind kind, std::size_t n_cam, std::size_t n_iso, AffineConfig config, Rng& rng);
  std::string type() const override;
  FlowOutput forward(const Tensor& x, const ConditioningContext& ctx) const override;
  Tensor inverse(const Tensor& y, const ConditioningContext& ctx) const override;
  std::vector<NamedTensor> parameters() const override;

  AffineKind kind() const { return kind_; }
  ConvNet& f_st() { return f_st_; }
  /// Null for kinds without a rescale path.
  ResidualNet* f_r() { return f_r_ ? &*f_r_ : nullptr; }

 private:
  bool is_coupling() const { return kind_ == AffineKind::unconditional || kind_ == AffineKind::conditional; }
  /// Log-scale (rescaled) and bias for the transformed channels.
  std::pair<Tensor, Tensor> scale_and_bias(const Tensor& x, const ConditioningContext& ctx) const;

  AffineKind kind_;
  ConvNet f_st_;
  std::optional<ResidualNet> f_r_;
};

/// Rational-quadratic spline coupling. The conditional form feeds the clean
/// patch to the conditioner and optionally rescales widths and heights by
/// f_r(c, g).
class SplineCoupling final : public FlowLayer {
 public:
  SplineCoupling(bool conditional, bool rescale, std::size_t n_cam, std::size_t n_iso, SplineConfig spline,
                 AffineConfig config, Rng& rng);
  std::string type() const override { return conditional_ ? "conditional_spline_coupling" : "spline_coupling"; }
  FlowOutput forward(const Tensor& x, const ConditioningContext& ctx) const override;
  Tensor inverse(const Tensor& y, const ConditioningContext& ctx) const override;
  std::vector<NamedTensor> parameters() const override;

  ConvNet& f() { return f_; }
  ResidualNet* f_r() { return f_r_ ? &*f_r_ : nullptr; }
  const SplineConfig& spline() const { return spline_; }

 private:
  std::pair<Tensor, Tensor> spline_params(const Tensor& x, const ConditioningContext& ctx) const;

  bool conditional_;
  SplineConfig spline_;
  ConvNet f_;
  std::optional<ResidualNet> f_r_;
};

/// Learnable power map. With `relative_to_clean` the noise n is mapped to
/// (I + n)^g - I^g, i.e. the noisy and clean images are linearized jointly;
/// otherwise y = x^g. Bases are clamped to at least 1e-6.
class InverseGamma final : public FlowLayer {
 public:
  explicit InverseGamma(bool relative_to_clean, real gamma = real(2.2));
  std::string type() const override { return "inverse_gamma"; }
  FlowOutput forward(const Tensor& x, const ConditioningContext& ctx) const override;
  Tensor inverse(const Tensor& y, const ConditioningContext& ctx) const override;
  std::vector<NamedTensor> parameters() const override { return {{"gamma", gamma_}}; }
  Tensor& gamma() { return gamma_; }

  static constexpr real kEps = real(1e-6);

 private:
  void check_gamma() const;
  bool relative_;
  Tensor gamma_;  // [1]
};

/// Signal-dependent layer: y = x / sqrt(b1 * I + b2) with per-(camera, ISO)
/// per-channel b1 = softplus(u1), b2 = softplus(u2), I the clean intensity.
class SignalDependent final : public FlowLayer {
 public:
  explicit SignalDependent(std::size_t n_pairs);
  std::string type() const override { return "signal_dependent"; }
  FlowOutput forward(const Tensor& x, const ConditioningContext& ctx) const override;
  Tensor inverse(const Tensor& y, const ConditioningContext& ctx) const override;
  std::vector<NamedTensor> parameters() const override { return {{"beta1_raw", beta1_raw_}, {"beta2_raw", beta2_raw_}}; }
  Tensor& beta1_raw() { return beta1_raw_; }
  Tensor& beta2_raw() { return beta2_raw_; }
  /// Unconstrained value whose softplus equals `beta`.
  static real raw_for(real beta);

 private:
  Tensor variance(const ConditioningContext& ctx) const;  // [N,3,H,W]
  Tensor beta1_raw_;  // [P,3]
  Tensor beta2_raw_;  // [P,3]
};

/// Gain layer: y = x * exp(g[iso]) with one learned log-gain per ISO.
class Gain final : public FlowLayer {
 public:
  explicit Gain(std::size_t n_iso);
  std::string type() const override { return "gain"; }
  FlowOutput forward(const Tensor& x, const ConditioningContext& ctx) const override;
  Tensor inverse(const Tensor& y, const ConditioningContext& ctx) const override;
  std::vector<NamedTensor> parameters() const override { return {{"log_gain", log_gain_}}; }
  Tensor& log_gain() { return log_gain_; }

 private:
  Tensor log_gain_;  // [n_iso]
};

/// Throws ShapeError unless x is [N,3,H,W].
void check_flow_input(const Tensor& x, const char* layer);

}  // namespace nfnoise::inline NFNOISE_ABI
