#pragma once

#include <string>
#include <vector>

#include "nfnoise/checkpoint.hpp"
#include "nfnoise/tensor.hpp"

namespace nfnoise::inline NFNOISE_ABI {

struct ConvNetConfig {
  std::size_t width = 32;
  std::size_t kernel = 3;
};

/// f_{s,t}: three same-padded convolutions with ReLU between them. The
/// output head starts at zero so coupling layers start as the identity.
class ConvNet {
 public:
  ConvNet(std::size_t in_channels, std::size_t out_channels, ConvNetConfig config, Rng& rng);

  /// [N,in,H,W] -> [N,out,H,W]
  Tensor operator()(const Tensor& x) const;

  void collect(std::vector<NamedTensor>& out, const std::string& prefix) const;
  Tensor& head_weight() { return w_[2]; }
  Tensor& head_bias() { return b_[2]; }
  std::size_t in_channels() const { return w_[0].size(1); }

 private:
  Tensor w_[3];
  Tensor b_[3];
};

/// f_r: dense layer, one residual dense block, scalar head. Maps the
/// concatenated camera and ISO encodings to a per-sample rescale factor.
/// The head weights start at zero and its bias at one, so r = 1 initially.
class ResidualNet {
 public:
  ResidualNet(std::size_t in_features, std::size_t width, Rng& rng);

  /// [N,in] -> [N]
  Tensor operator()(const Tensor& x) const;

  void collect(std::vector<NamedTensor>& out, const std::string& prefix) const;
  Tensor& head_weight() { return head_w_; }
  Tensor& head_bias() { return head_b_; }

 private:
  Tensor in_w_, in_b_, res_w_, res_b_, head_w_, head_b_;
};

/// Weight tensor with entries uniform in +-1/sqrt(fan_in), as a fresh leaf
/// that requires gradients.
Tensor init_uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng);

/// Leaf parameter with the given constant value.
Tensor make_parameter(Shape shape, real value = 0);

}  // namespace nfnoise::inline NFNOISE_ABI
