#include "nfnoise/conditioners.hpp"

#include <cmath>

#include "nfnoise/ops.hpp"

namespace nfnoise::inline NFNOISE_ABI {

Tensor init_uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  auto t = Tensor::uniform(std::move(shape), rng, -bound, bound);
  t.set_requires_grad(true);
  return t;
}

Tensor make_parameter(Shape shape, real value) {
  Tensor t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

ConvNet::ConvNet(std::size_t in_channels, std::size_t out_channels, ConvNetConfig config, Rng& rng) {
  const std::size_t k = config.kernel;
  const std::size_t width = config.width;
  const std::size_t fan0 = in_channels * k * k;
  const std::size_t fan1 = width * k * k;
  w_[0] = init_uniform_fan_in({width, in_channels, k, k}, fan0, rng);
  b_[0] = init_uniform_fan_in({width}, fan0, rng);
  w_[1] = init_uniform_fan_in({width, width, k, k}, fan1, rng);
  b_[1] = init_uniform_fan_in({width}, fan1, rng);
  w_[2] = make_parameter({out_channels, width, k, k});
  b_[2] = make_parameter({out_channels});
}

Tensor ConvNet::operator()(const Tensor& x) const {
  auto h = relu(conv2d(x, w_[0], b_[0]));
  h = relu(conv2d(h, w_[1], b_[1]));
  return conv2d(h, w_[2], b_[2]);
}

void ConvNet::collect(std::vector<NamedTensor>& out, const std::string& prefix) const {
  for (int i = 0; i < 3; ++i) {
    out.push_back({prefix + "conv" + std::to_string(i) + ".weight", w_[i]});
    out.push_back({prefix + "conv" + std::to_string(i) + ".bias", b_[i]});
  }
}

ResidualNet::ResidualNet(std::size_t in_features, std::size_t width, Rng& rng)
    : in_w_(init_uniform_fan_in({width, in_features}, in_features, rng)),
      in_b_(init_uniform_fan_in({width}, in_features, rng)),
      res_w_(init_uniform_fan_in({width, width}, width, rng)),
      res_b_(init_uniform_fan_in({width}, width, rng)),
      head_w_(make_parameter({1, width})),
      head_b_(make_parameter({1}, 1)) {}

Tensor ResidualNet::operator()(const Tensor& x) const {
  auto h = relu(dense(x, in_w_, in_b_));
  h = h + relu(dense(h, res_w_, res_b_));
  auto r = dense(h, head_w_, head_b_);  // [N,1]
  return reshape(r, {r.size(0)});
}

void ResidualNet::collect(std::vector<NamedTensor>& out, const std::string& prefix) const {
  out.push_back({prefix + "in.weight", in_w_});
  out.push_back({prefix + "in.bias", in_b_});
  out.push_back({prefix + "res.weight", res_w_});
  out.push_back({prefix + "res.bias", res_b_});
  out.push_back({prefix + "head.weight", head_w_});
  out.push_back({prefix + "head.bias", head_b_});
}

}  // namespace nfnoise::inline NFNOISE_ABI
