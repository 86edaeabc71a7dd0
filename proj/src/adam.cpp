#include "nfnoise/adam.hpp"

#include <cmath>

#include "nfnoise/error.hpp"

namespace nfnoise::inline NFNOISE_ABI {

AdamState make_adam_state(std::span<const Tensor> params, AdamConfig config) {
  AdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.m.emplace_back(p.numel(), real{0});
    state.v.emplace_back(p.numel(), real{0});
  }
  return state;
}

void adam_step(std::span<Tensor> params, std::span<const std::span<const real>> grads, AdamState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].numel();
    if (grads[i].size() != n || state.m[i].size() != n || state.v[i].size() != n) {
      throw ShapeError("adam_step: size mismatch for parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(static_cast<double>(c.beta1), t);
  const double correct2 = 1.0 - std::pow(static_cast<double>(c.beta2), t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto g = grads[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      m[k] = c.beta1 * m[k] + (real{1} - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (real{1} - c.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correct1;
      const double v_hat = v[k] / correct2;
      values[k] -= static_cast<real>(c.lr * m_hat / (std::sqrt(v_hat) + c.eps));
    }
  }
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  std::vector<std::span<const real>> grads;
  grads.reserve(params.size());
  for (auto& p : params) grads.push_back(p.grad());
  adam_step(params, grads, state);
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double total = 0.0;
  for (auto& p : params) {
    for (real g : p.grad()) total += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(total);
  if (norm > max_norm && norm > 0.0) {
    const auto scale = static_cast<real>(max_norm / norm);
    for (auto& p : params) {
      for (auto& g : p.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

}  // namespace nfnoise::inline NFNOISE_ABI
