#include "nfnoise/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "nfnoise/error.hpp"

namespace nfnoise::inline NFNOISE_ABI {

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_sequence = 0;

const detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) throw Error("use of an undefined tensor");
  return *impl;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<real>& detail::TensorImpl::grad_buffer() {
  if (grad.size() != data.size()) grad.assign(data.size(), real{0});
  return grad;
}

Tensor::Tensor(Shape shape, real fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<real> values) : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_string(shape) + " cannot hold " +
                     std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(real value) { return Tensor(Shape{}, std::vector<real>{value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, real stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.impl_->data) v = static_cast<real>(rng.normal()) * stddev;
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, real lo, real hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.impl_->data) v = static_cast<real>(rng.uniform(lo, hi));
  return t;
}

Tensor Tensor::eye(std::size_t n) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t.impl_->data[i * n + i] = real{1};
  return t;
}

Tensor Tensor::from_impl(std::shared_ptr<detail::TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::size(std::size_t dim) const {
  const auto& s = shape();
  if (dim >= s.size()) throw ShapeError("dimension index out of range");
  return s[dim];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const real> Tensor::values() const { return checked(impl_).data; }

std::span<real> Tensor::mutable_values() {
  checked(impl_);
  if (impl_->grad_fn) throw Error("cannot mutate the output of a recorded operation");
  return impl_->data;
}

real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on a tensor with " + std::to_string(numel()) + " values");
  return impl_->data[0];
}

real Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("at(): index rank mismatch");
  std::size_t flat = 0;
  std::size_t k = 0;
  for (auto i : index) {
    if (i >= s[k]) throw ShapeError("at(): index out of range");
    flat = flat * s[k] + i;
    ++k;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  checked(impl_);
  if (impl_->grad_fn && !on) throw Error("cannot clear requires_grad on a recorded result");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return checked(impl_).grad_fn == nullptr; }

std::span<const real> Tensor::grad() const {
  checked(impl_);
  return impl_->grad_buffer();
}

std::span<real> Tensor::mutable_grad() {
  checked(impl_);
  return impl_->grad_buffer();
}

void Tensor::zero_grad() {
  checked(impl_);
  std::fill(impl_->grad.begin(), impl_->grad.end(), real{0});
}

Tensor Tensor::detach() const {
  const auto& src = checked(impl_);
  return Tensor(src.shape, src.data);
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.impl_->requires_grad = impl_->requires_grad && impl_->grad_fn == nullptr;
  return t;
}

void Tensor::backward() const { nfnoise::backward(*this); }

std::ostream& operator<<(std::ostream& os, const Tensor& t) {
  if (!t.defined()) return os << "Tensor(undefined)";
  os << "Tensor" << shape_string(t.shape()) << '{';
  const auto v = t.values();
  const std::size_t shown = std::min<std::size_t>(v.size(), 16);
  for (std::size_t i = 0; i < shown; ++i) os << (i ? ", " : "") << v[i];
  if (shown < v.size()) os << ", ...";
  return os << '}';
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_mode_enabled() { return t_grad_enabled; }

Tensor detail::make_result(Shape shape, std::vector<real> data, const char* op,
                           std::vector<Tensor> inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  if (!t_grad_enabled) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!needs) return out;
  auto node = std::make_shared<Node>();
  node->sequence = ++t_sequence;
  node->op = op;
  node->inputs.reserve(inputs.size());
  for (auto& in : inputs) node->inputs.push_back(in.impl());
  node->backward = std::move(backward);
  out.impl()->grad_fn = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Collect every recorded result reachable from the loss.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<const detail::TensorImpl*> seen;
  std::vector<detail::TensorImpl*> stack{loss.impl().get()};
  while (!stack.empty()) {
    auto* t = stack.back();
    stack.pop_back();
    if (!t->grad_fn || !seen.insert(t).second) continue;
    order.push_back(t);
    for (auto& in : t->grad_fn->inputs) {
      if (in && in->grad_fn && !seen.count(in.get())) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    return a->grad_fn->sequence > b->grad_fn->sequence;
  });

  loss.impl()->grad_buffer()[0] = real{1};
  std::vector<std::vector<real>*> accumulators;
  for (auto* t : order) {
    if (t->grad.empty()) continue;  // no gradient reached this node
    const auto& node = *t->grad_fn;
    accumulators.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const auto& in = node.inputs[i];
      if (in && in->requires_grad) accumulators[i] = &in->grad_buffer();
    }
    node.backward(t->grad, accumulators);
    // Intermediate gradients are not needed once propagated.
    std::vector<real>().swap(t->grad);
  }
}

}  // namespace nfnoise::inline NFNOISE_ABI
