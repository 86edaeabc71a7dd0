#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nfnoise/real.hpp"
#include "nfnoise/rng.hpp"

namespace nfnoise::inline NFNOISE_ABI {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  std::vector<real>& grad_buffer();
};

/// Accumulates the gradient of the node output into its inputs. `inputs[i]`
/// is null when input i does not need a gradient.
using BackwardFn =
    std::function<void(std::span<const real> grad_out, std::span<std::vector<real>*> inputs)>;

/// One recorded primitive. Nodes are numbered in recording order; backward
/// replays them in reverse of that order.
struct Node {
  std::uint64_t sequence = 0;
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode differentiation.
///
/// Tensors are cheap handles: copies share storage. Values of tensors that
/// take part in a graph are never mutated in place; parameters (leaves with
/// requires_grad) are updated only by the optimizer between graph builds.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = real{0});
  Tensor(Shape shape, std::vector<real> values);

  static Tensor scalar(real value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), real{0}); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), real{1}); }
  static Tensor full(Shape shape, real value) { return Tensor(std::move(shape), value); }
  static Tensor randn(Shape shape, Rng& rng, real stddev = real{1});
  static Tensor uniform(Shape shape, Rng& rng, real lo, real hi);
  static Tensor eye(std::size_t n);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size(std::size_t dim) const;
  std::size_t numel() const;

  std::span<const real> values() const;
  /// Write access for leaves (initialization, optimizer). Throws if the
  /// tensor was produced by a recorded operation.
  std::span<real> mutable_values();
  real item() const;
  real at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  /// Accumulated gradient; all zeros if nothing has flowed here.
  std::span<const real> grad() const;
  std::span<real> mutable_grad();
  void zero_grad();

  /// Reverse pass from this scalar tensor.
  void backward() const;

  /// Same values, no history, requires_grad = false.
  Tensor detach() const;
  /// Deep copy of values into a fresh leaf with the same requires_grad.
  Tensor clone() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

std::ostream& operator<<(std::ostream& os, const Tensor& t);

/// Disables graph recording for the lifetime of the guard (per thread).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Free-function form of Tensor::backward. The loss must hold a single value.
void backward(const Tensor& loss);

namespace detail {

/// Creates the output of a primitive and records it when needed.
Tensor make_result(Shape shape, std::vector<real> data, const char* op,
                   std::vector<Tensor> inputs, BackwardFn backward);

}  // namespace detail

}  // namespace nfnoise::inline NFNOISE_ABI
