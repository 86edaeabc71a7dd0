#include "nfnoise/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "nfnoise/error.hpp"

namespace nfnoise::inline NFNOISE_ABI {

using detail::make_result;
using Grads = std::span<std::vector<real>*>;

namespace {

using RowMatrix = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

// Per-dimension strides of an operand broadcast against the output shape.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t running = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t in_dim = in.size() - 1 - k;
    const std::size_t out_dim = rank - 1 - k;
    strides[out_dim] = in[in_dim] == 1 ? 0 : running;
    running *= in[in_dim];
  }
  return strides;
}

BroadcastPlan make_plan(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  plan.out = broadcast_shape(a, b);
  plan.stride_a = aligned_strides(a, plan.out);
  plan.stride_b = aligned_strides(b, plan.out);
  return plan;
}

// Calls f(out_index, a_index, b_index) for every output element, in order.
template <class F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const std::size_t rank = plan.out.size();
  const std::size_t total = shape_numel(plan.out);
  if (total == 0) return;
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = plan.out[rank - 1];
  const std::size_t sa = plan.stride_a[rank - 1];
  const std::size_t sb = plan.stride_b[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t k = 0; k < inner; ++k) f(o + k, ia + k * sa, ib + k * sb);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (idx[d] < plan.out[d]) break;
      ia -= plan.stride_a[d] * plan.out[d];
      ib -= plan.stride_b[d] * plan.out[d];
      idx[d] = 0;
    }
  }
}

void check_finite(std::span<const real> values, const char* op) {
  for (real v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite result");
  }
}

// Binary element-wise op with broadcasting. `da`/`db` return the partial
// derivative of the output with respect to a/b at (x, y).
template <class Fwd, class DA, class DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  const auto av = a.values();
  const auto bv = b.values();
  if (a.shape() == b.shape()) {
    std::vector<real> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
    return make_result(a.shape(), std::move(out), name, {a, b},
                       [a, b, da, db](std::span<const real> g, Grads grads) {
                         const auto x = a.values();
                         const auto y = b.values();
                         if (grads[0]) {
                           auto& ga = *grads[0];
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(x[i], y[i]);
                         }
                         if (grads[1]) {
                           auto& gb = *grads[1];
                           for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(x[i], y[i]);
                         }
                       });
  }
  auto plan = std::make_shared<BroadcastPlan>(make_plan(a.shape(), b.shape()));
  std::vector<real> out(shape_numel(plan->out));
  for_each_broadcast(*plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = fwd(av[ia], bv[ib]); });
  return make_result(plan->out, std::move(out), name, {a, b},
                     [a, b, da, db, plan](std::span<const real> g, Grads grads) {
                       const auto x = a.values();
                       const auto y = b.values();
                       auto* ga = grads[0];
                       auto* gb = grads[1];
                       for_each_broadcast(*plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                         if (ga) (*ga)[ia] += g[o] * da(x[ia], y[ib]);
                         if (gb) (*gb)[ib] += g[o] * db(x[ia], y[ib]);
                       });
                     });
}

// Unary op; `d` returns the derivative at x.
template <class Fwd, class D>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, D d) {
  const auto xv = x.values();
  std::vector<real> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), name, {x}, [x, d](std::span<const real> g, Grads grads) {
    const auto v = x.values();
    auto& gx = *grads[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(v[i]);
  });
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> strides(s.size(), 1);
  for (std::size_t d = s.size(); d-- > 1;) strides[d - 1] = strides[d] * s[d];
  return strides;
}

// LU factorization with partial pivoting in double precision. Returns
// log|det| and fills `inverse` (row-major n x n) when requested.
double lu_logabsdet(const real* m, std::size_t n, double* inverse) {
  std::vector<double> a(m, m + n * n);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double logdet = 0.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
    }
    if (a[pivot * n + col] == 0.0) return -std::numeric_limits<double>::infinity();
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
      std::swap(perm[col], perm[pivot]);
    }
    const double diag = a[col * n + col];
    logdet += std::log(std::abs(diag));
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / diag;
      a[r * n + col] = f;
      for (std::size_t c = col + 1; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
    }
  }
  if (inverse) {
    // Solve A X = I column by column using the packed LU factors.
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<double> x(n);
      for (std::size_t i = 0; i < n; ++i) x[i] = perm[i] == j ? 1.0 : 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) x[i] -= a[i * n + k] * x[k];
      }
      for (std::size_t i = n; i-- > 0;) {
        for (std::size_t k = i + 1; k < n; ++k) x[i] -= a[i * n + k] * x[k];
        x[i] /= a[i * n + i];
      }
      for (std::size_t i = 0; i < n; ++i) inverse[i * n + j] = x[i];
    }
  }
  return logdet;
}

constexpr double kSingularLogDet = -27.631021115928547;  // log(1e-12)

struct MatrixBatch {
  std::size_t batch = 1;
  std::size_t n = 0;
  bool batched = false;
};

MatrixBatch matrix_batch(const Tensor& w, const char* op) {
  const auto& s = w.shape();
  if (s.size() == 2 && s[0] == s[1]) return {1, s[0], false};
  if (s.size() == 3 && s[1] == s[2]) return {s[0], s[1], true};
  throw ShapeError(std::string(op) + ": expected [C,C] or [N,C,C], got " + shape_string(s));
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    out[rank - 1 - k] = da == 1 ? db : da;
  }
  return out;
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  auto need_b = [&] {
    if (!b.defined()) throw ShapeError("binary element-wise op needs a second operand");
  };
  switch (op) {
    case ElementwiseOp::add: need_b(); return add(a, b);
    case ElementwiseOp::sub: need_b(); return sub(a, b);
    case ElementwiseOp::mul: need_b(); return mul(a, b);
    case ElementwiseOp::div: need_b(); return div(a, b);
    case ElementwiseOp::pow: need_b(); return pow(a, b);
    case ElementwiseOp::exp: return exp(a);
    case ElementwiseOp::log: return log(a);
    case ElementwiseOp::tanh: return tanh(a);
    case ElementwiseOp::relu: return relu(a);
    case ElementwiseOp::negate: return neg(a);
  }
  throw Error("unknown element-wise op");
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](real x, real y) { return x + y; }, [](real, real) { return real{1}; },
      [](real, real) { return real{1}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](real x, real y) { return x - y; }, [](real, real) { return real{1}; },
      [](real, real) { return real{-1}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](real x, real y) { return x * y; }, [](real, real y) { return y; },
      [](real x, real) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (real v : b.values()) {
    if (v == real{0}) throw DomainError("div: division by zero");
  }
  auto out = binary(
      "div", a, b, [](real x, real y) { return x / y; }, [](real, real y) { return real{1} / y; },
      [](real x, real y) { return -x / (y * y); });
  check_finite(out.values(), "div");
  return out;
}

Tensor add(const Tensor& a, real b) {
  const auto av = a.values();
  std::vector<real> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + b;
  return make_result(a.shape(), std::move(out), "add_scalar", {a}, [](std::span<const real> g, Grads grads) {
    auto& ga = *grads[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor mul(const Tensor& a, real b) {
  const auto av = a.values();
  std::vector<real> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * b;
  return make_result(a.shape(), std::move(out), "mul_scalar", {a}, [b](std::span<const real> g, Grads grads) {
    auto& ga = *grads[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b;
  });
}

Tensor neg(const Tensor& x) {
  return unary("neg", x, [](real v) { return -v; }, [](real) { return real{-1}; });
}

Tensor exp(const Tensor& x) {
  auto out = unary("exp", x, [](real v) { return std::exp(v); }, [](real v) { return std::exp(v); });
  check_finite(out.values(), "exp");
  return out;
}

Tensor log(const Tensor& x) {
  for (real v : x.values()) {
    if (!(v > real{0})) throw DomainError("log: argument must be positive");
  }
  return unary("log", x, [](real v) { return std::log(v); }, [](real v) { return real{1} / v; });
}

Tensor pow(const Tensor& x, real p) {
  const bool integral = p == std::round(p);
  for (real v : x.values()) {
    if (v < real{0} && !integral) throw DomainError("pow: negative base with non-integer exponent");
    if (v == real{0} && p < real{0}) throw DomainError("pow: zero base with negative exponent");
  }
  auto out = unary(
      "pow", x, [p](real v) { return std::pow(v, p); },
      [p](real v) { return p == real{0} ? real{0} : p * std::pow(v, p - real{1}); });
  check_finite(out.values(), "pow");
  return out;
}

Tensor pow(const Tensor& x, const Tensor& p) {
  for (real v : x.values()) {
    if (!(v > real{0})) throw DomainError("pow: base must be positive for a tensor exponent");
  }
  auto out = binary(
      "pow", x, p, [](real b, real e) { return std::pow(b, e); },
      [](real b, real e) { return e * std::pow(b, e - real{1}); },
      [](real b, real e) { return std::pow(b, e) * std::log(b); });
  check_finite(out.values(), "pow");
  return out;
}

Tensor sqrt(const Tensor& x) {
  for (real v : x.values()) {
    if (!(v > real{0})) throw DomainError("sqrt: argument must be positive");
  }
  return unary(
      "sqrt", x, [](real v) { return std::sqrt(v); }, [](real v) { return real{0.5} / std::sqrt(v); });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](real v) { return v * v; }, [](real v) { return real{2} * v; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](real v) { return std::tanh(v); },
      [](real v) {
        const real t = std::tanh(v);
        return real{1} - t * t;
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](real v) { return v > real{0} ? v : real{0}; },
      [](real v) { return v > real{0} ? real{1} : real{0}; });
}

namespace {
real stable_softplus(real v) { return v > real{0} ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }
real stable_sigmoid(real v) {
  if (v >= real{0}) return real{1} / (real{1} + std::exp(-v));
  const real e = std::exp(v);
  return e / (real{1} + e);
}
}  // namespace

Tensor softplus(const Tensor& x) { return unary("softplus", x, stable_softplus, stable_sigmoid); }

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](real v) {
    const real s = stable_sigmoid(v);
    return s * (real{1} - s);
  });
}

Tensor clamp(const Tensor& x, real lo, real hi) {
  return unary(
      "clamp", x, [lo, hi](real v) { return std::clamp(v, lo, hi); },
      [lo, hi](real v) { return v >= lo && v <= hi ? real{1} : real{0}; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (real v : x.values()) acc += v;
  return make_result(Shape{}, {static_cast<real>(acc)}, "sum", {x}, [](std::span<const real> g, Grads grads) {
    auto& gx = *grads[0];
    for (auto& v : gx) v += g[0];
  });
}

Tensor sum(const Tensor& x, std::vector<std::size_t> axes, bool keepdim) {
  const auto& in = x.shape();
  Shape kept = in;
  for (auto a : axes) {
    if (a >= in.size()) throw ShapeError("sum: axis out of range");
    kept[a] = 1;
  }
  Shape out_shape;
  if (keepdim) {
    out_shape = kept;
  } else {
    for (std::size_t d = 0; d < in.size(); ++d) {
      if (std::find(axes.begin(), axes.end(), d) == axes.end()) out_shape.push_back(in[d]);
    }
  }
  // Plan: iterate over the input, mapping to the kept-dims output offset.
  auto plan = std::make_shared<BroadcastPlan>();
  plan->out = in;
  plan->stride_a = aligned_strides(kept, in);
  plan->stride_b = plan->stride_a;
  std::vector<double> acc(shape_numel(kept), 0.0);
  const auto xv = x.values();
  for_each_broadcast(*plan, [&](std::size_t o, std::size_t k, std::size_t) { acc[k] += xv[o]; });
  std::vector<real> out(acc.begin(), acc.end());
  return make_result(std::move(out_shape), std::move(out), "sum_axes", {x},
                     [plan](std::span<const real> g, Grads grads) {
                       auto& gx = *grads[0];
                       for_each_broadcast(*plan, [&](std::size_t o, std::size_t k, std::size_t) { gx[o] += g[k]; });
                     });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
  return mul(sum(x), real{1} / static_cast<real>(x.numel()));
}

Tensor sum_per_sample(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("sum_per_sample needs a batch axis");
  if (x.rank() == 1) return x;
  std::vector<std::size_t> axes;
  for (std::size_t d = 1; d < x.rank(); ++d) axes.push_back(d);
  return sum(x, axes, false);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  const auto v = x.values();
  return make_result(std::move(shape), std::vector<real>(v.begin(), v.end()), "reshape", {x},
                     [](std::span<const real> g, Grads grads) {
                       auto& gx = *grads[0];
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const auto& in = x.shape();
  const std::size_t rank = in.size();
  if (order.size() != rank) throw ShapeError("permute: order rank mismatch");
  std::vector<bool> used(rank, false);
  Shape out_shape(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (order[d] >= rank || used[order[d]]) throw ShapeError("permute: invalid order");
    used[order[d]] = true;
    out_shape[d] = in[order[d]];
  }
  const auto in_strides = row_major_strides(in);
  // Source offset for each output element, computed once and reused.
  auto source = std::make_shared<std::vector<std::size_t>>(x.numel());
  {
    BroadcastPlan plan;
    plan.out = out_shape;
    plan.stride_a.resize(rank);
    for (std::size_t d = 0; d < rank; ++d) plan.stride_a[d] = in_strides[order[d]];
    plan.stride_b = plan.stride_a;
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t) { (*source)[o] = ia; });
  }
  const auto xv = x.values();
  std::vector<real> out(xv.size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xv[(*source)[o]];
  return make_result(std::move(out_shape), std::move(out), "permute", {x},
                     [source](std::span<const real> g, Grads grads) {
                       auto& gx = *grads[0];
                       for (std::size_t o = 0; o < g.size(); ++o) gx[(*source)[o]] += g[o];
                     });
}

Tensor slice(const Tensor& x, std::size_t dim, std::size_t start, std::size_t length) {
  const auto& in = x.shape();
  if (dim >= in.size() || start + length > in[dim]) {
    throw ShapeError("slice out of range on " + shape_string(in));
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < dim; ++d) outer *= in[d];
  std::size_t inner = 1;
  for (std::size_t d = dim + 1; d < in.size(); ++d) inner *= in[d];
  const std::size_t span_in = in[dim] * inner;
  const std::size_t span_out = length * inner;
  Shape out_shape = in;
  out_shape[dim] = length;
  const auto xv = x.values();
  std::vector<real> out(outer * span_out);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.begin() + o * span_in + start * inner, span_out, out.begin() + o * span_out);
  }
  return make_result(std::move(out_shape), std::move(out), "slice", {x},
                     [=](std::span<const real> g, Grads grads) {
                       auto& gx = *grads[0];
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t i = 0; i < span_out; ++i) {
                           gx[o * span_in + start * inner + i] += g[o * span_out + i];
                         }
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t dim) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const Shape& first = parts.front().shape();
  if (dim >= first.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[dim] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != dim && s[d] != first[d]) {
        throw ShapeError("concat: " + shape_string(s) + " vs " + shape_string(first));
      }
    }
    out_shape[dim] += s[dim];
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < dim; ++d) outer *= first[d];
  std::size_t inner = 1;
  for (std::size_t d = dim + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t span_out = out_shape[dim] * inner;
  std::vector<std::size_t> widths;
  std::vector<real> out(outer * span_out);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[dim] * inner;
    const auto pv = p.values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + o * w, w, out.begin() + o * span_out + offset);
    }
    widths.push_back(w);
    offset += w;
  }
  return make_result(std::move(out_shape), std::move(out), "concat", parts,
                     [=](std::span<const real> g, Grads grads) {
                       std::size_t off = 0;
                       for (std::size_t p = 0; p < widths.size(); ++p) {
                         if (grads[p]) {
                           auto& gp = *grads[p];
                           for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t i = 0; i < widths[p]; ++i) gp[o * widths[p] + i] += g[o * span_out + off + i];
                           }
                         }
                         off += widths[p];
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(0)) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t n = a.size(0), k = a.size(1), m = b.size(1);
  std::vector<real> out(n * m);
  MapMatrix(out.data(), n, m).noalias() = ConstMapMatrix(a.values().data(), n, k) * ConstMapMatrix(b.values().data(), k, m);
  return make_result(Shape{n, m}, std::move(out), "matmul", {a, b}, [a, b, n, k, m](std::span<const real> g, Grads grads) {
    ConstMapMatrix G(g.data(), n, m);
    if (grads[0]) MapMatrix(grads[0]->data(), n, k).noalias() += G * ConstMapMatrix(b.values().data(), k, m).transpose();
    if (grads[1]) MapMatrix(grads[1]->data(), k, m).noalias() += ConstMapMatrix(a.values().data(), n, k).transpose() * G;
  });
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) throw ShapeError("dense: weight must be [m,n]");
  const std::size_t m = w.size(0), n = w.size(1);
  const bool single = x.rank() == 1;
  if ((single && x.size(0) != n) || (!single && (x.rank() != 2 || x.size(1) != n))) {
    throw ShapeError("dense: input " + shape_string(x.shape()) + " does not match weight " + shape_string(w.shape()));
  }
  if (b.defined() && (b.rank() != 1 || b.size(0) != m)) throw ShapeError("dense: bias must be [m]");
  const std::size_t batch = single ? 1 : x.size(0);
  std::vector<real> out(batch * m);
  MapMatrix Y(out.data(), batch, m);
  Y.noalias() = ConstMapMatrix(x.values().data(), batch, n) * ConstMapMatrix(w.values().data(), m, n).transpose();
  if (b.defined()) {
    const auto bv = b.values();
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bv[j];
  }
  Shape shape = single ? Shape{m} : Shape{batch, m};
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result(std::move(shape), std::move(out), "dense", inputs,
                     [x, w, batch, m, n](std::span<const real> g, Grads grads) {
                       ConstMapMatrix G(g.data(), batch, m);
                       if (grads[0]) MapMatrix(grads[0]->data(), batch, n).noalias() += G * ConstMapMatrix(w.values().data(), m, n);
                       if (grads[1]) MapMatrix(grads[1]->data(), m, n).noalias() += G.transpose() * ConstMapMatrix(x.values().data(), batch, n);
                       if (grads.size() > 2 && grads[2]) {
                         auto& gb = *grads[2];
                         for (std::size_t i = 0; i < batch; ++i)
                           for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
                       }
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  const bool single = x.rank() == 3;
  if (!single && x.rank() != 4) throw ShapeError("conv2d: input must be [C,H,W] or [N,C,H,W]");
  if (w.rank() != 4) throw ShapeError("conv2d: weight must be [C_out,C_in,kH,kW]");
  const std::size_t batch = single ? 1 : x.size(0);
  const std::size_t cin = x.size(single ? 0 : 1);
  const std::size_t height = x.size(single ? 1 : 2);
  const std::size_t width = x.size(single ? 2 : 3);
  const std::size_t cout = w.size(0), kh = w.size(2), kw = w.size(3);
  if (w.size(1) != cin) {
    throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(cin) + ", kernel expects " +
                     std::to_string(w.size(1)));
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel sizes must be odd");
  if (b.defined() && (b.rank() != 1 || b.size(0) != cout)) throw ShapeError("conv2d: bias must be [C_out]");

  const std::size_t pixels = height * width;
  const std::size_t cols_n = batch * pixels;
  const std::size_t rows_k = cin * kh * kw;
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);

  // im2col: row (c, ky, kx), column (n, y, x).
  auto cols = std::make_shared<std::vector<real>>(rows_k * cols_n, real{0});
  const auto xv = x.values();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        real* row = cols->data() + ((c * kh + ky) * kw + kx) * cols_n;
        const long dy = static_cast<long>(ky) - ph, dx = static_cast<long>(kx) - pw;
        for (std::size_t n = 0; n < batch; ++n) {
          const real* plane = xv.data() + (n * cin + c) * pixels;
          real* dst = row + n * pixels;
          for (std::size_t yy = 0; yy < height; ++yy) {
            const long sy = static_cast<long>(yy) + dy;
            if (sy < 0 || sy >= static_cast<long>(height)) continue;
            for (std::size_t xx = 0; xx < width; ++xx) {
              const long sx = static_cast<long>(xx) + dx;
              if (sx < 0 || sx >= static_cast<long>(width)) continue;
              dst[yy * width + xx] = plane[sy * static_cast<long>(width) + sx];
            }
          }
        }
      }
    }
  }
  RowMatrix prod = ConstMapMatrix(w.values().data(), cout, rows_k) * ConstMapMatrix(cols->data(), rows_k, cols_n);
  std::vector<real> out(batch * cout * pixels);
  const auto bv = b.defined() ? b.values() : std::span<const real>{};
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      const real bias = bv.empty() ? real{0} : bv[co];
      const real* src = prod.data() + co * cols_n + n * pixels;
      real* dst = out.data() + (n * cout + co) * pixels;
      for (std::size_t p = 0; p < pixels; ++p) dst[p] = src[p] + bias;
    }
  }
  Shape shape = single ? Shape{cout, height, width} : Shape{batch, cout, height, width};
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result(
      std::move(shape), std::move(out), "conv2d", inputs,
      [=](std::span<const real> g, Grads grads) {
        // Output gradient in [C_out, N*H*W] layout.
        RowMatrix gm(cout, cols_n);
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t co = 0; co < cout; ++co)
            std::copy_n(g.data() + (n * cout + co) * pixels, pixels, gm.data() + co * cols_n + n * pixels);
        if (grads[1]) {
          MapMatrix(grads[1]->data(), cout, rows_k).noalias() += gm * ConstMapMatrix(cols->data(), rows_k, cols_n).transpose();
        }
        if (grads.size() > 2 && grads[2]) {
          auto& gb = *grads[2];
          for (std::size_t co = 0; co < cout; ++co) gb[co] += gm.row(co).sum();
        }
        if (grads[0]) {
          RowMatrix gcols = ConstMapMatrix(w.values().data(), cout, rows_k).transpose() * gm;
          auto& gx = *grads[0];
          for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const real* row = gcols.data() + ((c * kh + ky) * kw + kx) * cols_n;
                const long dy = static_cast<long>(ky) - ph, dx = static_cast<long>(kx) - pw;
                for (std::size_t n = 0; n < batch; ++n) {
                  real* plane = gx.data() + (n * cin + c) * pixels;
                  const real* src = row + n * pixels;
                  for (std::size_t yy = 0; yy < height; ++yy) {
                    const long sy = static_cast<long>(yy) + dy;
                    if (sy < 0 || sy >= static_cast<long>(height)) continue;
                    for (std::size_t xx = 0; xx < width; ++xx) {
                      const long sx = static_cast<long>(xx) + dx;
                      if (sx < 0 || sx >= static_cast<long>(width)) continue;
                      plane[sy * static_cast<long>(width) + sx] += src[yy * width + xx];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Tensor channel_mix(const Tensor& x, const Tensor& w) {
  const bool single = x.rank() == 3;
  if (!single && x.rank() != 4) throw ShapeError("channel_mix: input must be [C,H,W] or [N,C,H,W]");
  const std::size_t batch = single ? 1 : x.size(0);
  const std::size_t channels = x.size(single ? 0 : 1);
  const std::size_t pixels = x.numel() / (batch * channels);
  const auto mb = matrix_batch(w, "channel_mix");
  if (mb.n != channels || (mb.batched && mb.batch != batch)) {
    throw ShapeError("channel_mix: weight " + shape_string(w.shape()) + " vs input " + shape_string(x.shape()));
  }
  const auto xv = x.values();
  const auto wv = w.values();
  const std::size_t cc = channels * channels;
  std::vector<real> out(xv.size());
  for (std::size_t n = 0; n < batch; ++n) {
    const real* wm = wv.data() + (mb.batched ? n * cc : 0);
    ConstMapMatrix X(xv.data() + n * channels * pixels, channels, pixels);
    MapMatrix(out.data() + n * channels * pixels, channels, pixels).noalias() = ConstMapMatrix(wm, channels, channels) * X;
  }
  return make_result(x.shape(), std::move(out), "channel_mix", {x, w},
                     [x, w, batch, channels, pixels, cc, mb](std::span<const real> g, Grads grads) {
                       const auto xv2 = x.values();
                       const auto wv2 = w.values();
                       for (std::size_t n = 0; n < batch; ++n) {
                         const std::size_t woff = mb.batched ? n * cc : 0;
                         ConstMapMatrix G(g.data() + n * channels * pixels, channels, pixels);
                         if (grads[0]) {
                           MapMatrix(grads[0]->data() + n * channels * pixels, channels, pixels).noalias() +=
                               ConstMapMatrix(wv2.data() + woff, channels, channels).transpose() * G;
                         }
                         if (grads[1]) {
                           MapMatrix(grads[1]->data() + woff, channels, channels).noalias() +=
                               G * ConstMapMatrix(xv2.data() + n * channels * pixels, channels, pixels).transpose();
                         }
                       }
                     });
}

Tensor logabsdet(const Tensor& w) {
  const auto mb = matrix_batch(w, "logabsdet");
  const std::size_t n = mb.n, nn = n * n;
  const auto wv = w.values();
  auto inv_t = std::make_shared<std::vector<real>>(mb.batch * nn);
  std::vector<real> out(mb.batch);
  std::vector<double> inv(nn);
  for (std::size_t b = 0; b < mb.batch; ++b) {
    const double lad = lu_logabsdet(wv.data() + b * nn, n, inv.data());
    if (!(lad > kSingularLogDet)) throw DomainError("logabsdet: singular matrix (|det| <= 1e-12)");
    out[b] = static_cast<real>(lad);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) (*inv_t)[b * nn + i * n + j] = static_cast<real>(inv[j * n + i]);
  }
  Shape shape = mb.batched ? Shape{mb.batch} : Shape{};
  return make_result(std::move(shape), std::move(out), "logabsdet", {w},
                     [inv_t, nn, mb](std::span<const real> g, Grads grads) {
                       auto& gw = *grads[0];
                       for (std::size_t b = 0; b < mb.batch; ++b)
                         for (std::size_t i = 0; i < nn; ++i) gw[b * nn + i] += g[b] * (*inv_t)[b * nn + i];
                     });
}

Tensor matrix_inverse(const Tensor& w) {
  const auto mb = matrix_batch(w, "matrix_inverse");
  const std::size_t n = mb.n, nn = n * n;
  const auto wv = w.values();
  std::vector<real> out(mb.batch * nn);
  std::vector<double> inv(nn);
  for (std::size_t b = 0; b < mb.batch; ++b) {
    const double lad = lu_logabsdet(wv.data() + b * nn, n, inv.data());
    if (!(lad > kSingularLogDet)) throw DomainError("matrix_inverse: singular matrix (|det| <= 1e-12)");
    for (std::size_t i = 0; i < nn; ++i) out[b * nn + i] = static_cast<real>(inv[i]);
  }
  return Tensor(w.shape(), std::move(out));
}

Tensor cumsum_last(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("cumsum_last on a scalar");
  const std::size_t k = x.shape().back();
  const std::size_t rows = k == 0 ? 0 : x.numel() / k;
  const auto xv = x.values();
  std::vector<real> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    real acc = 0;
    for (std::size_t j = 0; j < k; ++j) {
      acc += xv[r * k + j];
      out[r * k + j] = acc;
    }
  }
  return make_result(x.shape(), std::move(out), "cumsum", {x}, [rows, k](std::span<const real> g, Grads grads) {
    auto& gx = *grads[0];
    for (std::size_t r = 0; r < rows; ++r) {
      real acc = 0;
      for (std::size_t j = k; j-- > 0;) {
        acc += g[r * k + j];
        gx[r * k + j] += acc;
      }
    }
  });
}

Tensor gather_last(const Tensor& x, std::span<const std::size_t> index) {
  if (x.rank() < 1) throw ShapeError("gather_last on a scalar");
  const std::size_t k = x.shape().back();
  const std::size_t rows = k == 0 ? 0 : x.numel() / k;
  if (index.size() != rows) throw ShapeError("gather_last: one index per row required");
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  const auto xv = x.values();
  std::vector<real> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if ((*idx)[r] >= k) throw ShapeError("gather_last: index out of range");
    out[r] = xv[r * k + (*idx)[r]];
  }
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  return make_result(std::move(shape), std::move(out), "gather", {x}, [idx, k](std::span<const real> g, Grads grads) {
    auto& gx = *grads[0];
    for (std::size_t r = 0; r < g.size(); ++r) gx[r * k + (*idx)[r]] += g[r];
  });
}

Tensor softmax_last(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax_last on a scalar");
  const std::size_t k = x.shape().back();
  const std::size_t rows = k == 0 ? 0 : x.numel() / k;
  const auto xv = x.values();
  auto out = std::make_shared<std::vector<real>>(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const real* in = xv.data() + r * k;
    real* o = out->data() + r * k;
    const real top = *std::max_element(in, in + k);
    real total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      o[j] = std::exp(in[j] - top);
      total += o[j];
    }
    for (std::size_t j = 0; j < k; ++j) o[j] /= total;
  }
  std::vector<real> values = *out;
  return make_result(x.shape(), std::move(values), "softmax", {x}, [out, rows, k](std::span<const real> g, Grads grads) {
    auto& gx = *grads[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const real* y = out->data() + r * k;
      real dot = 0;
      for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * y[j];
      for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += y[j] * (g[r * k + j] - dot);
    }
  });
}

bool all_finite(const Tensor& t) {
  const auto v = t.values();
  return std::all_of(v.begin(), v.end(), [](real x) { return std::isfinite(x); });
}

void require_finite(const Tensor& t, const std::string& where) {
  if (!all_finite(t)) throw NumericError(where + ": non-finite values");
}

}  // namespace nfnoise::inline NFNOISE_ABI
