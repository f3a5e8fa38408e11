// Elementwise, reduction and shape ops with their backward rules.

#include <algorithm>
#include <cmath>

#include "reladiff/errors.hpp"
#include "reladiff/tensor.hpp"

namespace reladiff {

namespace {

using Strides = std::vector<std::size_t>;

// Row-major strides of `shape` aligned to `out` (rank >= shape rank), with
// zero stride on broadcast axes.
Strides aligned_strides(const Shape& shape, const Shape& out) {
  Strides s(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t offset = out.size() - shape.size();
  for (std::size_t i = shape.size(); i-- > 0;) {
    s[i + offset] = shape[i] == 1 ? 0 : stride;
    stride *= shape[i];
  }
  return s;
}

// Visits every element of `out` in row-major order with the aligned offsets
// of two operands. The innermost axis runs as a tight loop.
template <class F>
void for_each_broadcast(const Shape& out, const Strides& sa, const Strides& sb, F&& f) {
  const std::size_t rank = out.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = out[rank - 1];
  const std::size_t step_a = sa[rank - 1], step_b = sb[rank - 1];
  const std::size_t outer = numel(out) / inner;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) f(o * inner + j, oa + j * step_a, ob + j * step_b);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class F>
std::vector<Real> binary_values(const Tensor& a, const Tensor& b, Shape& out_shape, F f) {
  out_shape = broadcast_shapes(a.shape(), b.shape());
  std::vector<Real> out(numel(out_shape));
  auto da = a.data();
  auto db = b.data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], db[i]);
    return out;
  }
  if (b.numel() == 1 && a.shape() == out_shape) {
    const Real bv = db[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], bv);
    return out;
  }
  for_each_broadcast(out_shape, aligned_strides(a.shape(), out_shape), aligned_strides(b.shape(), out_shape),
                     [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = f(da[ia], db[ib]); });
  return out;
}

template <class F>
std::vector<Real> unary_values(const Tensor& x, F f) {
  auto d = x.data();
  std::vector<Real> out(d.size());
  std::transform(d.begin(), d.end(), out.begin(), f);
  return out;
}

Tensor reduce_like(const Tensor& g, const Tensor& input) {
  return g.shape() == input.shape() ? g : sum_to(g, input.shape());
}

Real stable_sigmoid(Real x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1.0 + e);
}

Real stable_softplus(Real x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  Shape shape;
  auto v = binary_values(a, b, shape, [](Real x, Real y) { return x + y; });
  return Tensor::from_op(std::move(shape), std::move(v), "add", {a, b},
                         [](const Tensor& g, std::span<const Tensor> in) {
                           return TensorList{reduce_like(g, in[0]), reduce_like(g, in[1])};
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape shape;
  auto v = binary_values(a, b, shape, [](Real x, Real y) { return x - y; });
  return Tensor::from_op(std::move(shape), std::move(v), "sub", {a, b},
                         [](const Tensor& g, std::span<const Tensor> in) {
                           TensorList out(2);
                           if (in[0].requires_grad()) out[0] = reduce_like(g, in[0]);
                           if (in[1].requires_grad()) out[1] = reduce_like(mul_scalar(g, -1.0), in[1]);
                           return out;
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape shape;
  auto v = binary_values(a, b, shape, [](Real x, Real y) { return x * y; });
  return Tensor::from_op(std::move(shape), std::move(v), "mul", {a, b},
                         [](const Tensor& g, std::span<const Tensor> in) {
                           TensorList out(2);
                           if (in[0].requires_grad()) out[0] = reduce_like(mul(g, in[1]), in[0]);
                           if (in[1].requires_grad()) out[1] = reduce_like(mul(g, in[0]), in[1]);
                           return out;
                         });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Shape shape;
  auto v = binary_values(a, b, shape, [](Real x, Real y) { return x / y; });
  return Tensor::from_op(std::move(shape), std::move(v), "div", {a, b},
                         [](const Tensor& g, std::span<const Tensor> in) {
                           TensorList out(2);
                           if (in[0].requires_grad()) out[0] = reduce_like(div(g, in[1]), in[0]);
                           if (in[1].requires_grad())
                             out[1] = reduce_like(mul_scalar(div(mul(g, in[0]), square(in[1])), -1.0), in[1]);
                           return out;
                         });
}

Tensor add_scalar(const Tensor& x, Real s) {
  return Tensor::from_op(x.shape(), unary_values(x, [s](Real v) { return v + s; }), "add_scalar", {x},
                         [](const Tensor& g, std::span<const Tensor>) { return TensorList{g}; });
}

Tensor mul_scalar(const Tensor& x, Real s) {
  return Tensor::from_op(x.shape(), unary_values(x, [s](Real v) { return v * s; }), "mul_scalar", {x},
                         [s](const Tensor& g, std::span<const Tensor>) { return TensorList{mul_scalar(g, s)}; });
}

Tensor pow_scalar(const Tensor& x, Real p) {
  return Tensor::from_op(x.shape(), unary_values(x, [p](Real v) { return std::pow(v, p); }), "pow_scalar", {x},
                         [p](const Tensor& g, std::span<const Tensor> in) {
                           return TensorList{mul(g, mul_scalar(pow_scalar(in[0], p - 1.0), p))};
                         });
}

Tensor exp(const Tensor& x) {
  return Tensor::from_op(x.shape(), unary_values(x, [](Real v) { return std::exp(v); }), "exp", {x},
                         [](const Tensor& g, std::span<const Tensor> in) { return TensorList{mul(g, exp(in[0]))}; });
}

Tensor log(const Tensor& x) {
  return Tensor::from_op(x.shape(), unary_values(x, [](Real v) { return std::log(v); }), "log", {x},
                         [](const Tensor& g, std::span<const Tensor> in) { return TensorList{div(g, in[0])}; });
}

Tensor sigmoid(const Tensor& x) {
  return Tensor::from_op(x.shape(), unary_values(x, stable_sigmoid), "sigmoid", {x},
                         [](const Tensor& g, std::span<const Tensor> in) {
                           // Recomputed from the input so the rule stays differentiable.
                           Tensor s = sigmoid(in[0]);
                           return TensorList{mul(g, mul(s, add_scalar(mul_scalar(s, -1.0), 1.0)))};
                         });
}

Tensor softplus(const Tensor& x) {
  return Tensor::from_op(x.shape(), unary_values(x, stable_softplus), "softplus", {x},
                         [](const Tensor& g, std::span<const Tensor> in) { return TensorList{mul(g, sigmoid(in[0]))}; });
}

Tensor silu(const Tensor& x) { return mul(x, sigmoid(x)); }

Tensor leaky_relu(const Tensor& x, Real negative_slope) {
  return Tensor::from_op(
      x.shape(), unary_values(x, [negative_slope](Real v) { return v > 0.0 ? v : v * negative_slope; }),
      "leaky_relu", {x}, [negative_slope](const Tensor& g, std::span<const Tensor> in) {
        // The local slope is piecewise constant, so it enters as a constant.
        Tensor slope = Tensor::constant(
            in[0].shape(), unary_values(in[0], [negative_slope](Real v) { return v > 0.0 ? 1.0 : negative_slope; }));
        return TensorList{mul(g, slope)};
      });
}

Tensor abs(const Tensor& x) {
  return Tensor::from_op(x.shape(), unary_values(x, [](Real v) { return std::fabs(v); }), "abs", {x},
                         [](const Tensor& g, std::span<const Tensor> in) {
                           Tensor sign = Tensor::constant(in[0].shape(), unary_values(in[0], [](Real v) {
                                                            return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                                                          }));
                           return TensorList{mul(g, sign)};
                         });
}

Tensor square(const Tensor& x) { return mul(x, x); }

// ---- reductions and shape --------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (Real v : x.data()) acc += v;
  return Tensor::from_op({1}, {static_cast<Real>(acc)}, "sum", {x},
                         [](const Tensor& g, std::span<const Tensor> in) {
                           return TensorList{broadcast_to(g, in[0].shape())};
                         });
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<Real>(x.numel())); }

Tensor sum_to(const Tensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  if (target.size() > x.rank() || broadcast_shapes(target, x.shape()) != x.shape())
    throw ShapeError("cannot reduce shape " + to_string(x.shape()) + " to " + to_string(target));
  std::vector<double> acc(numel(target), 0.0);
  auto d = x.data();
  const Strides st = aligned_strides(target, x.shape());
  const Strides unit(x.rank(), 0);
  for_each_broadcast(x.shape(), st, unit, [&](std::size_t i, std::size_t t, std::size_t) { acc[t] += d[i]; });
  std::vector<Real> out(acc.begin(), acc.end());
  return Tensor::from_op(target, std::move(out), "sum_to", {x}, [](const Tensor& g, std::span<const Tensor> in) {
    return TensorList{broadcast_to(g, in[0].shape())};
  });
}

Tensor mean_to(const Tensor& x, const Shape& target) {
  return mul_scalar(sum_to(x, target), static_cast<Real>(numel(target)) / static_cast<Real>(x.numel()));
}

Tensor broadcast_to(const Tensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  if (broadcast_shapes(x.shape(), target) != target)
    throw ShapeError("cannot broadcast shape " + to_string(x.shape()) + " to " + to_string(target));
  std::vector<Real> out(numel(target));
  auto d = x.data();
  const Strides st = aligned_strides(x.shape(), target);
  const Strides unit(target.size(), 0);
  for_each_broadcast(target, st, unit, [&](std::size_t o, std::size_t i, std::size_t) { out[o] = d[i]; });
  return Tensor::from_op(target, std::move(out), "broadcast_to", {x},
                         [](const Tensor& g, std::span<const Tensor> in) { return TensorList{sum_to(g, in[0].shape())}; });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  auto d = x.data();
  return Tensor::from_op(std::move(shape), std::vector<Real>(d.begin(), d.end()), "reshape", {x},
                         [](const Tensor& g, std::span<const Tensor> in) { return TensorList{reshape(g, in[0].shape())}; });
}

namespace {

// outer = product of extents before axis, inner = product after.
std::pair<std::size_t, std::size_t> split_at(const Shape& s, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, inner};
}

}  // namespace

Tensor concat(const TensorList& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ShapeError("concat axis out of range for " + to_string(shape));
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw ShapeError("concat rank mismatch: " + to_string(shape) + " vs " + to_string(s));
    s[axis] = shape[axis];
    if (s != shape) throw ShapeError("concat shape mismatch: " + to_string(shape) + " vs " + to_string(p.shape()));
    total += p.extent(axis);
  }
  shape[axis] = total;
  auto [outer, inner] = split_at(shape, axis);
  std::vector<Real> out(numel(shape));
  std::size_t offset = 0;
  std::vector<std::size_t> starts;
  for (const Tensor& p : parts) {
    starts.push_back(offset);
    const std::size_t block = p.extent(axis) * inner;
    auto d = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(d.begin() + o * block, block, out.begin() + o * total * inner + offset * inner);
    offset += p.extent(axis);
  }
  return Tensor::from_op(std::move(shape), std::move(out), "concat", parts,
                         [axis, starts](const Tensor& g, std::span<const Tensor> in) {
                           TensorList grads(in.size());
                           for (std::size_t i = 0; i < in.size(); ++i)
                             if (in[i].requires_grad()) grads[i] = slice(g, axis, starts[i], in[i].extent(axis));
                           return grads;
                         });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || start + length > x.extent(axis) || length == 0)
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                     std::to_string(axis) + " of " + to_string(x.shape()));
  Shape shape = x.shape();
  const std::size_t full = shape[axis];
  shape[axis] = length;
  auto [outer, inner] = split_at(shape, axis);
  std::vector<Real> out(numel(shape));
  auto d = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(d.begin() + (o * full + start) * inner, length * inner, out.begin() + o * length * inner);
  return Tensor::from_op(std::move(shape), std::move(out), "slice", {x},
                         [axis, start, full](const Tensor& g, std::span<const Tensor>) {
                           return TensorList{pad_axis(g, axis, start, full)};
                         });
}

Tensor pad_axis(const Tensor& x, std::size_t axis, std::size_t start, std::size_t total) {
  if (axis >= x.rank() || start + x.extent(axis) > total)
    throw ShapeError("pad_axis does not fit " + to_string(x.shape()) + " into extent " + std::to_string(total));
  Shape shape = x.shape();
  const std::size_t length = shape[axis];
  shape[axis] = total;
  auto [outer, inner] = split_at(shape, axis);
  std::vector<Real> out(numel(shape), 0.0);
  auto d = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(d.begin() + o * length * inner, length * inner, out.begin() + (o * total + start) * inner);
  return Tensor::from_op(std::move(shape), std::move(out), "pad_axis", {x},
                         [axis, start, length](const Tensor& g, std::span<const Tensor>) {
                           return TensorList{slice(g, axis, start, length)};
                         });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
    throw ShapeError("matmul shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<Real> out(m * n, 0.0);
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = da[i * k + p];
      const Real* brow = db.data() + p * n;
      Real* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return Tensor::from_op({m, n}, std::move(out), "matmul", {a, b}, [](const Tensor& g, std::span<const Tensor> in) {
    TensorList grads(2);
    if (in[0].requires_grad()) grads[0] = matmul(g, transpose(in[1]));
    if (in[1].requires_grad()) grads[1] = matmul(transpose(in[0]), g);
    return grads;
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose expects a matrix, got " + to_string(x.shape()));
  const std::size_t r = x.extent(0), c = x.extent(1);
  std::vector<Real> out(r * c);
  auto d = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
  return Tensor::from_op({c, r}, std::move(out), "transpose", {x},
                         [](const Tensor& g, std::span<const Tensor>) { return TensorList{transpose(g)}; });
}

}  // namespace reladiff
