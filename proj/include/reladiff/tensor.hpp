#pragma once

// Minimal reverse-mode automatic differentiation over dense arrays.
//
// Every differentiable op appends a node to an implicit tape: nodes carry a
// monotonically increasing sequence number, so sorting reachable nodes by
// that number yields a reverse topological order. Backward rules are written
// in terms of the same public ops, which means a backward pass run with
// `retain_graph = true` is itself recorded and can be differentiated again
// (reverse-over-reverse). That is what the gradient penalty relies on.
//
// Broadcasting follows the trailing-dimension rule: shapes are right-aligned,
// missing leading extents count as 1, and each aligned pair must either match
// or contain a 1. There is no type promotion: every element is a Real.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "reladiff/scalar.hpp"

namespace reladiff {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Result shape of broadcasting `a` against `b`; throws ShapeError naming both.
Shape broadcast_shapes(const Shape& a, const Shape& b);

class Tensor;
struct TapeAccess;
using TensorList = std::vector<Tensor>;

/// Computes input gradients from the output gradient. Entries for inputs that
/// do not require gradients may be left undefined.
using BackwardFn = std::function<TensorList(const Tensor& grad, std::span<const Tensor> inputs)>;

class Tensor {
 public:
  Tensor() = default;

  /// Tensor with no tape node. Gradients never flow into it.
  static Tensor constant(Shape shape, std::vector<Real> values);
  /// Leaf that participates in differentiation (learnable weight, or an input
  /// we want a gradient for).
  static Tensor parameter(Shape shape, std::vector<Real> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Real value);
  static Tensor scalar(Real value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const Real> data() const;
  /// Writable view of the storage. Intended for optimizers updating leaves.
  std::span<Real> mutable_data();
  Real item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  /// Same storage, no tape node.
  Tensor detach() const;
  /// Stable identity of this tensor's tape node; used as a gradient-map key.
  const void* handle() const { return impl_.get(); }
  const std::string& op_name() const;

  /// Internal: attach an op node. Prefer the free functions below.
  static Tensor from_op(Shape shape, std::vector<Real> values, const char* op, TensorList inputs,
                        BackwardFn backward);

 private:
  struct Impl;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;

  friend struct TapeAccess;
};

/// Whether newly created op results are recorded on the tape (thread-local).
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool on) : previous_(GradMode::enabled()) { GradMode::set_enabled(on); }
  ~GradModeGuard() { GradMode::set_enabled(previous_); }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

struct NoGradGuard : GradModeGuard {
  NoGradGuard() : GradModeGuard(false) {}
};

/// Gradients keyed by leaf handle.
class GradMap {
 public:
  bool contains(const Tensor& leaf) const { return grads_.count(leaf.handle()) != 0; }
  const Tensor& at(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }
  std::vector<const void*> handles() const;
  void insert(const void* handle, Tensor g) { grads_[handle] = std::move(g); }

 private:
  std::unordered_map<const void*, Tensor> grads_;
};

/// Reverse pass from a scalar root to every reachable leaf that requires
/// gradients. With `retain_graph`, the returned gradients are themselves on
/// the tape and can be differentiated.
GradMap backward(const Tensor& root, bool retain_graph = false);

/// Gradients of a scalar root with respect to `wrt` (leaves or intermediate
/// tensors). Unreachable entries come back as zeros of the matching shape.
TensorList grad(const Tensor& root, std::span<const Tensor> wrt, bool retain_graph = false);

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, Real s);
Tensor mul_scalar(const Tensor& x, Real s);
Tensor pow_scalar(const Tensor& x, Real p);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// log(1 + e^x), evaluated as max(x, 0) + log1p(e^-|x|).
Tensor softplus(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, Real negative_slope);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, Real s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, Real s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, Real s) { return mul_scalar(a, s); }
inline Tensor operator*(Real s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return mul_scalar(a, -1.0); }

// ---- reductions and shape --------------------------------------------------

/// Sum of all elements, shape {1}.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces broadcast axes so the result has `target` shape (inverse of broadcast_to).
Tensor sum_to(const Tensor& x, const Shape& target);
Tensor mean_to(const Tensor& x, const Shape& target);
Tensor broadcast_to(const Tensor& x, const Shape& target);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const TensorList& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
/// Zero tensor of extent `total` along `axis` with `x` written at `start`.
Tensor pad_axis(const Tensor& x, std::size_t axis, std::size_t start, std::size_t total);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// ---- convolution -----------------------------------------------------------
//
// Cross-correlation over 2 or 3 spatial axes: input [N, C, *S], kernel
// [F, C, *K]. Output extent per axis is floor((S + 2p - k) / stride) + 1.
// The three ops below are the partial derivatives of one trilinear form, so
// each one's backward rule is expressed with the other two.

Tensor conv(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);
/// Gradient of conv with respect to its input (a transposed convolution).
Tensor conv_input_grad(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                       std::size_t stride, std::size_t padding);
/// Gradient of conv with respect to its kernel.
Tensor conv_kernel_grad(const Tensor& input, const Tensor& grad_out, const Shape& kernel_shape,
                        std::size_t stride, std::size_t padding);

/// Nearest-neighbour upsampling by 2 along every spatial axis.
Tensor upsample2x(const Tensor& x);
/// Sums non-overlapping 2^d blocks along every spatial axis (adjoint of upsample2x).
Tensor sum_pool2x(const Tensor& x);

namespace testing {
/// Scales the backward output of the named op by 1.5. Empty name disables.
/// Used as a negative control for the gradient checker.
void set_backward_fault(const std::string& op_name);
}  // namespace testing

}  // namespace reladiff
