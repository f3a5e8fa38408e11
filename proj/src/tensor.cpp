#include "reladiff/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <numeric>
#include <sstream>

#include "reladiff/errors.hpp"

namespace reladiff {

struct Tensor::Impl {
  Shape shape;
  std::shared_ptr<std::vector<Real>> data;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::string op = "constant";
  TensorList inputs;
  BackwardFn backward;
};

namespace {

std::atomic<std::uint64_t> g_seq{1};
thread_local bool g_grad_enabled = true;
std::string g_fault_op;

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<Real> values) {
  if (reladiff::numel(shape) != values.size())
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  if (std::any_of(shape.begin(), shape.end(), [](std::size_t e) { return e == 0; }))
    throw ShapeError("zero extent in shape " + to_string(shape));
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::make_shared<std::vector<Real>>(std::move(values));
  return Tensor(std::move(impl));
}

Tensor Tensor::parameter(Shape shape, std::vector<Real> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  t.impl_->seq = g_seq.fetch_add(1);
  t.impl_->op = "leaf";
  return t;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, Real value) {
  const std::size_t n = reladiff::numel(shape);
  return constant(std::move(shape), std::vector<Real>(n, value));
}

Tensor Tensor::scalar(Real value) { return constant({1}, {value}); }

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return reladiff::numel(shape()); }

std::span<const Real> Tensor::data() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_->data;
}

std::span<Real> Tensor::mutable_data() {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_->data;
}

Real Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return (*impl_->data)[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
bool Tensor::is_leaf() const { return impl_ && !impl_->backward; }

const std::string& Tensor::op_name() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->op;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<Impl>();
  impl->shape = shape();
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_op(Shape shape, std::vector<Real> values, const char* op, TensorList inputs,
                       BackwardFn backward) {
  Tensor out = constant(std::move(shape), std::move(values));
  const bool needs = GradMode::enabled() &&
                     std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needs) return out;
  out.impl_->requires_grad = true;
  out.impl_->seq = g_seq.fetch_add(1);
  out.impl_->op = op;
  out.impl_->inputs = std::move(inputs);
  if (!g_fault_op.empty() && g_fault_op == op) {
    out.impl_->backward = [inner = std::move(backward)](const Tensor& g, std::span<const Tensor> in) {
      TensorList grads = inner(g, in);
      for (auto& gi : grads)
        if (gi.defined()) gi = mul_scalar(gi, 1.5);
      return grads;
    };
  } else {
    out.impl_->backward = std::move(backward);
  }
  return out;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

const Tensor& GradMap::at(const Tensor& leaf) const {
  auto it = grads_.find(leaf.handle());
  if (it == grads_.end()) throw ContractError("no gradient recorded for this tensor");
  return it->second;
}

std::vector<const void*> GradMap::handles() const {
  std::vector<const void*> out;
  out.reserve(grads_.size());
  for (const auto& [k, v] : grads_) out.push_back(k);
  return out;
}

void testing::set_backward_fault(const std::string& op_name) { g_fault_op = op_name; }

// ---- reverse pass ----------------------------------------------------------

struct TapeAccess {
  using ImplPtr = Tensor::Impl*;

  static ImplPtr node(const Tensor& t) { return t.impl_.get(); }

  // Reachable differentiable nodes in reverse topological order.
  static std::vector<ImplPtr> reverse_order(const Tensor& root) {
    std::vector<ImplPtr> nodes;
    std::unordered_map<ImplPtr, bool> seen;
    std::vector<ImplPtr> stack{root.impl_.get()};
    seen[root.impl_.get()] = true;
    while (!stack.empty()) {
      ImplPtr n = stack.back();
      stack.pop_back();
      nodes.push_back(n);
      for (const Tensor& in : n->inputs) {
        ImplPtr p = in.impl_.get();
        if (!in.requires_grad() || seen[p]) continue;
        seen[p] = true;
        stack.push_back(p);
      }
    }
    std::sort(nodes.begin(), nodes.end(), [](ImplPtr a, ImplPtr b) { return a->seq > b->seq; });
    return nodes;
  }

  static std::unordered_map<ImplPtr, Tensor> run(const Tensor& root, bool retain_graph,
                                                 const std::unordered_map<ImplPtr, bool>& wanted) {
    if (!root.defined() || root.numel() != 1)
      throw ContractError("backward root must be a scalar, got shape " +
                          (root.defined() ? to_string(root.shape()) : std::string("<undefined>")));
    std::unordered_map<ImplPtr, Tensor> grads;
    if (!root.requires_grad()) return grads;
    GradModeGuard mode(retain_graph);
    grads[root.impl_.get()] = Tensor::full(root.shape(), 1.0);
    for (ImplPtr node : reverse_order(root)) {
      auto it = grads.find(node);
      if (it == grads.end()) continue;
      if (!node->backward) continue;
      Tensor g = it->second;
      if (!wanted.count(node)) grads.erase(it);
      TensorList in_grads = node->backward(g, node->inputs);
      for (std::size_t i = 0; i < node->inputs.size(); ++i) {
        const Tensor& input = node->inputs[i];
        if (!input.requires_grad() || i >= in_grads.size() || !in_grads[i].defined()) continue;
        if (in_grads[i].shape() != input.shape())
          throw ShapeError("backward of '" + node->op + "' produced gradient " + to_string(in_grads[i].shape()) +
                           " for input " + to_string(input.shape()));
        ImplPtr p = input.impl_.get();
        auto slot = grads.find(p);
        if (slot == grads.end())
          grads.emplace(p, in_grads[i]);
        else
          slot->second = add(slot->second, in_grads[i]);
      }
    }
    return grads;
  }
};

GradMap backward(const Tensor& root, bool retain_graph) {
  auto grads = TapeAccess::run(root, retain_graph, {});
  GradMap map;
  for (auto& [node, g] : grads)
    if (!node->backward) map.insert(node, std::move(g));
  return map;
}

TensorList grad(const Tensor& root, std::span<const Tensor> wrt, bool retain_graph) {
  std::unordered_map<TapeAccess::ImplPtr, bool> wanted;
  for (const Tensor& w : wrt) wanted[TapeAccess::node(w)] = true;
  auto grads = TapeAccess::run(root, retain_graph, wanted);
  TensorList out;
  out.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    auto it = grads.find(TapeAccess::node(w));
    out.push_back(it != grads.end() ? it->second : Tensor::zeros(w.shape()));
  }
  return out;
}

}  // namespace reladiff
