#include "hxbcos/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace hxb {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  impl_->data.assign(hxb::numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<TensorImpl>()) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (hxb::numel(shape) != values.size()) {
    throw ShapeError("shape " + to_string(shape) + " needs " + std::to_string(hxb::numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.impl_->data) v = dist(rng);
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.impl_->data) v = dist(rng);
  return t;
}

TensorImpl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return *impl_;
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= dim()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  }
  return shape()[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return impl().data[0];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) {
    throw ShapeError("index rank " + std::to_string(index.size()) + " does not match " + to_string(s));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw std::out_of_range("index out of range for " + to_string(s));
    off = off * s[axis] + i;
    ++axis;
  }
  return off;
}

double Tensor::at(std::initializer_list<std::size_t> index) const { return impl().data[offset(index)]; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be set on leaf tensors");
  impl().requires_grad = flag;
  return *this;
}

Tensor& Tensor::retain_grad() {
  impl().retain_grad = true;
  return *this;
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor(shape(), impl().grad);
}

Tensor Tensor::clone() const {
  Tensor t(shape(), impl().data);
  return t;
}

Tensor Tensor::reshape(Shape new_shape) const {
  if (hxb::numel(new_shape) != numel()) {
    throw ShapeError("cannot reshape " + to_string(shape()) + " to " + to_string(new_shape));
  }
  return make_result(std::move(new_shape), impl().data, "reshape", {*this},
                     [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                       auto& dst = *gi[0];
                       for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                     });
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::string op,
                           std::vector<Tensor> inputs, Node::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!needs) return out;
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl_->grad_fn = std::move(node);
  return out;
}

Tensor detach(const Tensor& t) {
  Tensor out(t.shape(), t.impl().data);
  out.impl_->detached = true;
  return out;
}

namespace {

// Reverse sweep from a single-element root. With `targets` set, only paths that
// reach one of them are followed and gradients are returned for them instead
// of being accumulated into leaves.
std::unordered_map<TensorImpl*, std::vector<double>> sweep(TensorImpl* root,
                                                           const std::unordered_set<TensorImpl*>* targets) {
  // Post-order over the graph: every tensor appears after all of its inputs.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  struct Frame {
    TensorImpl* t;
    std::size_t next;
  };
  auto needs_grad = [](const Tensor& in) { return in.defined() && in.requires_grad(); };
  std::vector<Frame> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& top = stack.back();
    const auto& fn = top.t->grad_fn;
    if (fn && top.next < fn->inputs.size()) {
      const Tensor& in = fn->inputs[top.next++];
      auto* impl = const_cast<TensorImpl*>(in.id());
      if (needs_grad(in) && seen.insert(impl).second) stack.push_back({impl, 0});
      continue;
    }
    order.push_back(top.t);
    stack.pop_back();
  }

  std::unordered_set<TensorImpl*> reaches;
  if (targets) {
    for (TensorImpl* t : order) {
      bool r = targets->count(t) > 0;
      if (!r && t->grad_fn) {
        for (const auto& in : t->grad_fn->inputs) {
          if (in.defined() && reaches.count(const_cast<TensorImpl*>(in.id()))) {
            r = true;
            break;
          }
        }
      }
      if (r) reaches.insert(t);
    }
  }

  std::unordered_map<TensorImpl*, std::vector<double>> result;
  std::unordered_map<TensorImpl*, std::vector<double>> grads;
  grads[root] = std::vector<double>(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    auto found = grads.find(t);
    if (found == grads.end()) continue;
    std::vector<double> g = std::move(found->second);
    grads.erase(found);

    if (targets) {
      if (targets->count(t)) {
        auto& dst = result[t];
        if (dst.empty()) dst.assign(g.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
    } else if (!t->grad_fn || t->retain_grad) {
      if (t->grad_fn || t->requires_grad) {
        if (t->grad.empty()) t->grad.assign(g.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) t->grad[i] += g[i];
      }
    }
    if (!t->grad_fn) continue;

    auto& inputs = t->grad_fn->inputs;
    std::vector<std::vector<double>*> slots(inputs.size(), nullptr);
    bool any = false;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!needs_grad(inputs[i])) continue;
      auto* impl = const_cast<TensorImpl*>(inputs[i].id());
      if (targets && !reaches.count(impl)) continue;
      auto& buf = grads[impl];
      if (buf.empty()) buf.assign(inputs[i].numel(), 0.0);
      slots[i] = &buf;
      any = true;
    }
    if (any) t->grad_fn->backward(g, slots);
  }
  return result;
}

}  // namespace

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() needs a single-element tensor, got shape " + to_string(shape()));
  }
  if (!requires_grad()) return;
  sweep(impl_.get(), nullptr);
}

std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs) {
  if (output.numel() != 1) {
    throw ShapeError("grad() needs a single-element output, got shape " + to_string(output.shape()));
  }
  std::unordered_set<TensorImpl*> targets;
  for (const auto& in : inputs) targets.insert(const_cast<TensorImpl*>(in.id()));
  std::unordered_map<TensorImpl*, std::vector<double>> found;
  if (output.requires_grad()) found = sweep(const_cast<TensorImpl*>(output.id()), &targets);
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto it = found.find(const_cast<TensorImpl*>(in.id()));
    out.push_back(it == found.end() ? Tensor::zeros(in.shape()) : Tensor(in.shape(), it->second));
  }
  return out;
}

}  // namespace hxb
