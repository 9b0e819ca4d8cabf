#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hxb {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when operand shapes are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor;

/// One recorded operation in the computation graph.
///
/// `backward` receives the gradient of the node's output and accumulates the
/// chain-rule contribution into `grad_inputs[i]` for every input that needs a
/// gradient. Entries for inputs that need none are null.
struct Node {
  using BackwardFn = std::function<void(std::span<const double> grad_output,
                                        std::span<std::vector<double>* const> grad_inputs)>;
  std::string op;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool retain_grad = false;
  bool detached = false;
  std::shared_ptr<Node> grad_fn;
};

/// Dense row-major array of doubles with reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node,
/// which is what lets optimizer updates reach the parameters held by layers.
/// Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t dim() const { return impl().shape.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const { return impl().data.size(); }

  std::span<const double> data() const { return impl().data; }
  /// Writable view of the values; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data() { return impl().data; }
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl().requires_grad || impl().grad_fn != nullptr; }
  Tensor& set_requires_grad(bool flag);
  /// Keep the gradient of a non-leaf tensor after backward().
  Tensor& retain_grad();
  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const double> grad() const { return impl().grad; }
  Tensor grad_tensor() const;
  void zero_grad() { impl().grad.clear(); }

  bool is_leaf() const { return impl().grad_fn == nullptr; }
  bool is_detached() const { return impl().detached; }
  const std::shared_ptr<Node>& grad_fn() const { return impl().grad_fn; }

  Tensor clone() const;
  Tensor reshape(Shape shape) const;

  /// Reverse-mode sweep from this single-element tensor. Gradients accumulate
  /// into every reachable leaf that requires them.
  void backward() const;

  const TensorImpl* id() const { return impl_.get(); }

  /// Builds the result of an operation. A graph node is attached only when
  /// gradients are enabled and some input requires one.
  static Tensor make_result(Shape shape, std::vector<double> values, std::string op,
                            std::vector<Tensor> inputs, Node::BackwardFn backward);

 private:
  TensorImpl& impl() const;
  std::shared_ptr<TensorImpl> impl_;
  friend Tensor detach(const Tensor& t);
};

/// Values identical to `t`, treated as a constant under differentiation.
Tensor detach(const Tensor& t);

/// Gradients of a single-element `output` with respect to `inputs`, without
/// touching any stored .grad. Only graph paths that reach an input are
/// evaluated; unreachable inputs get zeros.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs);

bool grad_enabled();

/// Disables graph construction for its lifetime (inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Rounds to the nearest binary32 value; parameters live on this grid so that
/// checkpoints are lossless.
inline double round_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace hxb
