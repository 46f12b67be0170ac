#pragma once

// Dense row-major float64 tensors with tape-based reverse-mode differentiation.
//
// Every op returns a new Tensor. When gradient recording is enabled and at least
// one input requires a gradient, the result remembers its inputs and a backward
// rule. backward(loss) replays those rules in reverse creation order, which is a
// valid topological order because inputs are always created before results.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ddf2pol {

class Shape {
 public:
  Shape() = default;  // rank 0, one element
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t numel() const;
  std::string str() const;

  bool operator==(const Shape&) const = default;

 private:
  std::vector<std::size_t> dims_;
};

namespace detail {

struct Node {
  std::uint64_t id = 0;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  /// Mutable access for leaves: initialization, optimizer updates, buffers.
  std::span<double> mutable_values() { return node_->value; }
  /// Empty when no gradient has reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  /// A new leaf that shares no history with this tensor.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

  /// Builds an op result, attaching `parents` and `backward` only if recording.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Real and imaginary parts of a complex tensor.
struct ComplexPair {
  Tensor re;
  Tensor im;

  ComplexPair() = default;
  ComplexPair(Tensor re_part, Tensor im_part);
  const Shape& shape() const { return re.shape(); }
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Elementwise. Binary ops broadcast numpy-style: shapes are right-aligned and an
// extent of 1 stretches to match the other operand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor negate(const Tensor& a);
Tensor scale(const Tensor& a, double c);

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
/// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

/// Mean over `axes`. An empty axis list returns the input unchanged.
Tensor reduce_mean(const Tensor& a, std::vector<std::size_t> axes, bool keep_dims = false);
Tensor sum(const Tensor& a);

/// (N,K) x (K,M) -> (N,M).
Tensor matmul(const Tensor& a, const Tensor& b);

/// Populates grad buffers of every leaf reachable from a one-element `loss`.
/// Gradients accumulate across calls until zero_grad().
void backward(const Tensor& loss);

}  // namespace ddf2pol
