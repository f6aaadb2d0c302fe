#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mcnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

// One vertex of the dynamic computation graph. Values are fixed once the
// node is built; only `grad` (and leaf values, through the optimizer) change.
struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  bool is_leaf() const { return !backward; }
  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense row-major tensor of 64-bit floats. Copies are cheap handles sharing
// the same node; use `detach()` for an independent value copy.
class Tensor {
 public:
  // Scalar zero.
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->values.size(); }

  std::span<const double> values() const { return node_->values; }
  // In-place access for leaf tensors (parameter updates, perturbation in
  // gradient checks). Throws for tensors produced by an operation.
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t flat_index) const { return node_->values[flat_index]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool requires_grad);
  bool is_leaf() const { return node_->is_leaf(); }

  bool has_grad() const { return !node_->grad.empty(); }
  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  Tensor detach() const;
  const char* op_name() const { return node_->op; }
  const void* id() const { return node_.get(); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Ordered list of graph nodes reachable from a root. Every node appears after
// all of its inputs, and each node appears once.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::shared_ptr<detail::Node>>& nodes() const { return nodes_; }

  // Seeds d(root)/d(root) = 1 and replays backward rules in reverse order.
  // Gradients of leaf tensors accumulate; interior gradients are released.
  void backward();

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

// Computes d(root)/d(t) for every leaf t with requires_grad set. Root must
// hold a single element.
void backward(const Tensor& root);

// Whether newly created operation results are recorded for differentiation
// on this thread.
bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Builds the result node for an operation: records inputs and the backward
// rule only when recording is on and some input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                   std::vector<Tensor> inputs, std::function<void(Node&)> backward);

void accumulate(Node& node, std::span<const double> delta);

}  // namespace detail

}  // namespace mcnn
