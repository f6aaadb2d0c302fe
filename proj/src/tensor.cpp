#include "mcnn/tensor.hpp"

#include <sstream>
#include <unordered_set>
#include <utility>

#include "mcnn/errors.hpp"

namespace mcnn {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
  return grad;
}

Tensor::Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw InvalidArgument("tensor extents must be positive: " + shape_to_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw InvalidArgument("shape " + shape_to_string(shape) + " does not match " +
                          std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor(Shape{}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw InvalidArgument("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape()));
  return node_->shape[axis];
}

std::span<double> Tensor::mutable_values() {
  if (!node_->is_leaf()) throw InvalidArgument(std::string("cannot mutate the result of '") + node_->op + "'");
  return node_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw InvalidArgument("item() requires a single-element tensor, got " + shape_to_string(shape()));
  return node_->values[0];
}

Tensor& Tensor::set_requires_grad(bool requires_grad) {
  if (!node_->is_leaf()) throw InvalidArgument("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = requires_grad;
  return *this;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->values); }

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.requires_grad()) return tape;
  // Iterative post-order DFS; a node is emitted once all its inputs are.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next_input] = stack.back();
    if (next_input < node->inputs.size()) {
      const auto& input = node->inputs[next_input++];
      if (input->requires_grad && visited.insert(input.get()).second) {
        stack.emplace_back(input, 0);
      }
      continue;
    }
    tape.nodes_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

void Tape::backward() {
  if (nodes_.empty()) return;
  auto& root = nodes_.back();
  root->ensure_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& node = **it;
    if (node.is_leaf()) continue;
    if (!node.grad.empty()) node.backward(node);
    std::vector<double>().swap(node.grad);
  }
}

void backward(const Tensor& root) {
  if (root.numel() != 1) {
    throw InvalidArgument("backward requires a scalar root, got " + shape_to_string(root.shape()));
  }
  Tape::record(root).backward();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Tensor make_result(Shape shape, std::vector<double> values, const char* op, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward) {
  Tensor result(std::move(shape), std::move(values));
  bool track = false;
  if (g_grad_enabled) {
    for (const Tensor& input : inputs) track = track || input.requires_grad();
  }
  auto& node = *result.node();
  node.op = op;
  if (track) {
    node.requires_grad = true;
    node.inputs.reserve(inputs.size());
    for (const Tensor& input : inputs) node.inputs.push_back(input.node());
    node.backward = std::move(backward);
  }
  return result;
}

void accumulate(Node& node, std::span<const double> delta) {
  auto& grad = node.ensure_grad();
  for (std::size_t i = 0; i < delta.size(); ++i) grad[i] += delta[i];
}

}  // namespace detail

}  // namespace mcnn
