#pragma once

#include <optional>
#include <vector>

#include "mcnn/tensor.hpp"

namespace mcnn {

enum class ElementwiseOp { kAdd, kMul, kSub, kRelu, kSigmoid, kExp, kLog };
enum class ReduceOp { kSum, kMean, kMax };

// Binary ops broadcast numpy-style: shapes are right-aligned and any axis of
// extent 1 stretches to match. Unary ops ignore `b`.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const std::optional<Tensor>& b = std::nullopt);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

Tensor scale(const Tensor& a, double factor);
// Pass-through gradient inside [lo, hi], zero outside.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor matmul(const Tensor& a, const Tensor& b);

// Removes the reduced axes. An empty axis set returns a copy. Max sends the
// gradient to the first maximal element in row-major order.
Tensor reduce(ReduceOp op, const Tensor& t, const std::vector<std::size_t>& axes);
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);

Tensor reshape(const Tensor& t, Shape shape);

// Shape both operands broadcast to; throws InvalidArgument otherwise.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace mcnn
