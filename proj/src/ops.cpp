#include "mcnn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mcnn/errors.hpp"
#include "mcnn/grad_check.hpp"

namespace mcnn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

// For every flat index of `out`, the flat index of the element of `in` that
// broadcasts onto it.
std::vector<std::size_t> broadcast_index_map(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t running = 1;
  for (std::size_t axis = in.size(); axis-- > 0;) {
    if (in[axis] != 1) stride[axis + offset] = running;
    running *= in[axis];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> index(rank, 0);
  std::size_t flat_in = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = flat_in;
    for (std::size_t axis = rank; axis-- > 0;) {
      ++index[axis];
      flat_in += stride[axis];
      if (index[axis] < out[axis]) break;
      flat_in -= stride[axis] * index[axis];
      index[axis] = 0;
    }
  }
  return map;
}

Tensor binary(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  const bool same = a.shape() == out_shape && b.shape() == out_shape;
  std::vector<std::size_t> ia, ib;
  if (!same) {
    ia = broadcast_index_map(a.shape(), out_shape);
    ib = broadcast_index_map(b.shape(), out_shape);
  }
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[same ? i : ia[i]];
    const double y = bv[same ? i : ib[i]];
    switch (op) {
      case ElementwiseOp::kAdd: out[i] = x + y; break;
      case ElementwiseOp::kSub: out[i] = x - y; break;
      case ElementwiseOp::kMul: out[i] = x * y; break;
      default: throw InvalidArgument("not a binary op");
    }
  }
  const char* name = op == ElementwiseOp::kAdd ? "add" : op == ElementwiseOp::kSub ? "sub" : "mul";
  return detail::make_result(
      out_shape, std::move(out), name, {a, b},
      [op, same, ia = std::move(ia), ib = std::move(ib)](detail::Node& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        const auto& g = self.grad;
        const std::size_t count = g.size();
        if (na.requires_grad) {
          auto& ga = na.ensure_grad();
          for (std::size_t i = 0; i < count; ++i) {
            const double local = op == ElementwiseOp::kMul ? nb.values[same ? i : ib[i]] : 1.0;
            ga[same ? i : ia[i]] += g[i] * local;
          }
        }
        if (nb.requires_grad) {
          auto& gb = nb.ensure_grad();
          for (std::size_t i = 0; i < count; ++i) {
            double local = 1.0;
            if (op == ElementwiseOp::kSub) local = -1.0;
            if (op == ElementwiseOp::kMul) local = na.values[same ? i : ia[i]];
            gb[same ? i : ib[i]] += g[i] * local;
          }
        }
      });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor unary(ElementwiseOp op, const Tensor& a) {
  auto av = a.values();
  std::vector<double> out(av.size());
  const char* name = "";
  switch (op) {
    case ElementwiseOp::kRelu:
      name = "relu";
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
      BranchRecorder::record_signs(av);
      break;
    case ElementwiseOp::kSigmoid:
      name = "sigmoid";
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = stable_sigmoid(av[i]);
      break;
    case ElementwiseOp::kExp:
      name = "exp";
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::exp(av[i]);
      break;
    case ElementwiseOp::kLog:
      name = "log";
      for (std::size_t i = 0; i < av.size(); ++i) {
        if (!(av[i] > 0.0)) throw InvalidArgument("log of a non-positive value");
        out[i] = std::log(av[i]);
      }
      break;
    default:
      throw InvalidArgument("not a unary op");
  }
  return detail::make_result(a.shape(), std::move(out), name, {a}, [op](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& gi = in.ensure_grad();
    const auto& g = self.grad;
    const auto& x = in.values;
    const auto& y = self.values;
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (op) {
        case ElementwiseOp::kRelu: gi[i] += x[i] > 0.0 ? g[i] : 0.0; break;
        case ElementwiseOp::kSigmoid: gi[i] += g[i] * y[i] * (1.0 - y[i]); break;
        case ElementwiseOp::kExp: gi[i] += g[i] * y[i]; break;
        case ElementwiseOp::kLog: gi[i] += g[i] / x[i]; break;
        default: break;
      }
    }
  });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw InvalidArgument("shapes " + shape_to_string(a) + " and " + shape_to_string(b) + " do not broadcast");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const std::optional<Tensor>& b) {
  switch (op) {
    case ElementwiseOp::kAdd:
    case ElementwiseOp::kSub:
    case ElementwiseOp::kMul:
      if (!b) throw InvalidArgument("binary elementwise op needs two operands");
      return binary(op, a, *b);
    default:
      return unary(op, a);
  }
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(ElementwiseOp::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(ElementwiseOp::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(ElementwiseOp::kMul, a, b); }
Tensor relu(const Tensor& a) { return unary(ElementwiseOp::kRelu, a); }
Tensor sigmoid(const Tensor& a) { return unary(ElementwiseOp::kSigmoid, a); }
Tensor exp(const Tensor& a) { return unary(ElementwiseOp::kExp, a); }
Tensor log(const Tensor& a) { return unary(ElementwiseOp::kLog, a); }

Tensor scale(const Tensor& a, double factor) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  return detail::make_result(a.shape(), std::move(out), "scale", {a}, [factor](detail::Node& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gi[i] += self.grad[i] * factor;
  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw InvalidArgument("clamp bounds out of order");
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::clamp(av[i], lo, hi);
  return detail::make_result(a.shape(), std::move(out), "clamp", {a}, [lo, hi](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& gi = in.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (in.values[i] >= lo && in.values[i] <= hi) gi[i] += self.grad[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw InvalidArgument("matmul needs rank-2 operands, got " + shape_to_string(a.shape()) + " and " +
                          shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw InvalidArgument("matmul inner extents differ: " + shape_to_string(a.shape()) + " x " +
                          shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MatrixMap(out.data(), m, n).noalias() = ConstMatrixMap(a.values().data(), m, k) * ConstMatrixMap(b.values().data(), k, n);
  return detail::make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    ConstMatrixMap g(self.grad.data(), m, n);
    if (na.requires_grad) {
      MatrixMap(na.ensure_grad().data(), m, k).noalias() += g * ConstMatrixMap(nb.values.data(), k, n).transpose();
    }
    if (nb.requires_grad) {
      MatrixMap(nb.ensure_grad().data(), k, n).noalias() += ConstMatrixMap(na.values.data(), m, k).transpose() * g;
    }
  });
}

Tensor reduce(ReduceOp op, const Tensor& t, const std::vector<std::size_t>& axes) {
  const Shape& in_shape = t.shape();
  const std::size_t rank = in_shape.size();
  std::vector<bool> reduced(rank, false);
  for (std::size_t axis : axes) {
    if (axis >= rank) throw InvalidArgument("reduce axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
    if (reduced[axis]) throw InvalidArgument("reduce axis " + std::to_string(axis) + " listed twice");
    reduced[axis] = true;
  }
  Shape out_shape;
  std::vector<std::size_t> out_stride(rank, 0);
  std::size_t count = 1;
  for (std::size_t axis = 0; axis < rank; ++axis) {
    if (reduced[axis]) count *= in_shape[axis];
    else out_shape.push_back(in_shape[axis]);
  }
  {
    std::size_t running = 1;
    for (std::size_t axis = rank; axis-- > 0;) {
      if (!reduced[axis]) {
        out_stride[axis] = running;
        running *= in_shape[axis];
      }
    }
  }
  const std::size_t n_in = t.numel();
  const std::size_t n_out = shape_numel(out_shape);
  // Output slot of every input element, walked in row-major order.
  std::vector<std::size_t> target(n_in);
  {
    std::vector<std::size_t> index(rank, 0);
    std::size_t flat_out = 0;
    for (std::size_t i = 0; i < n_in; ++i) {
      target[i] = flat_out;
      for (std::size_t axis = rank; axis-- > 0;) {
        ++index[axis];
        flat_out += out_stride[axis];
        if (index[axis] < in_shape[axis]) break;
        flat_out -= out_stride[axis] * index[axis];
        index[axis] = 0;
      }
    }
  }
  auto x = t.values();
  std::vector<double> out(n_out, op == ReduceOp::kMax ? -std::numeric_limits<double>::infinity() : 0.0);
  std::vector<std::size_t> argmax;
  if (op == ReduceOp::kMax) {
    argmax.assign(n_out, 0);
    std::vector<bool> seen(n_out, false);
    for (std::size_t i = 0; i < n_in; ++i) {
      const std::size_t o = target[i];
      if (!seen[o] || x[i] > out[o]) {
        out[o] = x[i];
        argmax[o] = i;
        seen[o] = true;
      }
    }
    BranchRecorder::record_choices(argmax);
  } else {
    for (std::size_t i = 0; i < n_in; ++i) out[target[i]] += x[i];
    if (op == ReduceOp::kMean) {
      for (double& v : out) v /= static_cast<double>(count);
    }
  }
  const char* name = op == ReduceOp::kSum ? "sum" : op == ReduceOp::kMean ? "mean" : "max";
  return detail::make_result(
      std::move(out_shape), std::move(out), name, {t},
      [op, count, target = std::move(target), argmax = std::move(argmax)](detail::Node& self) {
        auto& gi = self.inputs[0]->ensure_grad();
        const auto& g = self.grad;
        if (op == ReduceOp::kMax) {
          for (std::size_t o = 0; o < g.size(); ++o) gi[argmax[o]] += g[o];
          return;
        }
        const double factor = op == ReduceOp::kMean ? 1.0 / static_cast<double>(count) : 1.0;
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[target[i]] * factor;
      });
}

Tensor sum(const Tensor& t) {
  std::vector<std::size_t> axes(t.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(ReduceOp::kSum, t, axes);
}

Tensor mean(const Tensor& t) {
  std::vector<std::size_t> axes(t.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(ReduceOp::kMean, t, axes);
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) {
    throw InvalidArgument("cannot reshape " + shape_to_string(t.shape()) + " to " + shape_to_string(shape));
  }
  std::vector<double> out(t.values().begin(), t.values().end());
  return detail::make_result(std::move(shape), std::move(out), "reshape", {t}, [](detail::Node& self) {
    detail::accumulate(*self.inputs[0], self.grad);
  });
}

}  // namespace mcnn
