#include "mcnn/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "mcnn/errors.hpp"
#include "mcnn/grad_check.hpp"
#include "mcnn/ops.hpp"
#include "mcnn/random.hpp"

namespace mcnn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

struct ConvGeometry {
  std::size_t n, h, w, c_in;
  std::size_t kh, kw, c_out;
  std::size_t out_h, out_w;
  std::size_t stride;
  long pad_top, pad_left;

  std::size_t patch() const { return kh * kw * c_in; }
  std::size_t out_pixels() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t stride, Padding padding) {
  ConvGeometry g{};
  g.n = input[0];
  g.h = input[1];
  g.w = input[2];
  g.c_in = input[3];
  g.kh = kernel[0];
  g.kw = kernel[1];
  g.c_out = kernel[3];
  g.stride = stride;
  if (padding == Padding::kSame) {
    g.out_h = (g.h + stride - 1) / stride;
    g.out_w = (g.w + stride - 1) / stride;
    const long pad_h = std::max<long>(static_cast<long>((g.out_h - 1) * stride + g.kh) - static_cast<long>(g.h), 0);
    const long pad_w = std::max<long>(static_cast<long>((g.out_w - 1) * stride + g.kw) - static_cast<long>(g.w), 0);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
    if (g.kh > g.h + static_cast<std::size_t>(pad_h) || g.kw > g.w + static_cast<std::size_t>(pad_w)) {
      throw InvalidArgument("conv2d: kernel larger than padded input");
    }
  } else {
    if (g.kh > g.h || g.kw > g.w) throw InvalidArgument("conv2d: kernel larger than input for 'valid' padding");
    g.out_h = (g.h - g.kh) / stride + 1;
    g.out_w = (g.w - g.kw) / stride + 1;
    g.pad_top = 0;
    g.pad_left = 0;
  }
  return g;
}

// Patch matrix of one image: row = output pixel, column = (ky, kx, c_in).
void im2col(const ConvGeometry& g, const double* image, double* col) {
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      double* row = col + (oy * g.out_w + ox) * g.patch();
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const long iy = static_cast<long>(oy * g.stride + ky) - g.pad_top;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const long ix = static_cast<long>(ox * g.stride + kx) - g.pad_left;
          double* dst = row + (ky * g.kw + kx) * g.c_in;
          if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.h) || ix >= static_cast<long>(g.w)) {
            std::fill(dst, dst + g.c_in, 0.0);
          } else {
            const double* src = image + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.c_in;
            std::copy(src, src + g.c_in, dst);
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* image) {
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const double* row = col + (oy * g.out_w + ox) * g.patch();
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const long iy = static_cast<long>(oy * g.stride + ky) - g.pad_top;
        if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const long ix = static_cast<long>(ox * g.stride + kx) - g.pad_left;
          if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
          const double* src = row + (ky * g.kw + kx) * g.c_in;
          double* dst = image + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.c_in;
          for (std::size_t c = 0; c < g.c_in; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw InvalidArgument(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                          shape_to_string(t.shape()));
  }
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kGlobalAvgPool: return "gap";
    case LayerKind::kDense: return "dense";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kActivation: return "activation";
    case LayerKind::kFlatten: return "flatten";
  }
  return "unknown";
}

std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::kNone: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftmax: return "softmax";
  }
  return "unknown";
}

void LayerSpec::validate() const {
  switch (kind) {
    case LayerKind::kConv2d:
      if (filters == 0) throw InvalidArgument(name + ": conv filters must be positive");
      if (kernel == 0 || kernel % 2 == 0) throw InvalidArgument(name + ": conv kernel extent must be odd and positive");
      if (stride == 0) throw InvalidArgument(name + ": stride must be at least 1");
      if (l2 < 0.0) throw InvalidArgument(name + ": l2 must be non-negative");
      break;
    case LayerKind::kDense:
      if (units == 0) throw InvalidArgument(name + ": dense units must be positive");
      if (l2 < 0.0) throw InvalidArgument(name + ": l2 must be non-negative");
      break;
    case LayerKind::kDropout:
      if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument(name + ": dropout rate must lie in [0, 1)");
      break;
    default:
      break;
  }
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride, Padding padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  require_rank(bias, 1, "conv2d bias");
  if (stride == 0) throw InvalidArgument("conv2d: stride must be at least 1");
  if (input.dim(3) != kernel.dim(2)) {
    throw InvalidArgument("conv2d: input has " + std::to_string(input.dim(3)) + " channels but kernel expects " +
                          std::to_string(kernel.dim(2)));
  }
  if (bias.dim(0) != kernel.dim(3)) throw InvalidArgument("conv2d: bias extent does not match kernel output channels");

  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), stride, padding);
  const std::size_t in_image = g.h * g.w * g.c_in;
  const std::size_t out_image = g.out_pixels() * g.c_out;
  std::vector<double> out(g.n * out_image);
  std::vector<double> col(g.out_pixels() * g.patch());
  ConstMatrixMap weights(kernel.values().data(), g.patch(), g.c_out);
  Eigen::Map<const Eigen::RowVectorXd> bias_row(bias.values().data(), g.c_out);
  for (std::size_t b = 0; b < g.n; ++b) {
    im2col(g, input.values().data() + b * in_image, col.data());
    MatrixMap result(out.data() + b * out_image, g.out_pixels(), g.c_out);
    result.noalias() = ConstMatrixMap(col.data(), g.out_pixels(), g.patch()) * weights;
    result.rowwise() += bias_row;
  }

  return detail::make_result({g.n, g.out_h, g.out_w, g.c_out}, std::move(out), "conv2d", {input, kernel, bias},
                             [g](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& ker = *self.inputs[1];
    auto& bi = *self.inputs[2];
    const std::size_t in_image = g.h * g.w * g.c_in;
    const std::size_t out_image = g.out_pixels() * g.c_out;
    std::vector<double> col(g.out_pixels() * g.patch());
    std::vector<double> dcol;
    if (in.requires_grad) dcol.resize(col.size());
    ConstMatrixMap weights(ker.values.data(), g.patch(), g.c_out);
    for (std::size_t b = 0; b < g.n; ++b) {
      ConstMatrixMap grad_out(self.grad.data() + b * out_image, g.out_pixels(), g.c_out);
      if (ker.requires_grad) {
        im2col(g, in.values.data() + b * in_image, col.data());
        MatrixMap(ker.ensure_grad().data(), g.patch(), g.c_out).noalias() +=
            ConstMatrixMap(col.data(), g.out_pixels(), g.patch()).transpose() * grad_out;
      }
      if (bi.requires_grad) {
        // Plain loop: Eigen's colwise sum vectorises by address alignment,
        // which makes the rounding depend on where the buffer landed.
        std::vector<double>& gb = bi.ensure_grad();
        const double* row = self.grad.data() + b * out_image;
        for (std::size_t p = 0; p < g.out_pixels(); ++p, row += g.c_out) {
          for (std::size_t c = 0; c < g.c_out; ++c) gb[c] += row[c];
        }
      }
      if (in.requires_grad) {
        MatrixMap(dcol.data(), g.out_pixels(), g.patch()).noalias() = grad_out * weights.transpose();
        col2im_add(g, dcol.data(), in.ensure_grad().data() + b * in_image);
      }
    }
  });
}

BatchNormState BatchNormState::create(std::size_t channels, double momentum, double epsilon) {
  if (channels == 0) throw InvalidArgument("batchnorm needs at least one channel");
  if (!(epsilon > 0.0)) throw InvalidArgument("batchnorm epsilon must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw InvalidArgument("batchnorm momentum must lie in [0, 1]");
  BatchNormState state;
  state.gamma = Tensor::full({channels}, 1.0, true);
  state.beta = Tensor::zeros({channels}, true);
  state.moving_mean = Tensor::zeros({channels});
  state.moving_var = Tensor::full({channels}, 1.0);
  state.momentum = momentum;
  state.epsilon = epsilon;
  return state;
}

Tensor batchnorm(const Tensor& input, BatchNormState& state, Mode mode) {
  if (input.rank() != 2 && input.rank() != 4) {
    throw InvalidArgument("batchnorm expects [N,C] or [N,H,W,C], got " + shape_to_string(input.shape()));
  }
  const std::size_t channels = input.shape().back();
  if (channels != state.channels() || state.beta.numel() != channels || state.moving_mean.numel() != channels ||
      state.moving_var.numel() != channels) {
    throw InvalidArgument("batchnorm: state has " + std::to_string(state.channels()) + " channels, input has " +
                          std::to_string(channels));
  }
  if (!(state.epsilon > 0.0)) throw InvalidArgument("batchnorm epsilon must be positive");
  if (mode == Mode::kTrain && input.dim(0) < 2) {
    throw InvalidArgument("batchnorm in train mode needs a batch of at least 2");
  }
  const std::size_t rows = input.numel() / channels;
  auto x = input.values();
  auto gamma = state.gamma.values();
  auto beta = state.beta.values();

  std::vector<double> mean(channels, 0.0), var(channels, 0.0);
  if (mode == Mode::kTrain) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < channels; ++c) mean[c] += x[r * channels + c];
    }
    for (double& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = x[r * channels + c] - mean[c];
        var[c] += d * d;
      }
    }
    for (double& v : var) v /= static_cast<double>(rows);
    auto mm = state.moving_mean.mutable_values();
    auto mv = state.moving_var.mutable_values();
    for (std::size_t c = 0; c < channels; ++c) {
      mm[c] = state.momentum * mm[c] + (1.0 - state.momentum) * mean[c];
      mv[c] = state.momentum * mv[c] + (1.0 - state.momentum) * var[c];
    }
  } else {
    auto mm = state.moving_mean.values();
    auto mv = state.moving_var.values();
    std::copy(mm.begin(), mm.end(), mean.begin());
    std::copy(mv.begin(), mv.end(), var.begin());
  }
  std::vector<double> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + state.epsilon);

  std::vector<double> xhat(x.size());
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      xhat[i] = (x[i] - mean[c]) * inv_std[c];
      out[i] = gamma[c] * xhat[i] + beta[c];
    }
  }

  const bool batch_stats = mode == Mode::kTrain;
  return detail::make_result(
      input.shape(), std::move(out), "batchnorm", {input, state.gamma, state.beta},
      [channels, rows, batch_stats, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& in = *self.inputs[0];
        auto& gamma_node = *self.inputs[1];
        auto& beta_node = *self.inputs[2];
        const auto& g = self.grad;
        std::vector<double> sum_g(channels, 0.0), sum_gx(channels, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t i = r * channels + c;
            sum_g[c] += g[i];
            sum_gx[c] += g[i] * xhat[i];
          }
        }
        if (gamma_node.requires_grad) detail::accumulate(gamma_node, sum_gx);
        if (beta_node.requires_grad) detail::accumulate(beta_node, sum_g);
        if (!in.requires_grad) return;
        auto& gi = in.ensure_grad();
        const auto& gamma = gamma_node.values;
        const double n = static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t i = r * channels + c;
            if (batch_stats) {
              gi[i] += gamma[c] * inv_std[c] / n * (n * g[i] - sum_g[c] - xhat[i] * sum_gx[c]);
            } else {
              gi[i] += gamma[c] * inv_std[c] * g[i];
            }
          }
        }
      });
}

Tensor maxpool2d(const Tensor& input) {
  require_rank(input, 4, "maxpool2d input");
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
  if (h < 2 || w < 2) throw InvalidArgument("maxpool2d needs H and W of at least 2, got " + shape_to_string(input.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  auto x = input.values();
  std::vector<double> out(n * oh * ow * c);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t o = ((b * oh + oy) * ow + ox) * c + ch;
          std::size_t best = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
              if (x[i] > x[best]) best = i;
            }
          }
          out[o] = x[best];
          argmax[o] = best;
        }
      }
    }
  }
  BranchRecorder::record_choices(argmax);
  return detail::make_result({n, oh, ow, c}, std::move(out), "maxpool2d", {input},
                             [argmax = std::move(argmax)](detail::Node& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < argmax.size(); ++o) gi[argmax[o]] += self.grad[o];
  });
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool input");
  const std::size_t n = input.dim(0), hw = input.dim(1) * input.dim(2), c = input.dim(3);
  auto x = input.values();
  std::vector<double> out(n * c, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) out[b * c + ch] += x[(b * hw + p) * c + ch];
    }
  }
  for (double& v : out) v /= static_cast<double>(hw);
  return detail::make_result({n, c}, std::move(out), "global_avg_pool", {input}, [n, hw, c](detail::Node& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    const double factor = 1.0 / static_cast<double>(hw);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t p = 0; p < hw; ++p) {
        for (std::size_t ch = 0; ch < c; ++ch) gi[(b * hw + p) * c + ch] += self.grad[b * c + ch] * factor;
      }
    }
  });
}

DenseOutput dense(const Tensor& input, const Tensor& weights, const Tensor& bias, double l2) {
  require_rank(input, 2, "dense input");
  require_rank(weights, 2, "dense weights");
  require_rank(bias, 1, "dense bias");
  if (input.dim(1) != weights.dim(0)) {
    throw InvalidArgument("dense: input width " + std::to_string(input.dim(1)) + " does not match weights " +
                          shape_to_string(weights.shape()));
  }
  if (bias.dim(0) != weights.dim(1)) throw InvalidArgument("dense: bias extent does not match units");
  if (l2 < 0.0) throw InvalidArgument("dense: l2 must be non-negative");
  DenseOutput result{add(matmul(input, weights), bias), Tensor::scalar(0.0)};
  if (l2 > 0.0) result.l2_penalty = scale(sum(mul(weights, weights)), l2);
  return result;
}

Tensor dropout(const Tensor& input, double rate, Mode mode, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout rate must lie in [0, 1)");
  if (mode == Mode::kInfer || rate == 0.0) return input;
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(input.numel());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  auto x = input.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  return detail::make_result(input.shape(), std::move(out), "dropout", {input}, [mask = std::move(mask)](detail::Node& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < mask.size(); ++i) gi[i] += self.grad[i] * mask[i];
  });
}

Tensor softmax(const Tensor& input) {
  require_rank(input, 2, "softmax input");
  const std::size_t n = input.dim(0), k = input.dim(1);
  if (k < 2) throw InvalidArgument("softmax needs at least two classes");
  auto x = input.values();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = x.data() + r * k;
    const double top = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[r * k + j] = std::exp(row[j] - top);
      total += out[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= total;
  }
  return detail::make_result(input.shape(), std::move(out), "softmax", {input}, [n, k](detail::Node& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    const auto& y = self.values;
    const auto& g = self.grad;
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * y[r * k + j];
      for (std::size_t j = 0; j < k; ++j) gi[r * k + j] += y[r * k + j] * (g[r * k + j] - dot);
    }
  });
}

Tensor flatten(const Tensor& input) {
  if (input.rank() < 1) throw InvalidArgument("flatten needs a batch axis");
  if (input.rank() == 2) return input;
  return reshape(input, {input.dim(0), input.numel() / input.dim(0)});
}

}  // namespace mcnn
