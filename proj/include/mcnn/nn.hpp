#pragma once

#include <cstdint>
#include <string>

#include "mcnn/tensor.hpp"

namespace mcnn {

enum class Padding { kSame, kValid };
enum class Mode { kTrain, kInfer };

enum class LayerKind { kConv2d, kBatchNorm, kMaxPool, kGlobalAvgPool, kDense, kDropout, kActivation, kFlatten };
enum class Activation { kNone, kRelu, kSigmoid, kSoftmax };

std::string to_string(LayerKind kind);
std::string to_string(Activation activation);

// Description of one layer of a sequential model. Only the fields relevant
// to `kind` are meaningful.
struct LayerSpec {
  LayerKind kind = LayerKind::kConv2d;
  std::string name;
  std::size_t filters = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  Padding padding = Padding::kSame;
  double rate = 0.0;
  double l2 = 0.0;
  std::size_t units = 0;
  Activation activation = Activation::kNone;

  // Throws InvalidArgument when hyperparameters are out of range.
  void validate() const;
};

// input [N,H,W,Cin], kernel [kh,kw,Cin,Cout], bias [Cout] -> [N,OH,OW,Cout].
// 'same' zero-pads so OH = ceil(H / stride), with the odd pixel of padding
// at the bottom/right.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride = 1,
              Padding padding = Padding::kSame);

struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor moving_mean;
  Tensor moving_var;
  double momentum = 0.99;
  double epsilon = 1e-3;

  static BatchNormState create(std::size_t channels, double momentum = 0.99, double epsilon = 1e-3);
  std::size_t channels() const { return gamma.numel(); }
};

// Normalizes over every axis but the last. Train mode uses batch statistics
// and folds them into the moving statistics; infer mode uses the moving ones.
Tensor batchnorm(const Tensor& input, BatchNormState& state, Mode mode);

// 2x2 window, stride 2; a trailing odd row/column is dropped.
Tensor maxpool2d(const Tensor& input);

// [N,H,W,C] -> [N,C].
Tensor global_avg_pool(const Tensor& input);

struct DenseOutput {
  Tensor output;
  Tensor l2_penalty;  // l2 * sum(W^2); bias excluded
};

DenseOutput dense(const Tensor& input, const Tensor& weights, const Tensor& bias, double l2 = 0.0);

// Inverted dropout: survivors are scaled by 1 / (1 - rate) in train mode.
Tensor dropout(const Tensor& input, double rate, Mode mode, std::uint64_t seed);

// Row-wise softmax of [N,K].
Tensor softmax(const Tensor& input);

// [N, ...] -> [N, prod(...)].
Tensor flatten(const Tensor& input);

}  // namespace mcnn
