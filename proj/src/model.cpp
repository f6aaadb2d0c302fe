#include "mcnn/model.hpp"

#include <cmath>
#include <sstream>
#include <iomanip>

#include "mcnn/errors.hpp"
#include "mcnn/ops.hpp"
#include "mcnn/random.hpp"

namespace mcnn {

namespace {

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.uniform(-limit, limit);
  return Tensor(std::move(shape), std::move(values), true);
}

}  // namespace

std::string to_string(Head head) { return head == Head::kSoftmax2 ? "softmax2" : "sigmoid1"; }

Head parse_head(const std::string& text) {
  if (text == "softmax2") return Head::kSoftmax2;
  if (text == "sigmoid1") return Head::kSigmoid1;
  throw InvalidArgument("unknown head '" + text + "' (expected softmax2 or sigmoid1)");
}

std::vector<std::size_t> default_convs_per_block(std::size_t blocks) {
  std::vector<std::size_t> convs(blocks, 2);
  if (!convs.empty()) convs.back() = 1;
  return convs;
}

void ArchitectureConfig::validate() const {
  if (input_height == 0 || input_width == 0 || input_channels == 0) {
    throw InvalidArgument("input extents must be positive");
  }
  if (block_filters.empty()) throw InvalidArgument("at least one convolutional block is required");
  if (convs_per_block.size() != block_filters.size()) {
    throw InvalidArgument("convs_per_block has " + std::to_string(convs_per_block.size()) + " entries but there are " +
                          std::to_string(block_filters.size()) + " blocks");
  }
  std::size_t h = input_height, w = input_width;
  for (std::size_t b = 0; b < block_filters.size(); ++b) {
    if (block_filters[b] == 0) throw InvalidArgument("block filters must be positive");
    if (convs_per_block[b] == 0) throw InvalidArgument("every block needs at least one convolution");
    if (b + 1 < block_filters.size()) {
      if (h < 2 || w < 2) throw InvalidArgument("feature map too small to pool after block " + std::to_string(b + 1));
      h /= 2;
      w /= 2;
    }
  }
  for (std::size_t units : dense_units) {
    if (units == 0) throw InvalidArgument("dense units must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidArgument("dropout rate must lie in [0, 1)");
  if (l2 < 0.0) throw InvalidArgument("l2 must be non-negative");
  if (!(bn_epsilon > 0.0)) throw InvalidArgument("batch-norm epsilon must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) throw InvalidArgument("batch-norm momentum must lie in [0, 1]");
}

ModelGraph::ModelGraph(const ModelGraph& other)
    : config_(other.config_), layers_(other.layers_), index_(other.index_) {
  params_.reserve(other.params_.size());
  for (const Parameter& p : other.params_) {
    Tensor copy = p.value.detach();
    copy.set_requires_grad(p.value.requires_grad());
    params_.push_back({p.name, copy, p.trainable});
  }
}

ModelGraph& ModelGraph::operator=(const ModelGraph& other) {
  if (this != &other) {
    ModelGraph copy(other);
    *this = std::move(copy);
  }
  return *this;
}

std::vector<Tensor> ModelGraph::trainable_parameters() const {
  std::vector<Tensor> out;
  for (const Parameter& p : params_) {
    if (p.trainable) out.push_back(p.value);
  }
  return out;
}

const Tensor& ModelGraph::parameter(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("no parameter named '" + name + "'");
  return params_[it->second].value;
}

Tensor& ModelGraph::parameter(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("no parameter named '" + name + "'");
  return params_[it->second].value;
}

void ModelGraph::zero_grad() {
  for (Parameter& p : params_) p.value.zero_grad();
}

void ModelGraph::add_parameter(std::string name, Tensor value, bool trainable) {
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(value), trainable});
}

ModelGraph build_custom_cnn(const ArchitectureConfig& config, std::uint64_t init_seed) {
  config.validate();
  ModelGraph model;
  model.config_ = config;
  Rng rng(init_seed);

  std::size_t channels = config.input_channels;
  const std::size_t blocks = config.block_filters.size();
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::string block = "block" + std::to_string(b + 1);
    const std::size_t filters = config.block_filters[b];
    for (std::size_t i = 0; i < config.convs_per_block[b]; ++i) {
      LayerSpec conv;
      conv.kind = LayerKind::kConv2d;
      conv.name = block + "_conv" + std::to_string(i + 1);
      conv.filters = filters;
      conv.activation = Activation::kRelu;
      conv.validate();
      model.add_parameter(conv.name + "/kernel",
                          glorot_uniform({3, 3, channels, filters}, 9 * channels, 9 * filters, rng), true);
      model.add_parameter(conv.name + "/bias", Tensor::zeros({filters}, true), true);
      model.layers_.push_back(conv);
      channels = filters;
    }
    LayerSpec bn;
    bn.kind = LayerKind::kBatchNorm;
    bn.name = block + "_bn";
    model.layers_.push_back(bn);
    const BatchNormState state = BatchNormState::create(channels, config.bn_momentum, config.bn_epsilon);
    model.add_parameter(bn.name + "/gamma", state.gamma, true);
    model.add_parameter(bn.name + "/beta", state.beta, true);
    model.add_parameter(bn.name + "/moving_mean", state.moving_mean, false);
    model.add_parameter(bn.name + "/moving_variance", state.moving_var, false);
    if (b + 1 < blocks) {
      LayerSpec pool;
      pool.kind = LayerKind::kMaxPool;
      pool.name = block + "_pool";
      model.layers_.push_back(pool);
    }
  }
  LayerSpec gap;
  gap.kind = LayerKind::kGlobalAvgPool;
  gap.name = "gap";
  model.layers_.push_back(gap);
  LayerSpec drop;
  drop.kind = LayerKind::kDropout;
  drop.name = "dropout";
  drop.rate = config.dropout_rate;
  drop.validate();
  model.layers_.push_back(drop);
  LayerSpec flat;
  flat.kind = LayerKind::kFlatten;
  flat.name = "flatten";
  model.layers_.push_back(flat);

  std::size_t width = channels;
  auto add_dense = [&](const std::string& name, std::size_t units, double l2, Activation activation) {
    LayerSpec d;
    d.kind = LayerKind::kDense;
    d.name = name;
    d.units = units;
    d.l2 = l2;
    d.activation = activation;
    d.validate();
    model.add_parameter(name + "/kernel", glorot_uniform({width, units}, width, units, rng), true);
    model.add_parameter(name + "/bias", Tensor::zeros({units}, true), true);
    model.layers_.push_back(d);
    width = units;
  };
  for (std::size_t j = 0; j < config.dense_units.size(); ++j) {
    add_dense("dense" + std::to_string(j + 1), config.dense_units[j], config.l2, Activation::kRelu);
  }
  if (config.head == Head::kSoftmax2) add_dense("head", 2, 0.0, Activation::kSoftmax);
  else add_dense("head", 1, 0.0, Activation::kSigmoid);
  return model;
}

std::size_t count_parameters(const ModelGraph& model) {
  std::size_t total = 0;
  for (const Parameter& p : model.parameters()) total += p.value.numel();
  return total;
}

std::size_t count_trainable_parameters(const ModelGraph& model) {
  std::size_t total = 0;
  for (const Parameter& p : model.parameters()) {
    if (p.trainable) total += p.value.numel();
  }
  return total;
}

ForwardResult forward(ModelGraph& model, const Tensor& batch, Mode mode, std::uint64_t seed) {
  const ArchitectureConfig& config = model.config();
  if (batch.rank() != 4 || batch.dim(1) != config.input_height || batch.dim(2) != config.input_width ||
      batch.dim(3) != config.input_channels) {
    throw InvalidArgument("model expects input [N," + std::to_string(config.input_height) + "," +
                          std::to_string(config.input_width) + "," + std::to_string(config.input_channels) +
                          "], got " + shape_to_string(batch.shape()));
  }
  ForwardResult result;
  Tensor x = batch;
  Tensor l2_total = Tensor::scalar(0.0);
  for (const LayerSpec& layer : model.layers()) {
    switch (layer.kind) {
      case LayerKind::kConv2d:
        x = conv2d(x, model.parameter(layer.name + "/kernel"), model.parameter(layer.name + "/bias"), layer.stride,
                   layer.padding);
        if (layer.activation == Activation::kRelu) x = relu(x);
        break;
      case LayerKind::kBatchNorm: {
        BatchNormState state;
        state.gamma = model.parameter(layer.name + "/gamma");
        state.beta = model.parameter(layer.name + "/beta");
        state.moving_mean = model.parameter(layer.name + "/moving_mean");
        state.moving_var = model.parameter(layer.name + "/moving_variance");
        state.momentum = config.bn_momentum;
        state.epsilon = config.bn_epsilon;
        x = batchnorm(x, state, mode);
        break;
      }
      case LayerKind::kMaxPool:
        x = maxpool2d(x);
        break;
      case LayerKind::kGlobalAvgPool:
        x = global_avg_pool(x);
        break;
      case LayerKind::kDropout:
        x = dropout(x, layer.rate, mode, seed);
        break;
      case LayerKind::kFlatten:
        x = flatten(x);
        break;
      case LayerKind::kDense: {
        DenseOutput out = dense(x, model.parameter(layer.name + "/kernel"), model.parameter(layer.name + "/bias"), layer.l2);
        if (layer.l2 > 0.0) l2_total = add(l2_total, out.l2_penalty);
        switch (layer.activation) {
          case Activation::kRelu:
            x = relu(out.output);
            break;
          case Activation::kSoftmax:
            result.logits = out.output;
            x = softmax(out.output);
            break;
          case Activation::kSigmoid:
            result.logits = out.output;
            x = sigmoid(out.output);
            break;
          case Activation::kNone:
            x = out.output;
            break;
        }
        break;
      }
      case LayerKind::kActivation:
        if (layer.activation == Activation::kRelu) x = relu(x);
        else if (layer.activation == Activation::kSigmoid) x = sigmoid(x);
        else if (layer.activation == Activation::kSoftmax) x = softmax(x);
        break;
    }
  }
  result.probs = x;
  result.l2_total = l2_total;
  return result;
}

std::vector<std::array<double, 2>> class_probabilities(const ForwardResult& result, Head head) {
  const std::size_t n = result.probs.dim(0);
  std::vector<std::array<double, 2>> out(n);
  auto p = result.probs.values();
  for (std::size_t i = 0; i < n; ++i) {
    if (head == Head::kSoftmax2) out[i] = {p[2 * i], p[2 * i + 1]};
    else out[i] = {1.0 - p[i], p[i]};
  }
  return out;
}

std::vector<LayerSummary> summarize(const ModelGraph& model) {
  const ArchitectureConfig& config = model.config();
  std::vector<LayerSummary> rows;
  Shape shape{config.input_height, config.input_width, config.input_channels};
  auto params_with_prefix = [&](const std::string& prefix) {
    std::size_t total = 0;
    for (const Parameter& p : model.parameters()) {
      if (p.name.rfind(prefix + "/", 0) == 0) total += p.value.numel();
    }
    return total;
  };
  for (const LayerSpec& layer : model.layers()) {
    switch (layer.kind) {
      case LayerKind::kConv2d:
        shape = {(shape[0] + layer.stride - 1) / layer.stride, (shape[1] + layer.stride - 1) / layer.stride, layer.filters};
        break;
      case LayerKind::kMaxPool:
        shape = {shape[0] / 2, shape[1] / 2, shape[2]};
        break;
      case LayerKind::kGlobalAvgPool:
        shape = {shape.back()};
        break;
      case LayerKind::kFlatten:
        shape = {shape_numel(shape)};
        break;
      case LayerKind::kDense:
        shape = {layer.units};
        break;
      default:
        break;
    }
    rows.push_back({layer.name, to_string(layer.kind), shape, params_with_prefix(layer.name)});
  }
  return rows;
}

std::string format_thousands(std::size_t value) {
  std::string digits = std::to_string(value);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

std::string summary_table(const ModelGraph& model) {
  std::ostringstream out;
  out << std::left << std::setw(16) << "Layer" << std::setw(12) << "Kind" << std::setw(24) << "Output shape"
      << "Param #\n";
  out << std::string(62, '=') << '\n';
  for (const LayerSummary& row : summarize(model)) {
    std::string extents = "(None";
    for (std::size_t e : row.output_shape) extents += ", " + std::to_string(e);
    extents += ")";
    out << std::setw(16) << row.name << std::setw(12) << row.kind << std::setw(24) << extents
        << format_thousands(row.params) << '\n';
  }
  out << std::string(62, '=') << '\n';
  const std::size_t total = count_parameters(model);
  const std::size_t trainable = count_trainable_parameters(model);
  out << "Trainable params: " << format_thousands(trainable) << '\n';
  out << "Non-trainable params: " << format_thousands(total - trainable) << '\n';
  out << "Total params: " << format_thousands(total) << '\n';
  return out.str();
}

}  // namespace mcnn
