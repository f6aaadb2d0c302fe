#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mcnn/nn.hpp"
#include "mcnn/tensor.hpp"

namespace mcnn {

enum class Head { kSoftmax2, kSigmoid1 };

std::string to_string(Head head);
Head parse_head(const std::string& text);

// Hyperparameters of the custom CNN. Defaults reproduce the published
// architecture: four conv blocks (32/64/128/256 filters, 2/2/2/1 convs),
// GAP, dropout 0.25, dense 128 and 64 with L2 0.01, two-way softmax head.
struct ArchitectureConfig {
  std::size_t input_height = 100;
  std::size_t input_width = 100;
  std::size_t input_channels = 3;
  std::vector<std::size_t> block_filters{32, 64, 128, 256};
  std::vector<std::size_t> convs_per_block{2, 2, 2, 1};
  std::vector<std::size_t> dense_units{128, 64};
  double dropout_rate = 0.25;
  double l2 = 0.01;
  Head head = Head::kSoftmax2;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-3;

  void validate() const;
};

// Two convs per block except the last, which has one.
std::vector<std::size_t> default_convs_per_block(std::size_t blocks);

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

struct ForwardResult {
  Tensor logits;    // pre-activation head output, [N,2] or [N,1]
  Tensor probs;     // softmax rows or sigmoid column
  Tensor l2_total;  // scalar sum of dense-layer penalties
};

// A sequential model: ordered layers plus a named parameter store.
// Copying a ModelGraph copies parameter values; the copies share nothing.
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(const ModelGraph& other);
  ModelGraph& operator=(const ModelGraph& other);
  ModelGraph(ModelGraph&&) noexcept = default;
  ModelGraph& operator=(ModelGraph&&) noexcept = default;

  const ArchitectureConfig& config() const { return config_; }
  Head head() const { return config_.head; }
  const std::vector<LayerSpec>& layers() const { return layers_; }

  // Every stored tensor in creation order, batch-norm moving statistics
  // included (those are not trainable).
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Tensor> trainable_parameters() const;

  bool has_parameter(const std::string& name) const { return index_.contains(name); }
  const Tensor& parameter(const std::string& name) const;
  Tensor& parameter(const std::string& name);

  void zero_grad();

  friend ModelGraph build_custom_cnn(const ArchitectureConfig& config, std::uint64_t init_seed);

 private:
  void add_parameter(std::string name, Tensor value, bool trainable);

  ArchitectureConfig config_;
  std::vector<LayerSpec> layers_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// Builds the layer stack and draws Glorot-uniform weights from `init_seed`.
// Biases and beta start at 0, gamma and moving variance at 1.
ModelGraph build_custom_cnn(const ArchitectureConfig& config = {}, std::uint64_t init_seed = 0);

// All stored elements: trainable weights plus batch-norm moving statistics.
std::size_t count_parameters(const ModelGraph& model);
std::size_t count_trainable_parameters(const ModelGraph& model);

// Train mode uses batch statistics (updating the moving ones) and seeded
// dropout; infer mode is deterministic.
ForwardResult forward(ModelGraph& model, const Tensor& batch, Mode mode, std::uint64_t seed = 0);

// Per-sample probabilities of (parasitized, uninfected), whatever the head.
std::vector<std::array<double, 2>> class_probabilities(const ForwardResult& result, Head head);

struct LayerSummary {
  std::string name;
  std::string kind;
  Shape output_shape;  // without the batch axis
  std::size_t params = 0;
};

std::vector<LayerSummary> summarize(const ModelGraph& model);
// Table of layers, output extents and parameter counts; the final line reads
// "Total params: N".
std::string summary_table(const ModelGraph& model);

std::string format_thousands(std::size_t value);

}  // namespace mcnn
