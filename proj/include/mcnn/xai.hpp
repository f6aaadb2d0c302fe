#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcnn/model.hpp"
#include "mcnn/segmentation.hpp"
#include "mcnn/tensor.hpp"

namespace mcnn {

// Coalition over M segments: element i is 1 when segment i is kept.
using Coalition = std::vector<std::uint8_t>;

// A memoised coalition game v(S). Not safe for concurrent use.
class SetFunction {
 public:
  // Evaluates a batch of coalitions; called only for ones not seen before.
  using BatchEvaluator = std::function<std::vector<double>(const std::vector<Coalition>&)>;

  SetFunction(std::size_t players, BatchEvaluator evaluator);
  static SetFunction from_scalar(std::size_t players, std::function<double(const Coalition&)> f);

  std::size_t players() const { return players_; }
  double operator()(const Coalition& coalition);
  std::vector<double> evaluate(const std::vector<Coalition>& coalitions);
  // Distinct coalitions passed to the evaluator so far.
  std::size_t evaluations() const { return evaluations_; }

 private:
  std::size_t players_;
  BatchEvaluator evaluator_;
  std::unordered_map<std::string, double> memo_;
  std::size_t evaluations_ = 0;
};

enum class Baseline { kMeanColor, kGray };

Baseline parse_baseline(const std::string& text);

// The model applied to copies of one image where segments outside the
// coalition are painted with the baseline colour. Class probabilities are
// cached per coalition, so games for both classes share model calls.
class MaskedModel {
 public:
  MaskedModel(ModelGraph& model, Tensor image, SegmentMap segments, Baseline baseline = Baseline::kMeanColor,
              std::size_t batch_size = 32);

  std::size_t players() const { return segments_.count; }
  const SegmentMap& segments() const { return segments_; }
  const std::array<double, 3>& baseline_color() const { return fill_; }

  Tensor masked_image(const Coalition& coalition) const;  // [H,W,3]
  std::vector<std::array<double, 2>> probabilities(const std::vector<Coalition>& coalitions);
  std::size_t model_calls() const { return model_calls_; }

 private:
  ModelGraph* model_;
  Tensor image_;
  SegmentMap segments_;
  std::vector<std::vector<std::size_t>> members_;
  std::array<double, 3> fill_{};
  std::size_t batch_size_;
  std::unordered_map<std::string, std::array<double, 2>> cache_;
  std::size_t model_calls_ = 0;
};

SetFunction make_set_function(std::shared_ptr<MaskedModel> masked, int target_class);
SetFunction make_set_function(ModelGraph& model, const Tensor& image, const SegmentMap& segments, int target_class,
                              Baseline baseline = Baseline::kMeanColor);

enum class Method { kSaliency, kLime, kShap };

std::string to_string(Method method);
Method parse_method(const std::string& text);

struct Explanation {
  Method method = Method::kSaliency;
  int target_class = 0;
  std::uint64_t seed = 0;
  std::size_t samples = 0;
  // Per segment (lime, shap) or per pixel, row-major (saliency).
  std::vector<double> values;
  std::size_t width = 0;  // saliency heatmap extents
  std::size_t height = 0;
  double phi0 = 0.0;       // shap base value v(empty)
  double intercept = 0.0;  // lime surrogate
  double r2 = 0.0;         // lime weighted R^2
  std::string segments_digest;
};

// {method, class, seed, phi0, values, r2, segments_digest} plus samples and
// intercept.
std::string explanation_to_json(const Explanation& explanation);
std::string explanations_to_json(const std::vector<Explanation>& explanations);

// Gradient saliency of an arbitrary scalar score of an [H,W,3] image:
// max over channels of |d score / d pixel|, scaled so the peak is 1.
Explanation saliency_from_score(const std::function<Tensor(const Tensor&)>& score, const Tensor& image);

// Saliency of the target class's pre-activation score (logit for softmax2,
// +/- the single logit for sigmoid1) under infer mode.
Explanation saliency_map(ModelGraph& model, const Tensor& image, int target_class);

struct LimeConfig {
  std::size_t n_samples = 1000;
  double kernel_width = 0.25;
  double ridge = 1.0;
  std::uint64_t seed = 0;
};

struct RidgeFit {
  std::vector<double> coefficients;
  double intercept = 0.0;
  double r2 = 0.0;
};

// Minimises sum_k w_k (y_k - b - z_k . beta)^2 + lambda |beta|^2 with the
// intercept b unpenalised.
RidgeFit weighted_ridge(const std::vector<Coalition>& design, std::span<const double> targets,
                        std::span<const double> weights, double lambda);

// The all-kept coalition followed by n-1 fair-coin coalitions.
std::vector<Coalition> lime_samples(std::size_t players, std::size_t n_samples, std::uint64_t seed);

// exp(-D^2 / width^2), D = fraction of dropped segments.
double lime_kernel(const Coalition& coalition, double kernel_width);

Explanation lime_explain(SetFunction& game, const LimeConfig& config);

// (M-1) / (C(M,s) s (M-s)) for 1 <= s <= M-1.
double shapley_kernel_weight(std::size_t players, std::size_t size);

struct ShapConfig {
  std::size_t enumerate_below = 13;
  std::size_t n_samples = 2048;
  std::uint64_t seed = 0;
};

// Kernel SHAP with v(empty) as base value and efficiency imposed exactly.
// All 2^M - 2 proper coalitions are used when M < enumerate_below;
// otherwise complement pairs are sampled with sizes drawn by kernel mass.
Explanation kernel_shap(SetFunction& game, const ShapConfig& config);

// Shapley values by full enumeration; M <= 20.
std::vector<double> exact_shapley(SetFunction& game);

}  // namespace mcnn
