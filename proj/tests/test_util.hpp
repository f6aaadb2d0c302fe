#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "mcnn/grad_check.hpp"
#include "mcnn/model.hpp"
#include "mcnn/ops.hpp"
#include "mcnn/random.hpp"
#include "mcnn/training.hpp"

namespace mcnn::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// Biases start at exactly zero, so a conv whose receptive field is all
// zeros (dead ReLUs, padding) sits on the ReLU kink where central
// differences disagree with any one-sided derivative. Small random biases
// move the check point off the kinks.
inline void jitter_biases(ModelGraph& model, std::uint64_t seed, double scale = 0.05) {
  Rng rng(seed);
  for (const Parameter& p : model.parameters()) {
    if (!p.name.ends_with("/bias") && !p.name.ends_with("/beta")) continue;
    for (double& v : model.parameter(p.name).mutable_values()) v = rng.uniform(-scale, scale);
  }
}

struct ParameterCheck {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
  // A relu sign or max winner differs between x - eps, x and x + eps, so
  // the central difference straddles a kink and is no oracle.
  bool crosses_kink = false;
};

// Relative error of d(loss)/d(parameter) for `count` randomly chosen
// trainable elements, spread round-robin over the trainable tensors.
// The model's config must disable dropout; BN runs in train mode.
inline std::vector<ParameterCheck> check_model_gradients(ModelGraph& model, const Tensor& batch,
                                                         const std::vector<int>& labels, std::size_t count,
                                                         std::uint64_t seed, double eps = 1e-5) {
  std::vector<std::string> names;
  for (const Parameter& p : model.parameters()) {
    if (p.trainable) names.push_back(p.name);
  }
  auto evaluate = [&](std::uint64_t& signature) {
    NoGradGuard no_grad;
    BranchRecorder recorder;
    const ForwardResult r = forward(model, batch, Mode::kTrain, 0);
    const double value = loss(r.probs, labels, model.head(), r.l2_total).item();
    signature = recorder.signature();
    return value;
  };
  struct Reference {
    std::vector<double> gradient;
    std::uint64_t signature = 0;
  };
  std::vector<Reference> references(names.size());

  Rng rng(seed);
  std::vector<ParameterCheck> out;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t slot = k % names.size();
    const std::string& name = names[slot];
    const Tensor original = model.parameter(name);
    const auto values = original.values();
    Tensor probe(original.shape(), std::vector<double>(values.begin(), values.end()), true);
    model.parameter(name) = probe;
    Reference& ref = references[slot];
    if (ref.gradient.empty()) {
      const ForwardResult r = forward(model, batch, Mode::kTrain, 0);
      backward(loss(r.probs, labels, model.head(), r.l2_total));
      ref.gradient.assign(probe.grad().begin(), probe.grad().end());
      evaluate(ref.signature);
    }
    const std::size_t index = rng.below(original.numel());
    std::uint64_t plus_sig = 0, minus_sig = 0;
    probe.mutable_values()[index] = values[index] + eps;
    const double plus = evaluate(plus_sig);
    probe.mutable_values()[index] = values[index] - eps;
    const double minus = evaluate(minus_sig);
    model.parameter(name) = original;

    ParameterCheck c;
    c.name = name;
    c.index = index;
    c.analytic = ref.gradient[index];
    c.numeric = (plus - minus) / (2.0 * eps);
    c.error = relative_error(c.analytic, c.numeric);
    c.crosses_kink = plus_sig != ref.signature || minus_sig != ref.signature;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace mcnn::testing
