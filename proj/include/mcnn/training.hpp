#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mcnn/data.hpp"
#include "mcnn/model.hpp"

namespace mcnn {

// Mean cross-entropy of the batch plus `l2_total`. softmax2 heads use
// categorical cross-entropy on [N,2]; sigmoid1 heads binary cross-entropy
// on [N,1] with P(uninfected). Probabilities are clamped to
// [clamp_eps, 1 - clamp_eps] first.
Tensor loss(const Tensor& probs, std::span<const int> labels, Head head, const Tensor& l2_total,
            double clamp_eps = 1e-12);

// Adamax (Adam with an infinity-norm second moment).
struct AdamaxState {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;  // first moments, one per parameter
  std::vector<std::vector<double>> u;  // infinity norms, one per parameter
};

// One update of every tensor in `params` from the matching entry of
// `grads`. Throws NumericError on a non-finite gradient, leaving params and
// state untouched.
void adamax_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamaxState& state);

// Uses each tensor's accumulated gradient (zeros when none).
void adamax_step(std::span<Tensor> params, AdamaxState& state);

struct PlateauState {
  double best = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improve = 0;
  double factor = 0.5;
  std::size_t patience = 3;
  double min_lr = 1e-6;
  double min_delta = 1e-4;
};

// Monitors a lower-is-better metric; returns the learning rate for the next
// epoch.
double reduce_lr_on_plateau(PlateauState& state, double val_metric, double current_lr);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> records;

  bool operator==(const TrainHistory&) const = default;
};

// CSV: epoch,train_loss,train_acc,val_loss,val_acc,lr (17 significant digits).
std::string history_to_csv(const TrainHistory& history);

// True when the latest record reached `threshold` accuracy on train or val.
bool early_stop_check(const TrainHistory& history, double threshold = 0.99);

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  std::uint64_t seed = 0;
  PlateauState plateau{};
  double early_stop_threshold = 0.99;
  double clamp_eps = 1e-12;
  // Called after each completed epoch.
  std::function<void(const EpochRecord&)> on_epoch;
};

// Runs the epoch loop in place on `model`: shuffled train batches through
// forward / loss / backward / Adamax, validation at every epoch end,
// plateau scheduling and the early-stop rule. Deterministic for a seed.
// Throws NumericError on a non-finite loss.
TrainHistory train(ModelGraph& model, const DatasetIndex& data, const TrainConfig& config);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> y_true;
  std::vector<int> y_pred;
  std::vector<std::array<double, 2>> probabilities;
};

int predicted_class(const std::array<double, 2>& probabilities);

// Infer-mode pass over one split in index order.
EvalResult evaluate(ModelGraph& model, const DatasetIndex& data, Split split, std::size_t batch_size = 32,
                    double clamp_eps = 1e-12);

}  // namespace mcnn
