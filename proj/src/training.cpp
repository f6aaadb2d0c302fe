#include "mcnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mcnn/errors.hpp"
#include "mcnn/ops.hpp"
#include "mcnn/random.hpp"

namespace mcnn {

Tensor loss(const Tensor& probs, std::span<const int> labels, Head head, const Tensor& l2_total, double clamp_eps) {
  const std::size_t width = head == Head::kSoftmax2 ? 2 : 1;
  if (probs.rank() != 2 || probs.dim(1) != width) {
    throw InvalidArgument("loss: probabilities of shape " + shape_to_string(probs.shape()) + " do not fit the " +
                          to_string(head) + " head");
  }
  const std::size_t n = probs.dim(0);
  if (labels.size() != n) throw InvalidArgument("loss: label count differs from batch size");
  if (l2_total.numel() != 1) throw InvalidArgument("loss: l2_total must be a scalar");
  if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) throw InvalidArgument("loss: clamp_eps must lie in (0, 0.5)");
  for (int label : labels) {
    if (label != kParasitized && label != kUninfected) throw InvalidArgument("loss: label out of range");
  }
  const Tensor clamped = clamp(probs, clamp_eps, 1.0 - clamp_eps);
  Tensor total;
  if (head == Head::kSoftmax2) {
    std::vector<double> one_hot(n * 2, 0.0);
    for (std::size_t i = 0; i < n; ++i) one_hot[i * 2 + static_cast<std::size_t>(labels[i])] = 1.0;
    total = sum(mul(log(clamped), Tensor({n, 2}, std::move(one_hot))));
  } else {
    std::vector<double> y(n), not_y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = labels[i] == kUninfected ? 1.0 : 0.0;
      not_y[i] = 1.0 - y[i];
    }
    const Tensor log_p = log(clamped);
    const Tensor log_not_p = log(sub(Tensor::full({n, 1}, 1.0), clamped));
    total = add(sum(mul(log_p, Tensor({n, 1}, std::move(y)))), sum(mul(log_not_p, Tensor({n, 1}, std::move(not_y)))));
  }
  return add(scale(total, -1.0 / static_cast<double>(n)), reshape(l2_total, {}));
}

void adamax_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamaxState& state) {
  if (params.size() != grads.size()) throw InvalidArgument("adamax_step: parameter and gradient counts differ");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].size() != params[p].numel()) {
      throw InvalidArgument("adamax_step: gradient " + std::to_string(p) + " has the wrong extent");
    }
    for (double g : grads[p]) {
      if (!std::isfinite(g)) throw NumericError("adamax_step: non-finite gradient in parameter " + std::to_string(p));
    }
  }
  if (state.m.empty()) {
    for (const Tensor& t : params) {
      state.m.emplace_back(t.numel(), 0.0);
      state.u.emplace_back(t.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw InvalidArgument("adamax_step: optimizer state does not match parameters");

  state.step += 1;
  const double bias_correction = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double step_size = state.learning_rate / bias_correction;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto theta = params[p].mutable_values();
    auto& m = state.m[p];
    auto& u = state.u[p];
    const auto& g = grads[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      u[i] = std::max(state.beta2 * u[i], std::abs(g[i]));
      theta[i] -= step_size * m[i] / (u[i] + state.epsilon);
    }
  }
}

void adamax_step(std::span<Tensor> params, AdamaxState& state) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const Tensor& t : params) {
    if (t.has_grad()) grads.emplace_back(t.grad().begin(), t.grad().end());
    else grads.emplace_back(t.numel(), 0.0);
  }
  adamax_step(params, grads, state);
}

double reduce_lr_on_plateau(PlateauState& state, double val_metric, double current_lr) {
  if (state.best - val_metric > state.min_delta) {
    state.best = val_metric;
    state.epochs_since_improve = 0;
    return current_lr;
  }
  state.epochs_since_improve += 1;
  if (state.epochs_since_improve >= state.patience) {
    state.epochs_since_improve = 0;
    return std::min(current_lr, std::max(current_lr * state.factor, state.min_lr));
  }
  return current_lr;
}

std::string history_to_csv(const TrainHistory& history) {
  std::ostringstream out;
  out << "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
  char line[256];
  for (const EpochRecord& r : history.records) {
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.train_acc,
                  r.val_loss, r.val_acc, r.lr);
    out << line;
  }
  return out.str();
}

bool early_stop_check(const TrainHistory& history, double threshold) {
  if (history.records.empty()) throw InvalidArgument("early_stop_check needs at least one epoch record");
  const EpochRecord& last = history.records.back();
  return last.train_acc >= threshold || last.val_acc >= threshold;
}

int predicted_class(const std::array<double, 2>& probabilities) {
  return probabilities[1] > probabilities[0] ? kUninfected : kParasitized;
}

EvalResult evaluate(ModelGraph& model, const DatasetIndex& data, Split split, std::size_t batch_size, double clamp_eps) {
  NoGradGuard no_grad;
  EvalResult result;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  BatchIterator batches(data, split, batch_size);
  while (auto batch = batches.next()) {
    const ForwardResult out = forward(model, batch->images, Mode::kInfer);
    const double batch_loss = loss(out.probs, batch->labels, model.head(), out.l2_total, clamp_eps).item();
    loss_sum += batch_loss * static_cast<double>(batch->labels.size());
    const auto probs = class_probabilities(out, model.head());
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const int pred = predicted_class(probs[i]);
      correct += pred == batch->labels[i] ? 1 : 0;
      result.y_true.push_back(batch->labels[i]);
      result.y_pred.push_back(pred);
      result.probabilities.push_back(probs[i]);
    }
  }
  const double n = static_cast<double>(result.y_true.size());
  result.loss = loss_sum / n;
  result.accuracy = static_cast<double>(correct) / n;
  return result;
}

TrainHistory train(ModelGraph& model, const DatasetIndex& data, const TrainConfig& config) {
  TrainHistory history;
  if (config.epochs == 0) return history;
  if (config.batch_size == 0) throw InvalidArgument("batch size must be positive");
  if (!(config.learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (data.count(Split::kTrain) == 0 || data.count(Split::kVal) == 0) {
    throw InvalidArgument("training needs non-empty train and val splits");
  }

  std::vector<Tensor> params = model.trainable_parameters();
  AdamaxState optimizer;
  optimizer.learning_rate = config.learning_rate;
  PlateauState plateau = config.plateau;
  double lr = config.learning_rate;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    optimizer.learning_rate = lr;
    const auto order = batch_order(data, Split::kTrain, config.batch_size, config.seed, epoch);
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t b = 0; b < order.size(); ++b) {
      // Batch statistics are undefined for a single image.
      if (order[b].size() < 2) continue;
      Batch batch = load_batch(data, order[b]);
      model.zero_grad();
      const ForwardResult out = forward(model, batch.images, Mode::kTrain, mix_seed(config.seed, epoch * 1000003 + b));
      const Tensor batch_loss = loss(out.probs, batch.labels, model.head(), out.l2_total, config.clamp_eps);
      const double value = batch_loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1));
      }
      backward(batch_loss);
      adamax_step(params, optimizer);
      const auto probs = class_probabilities(out, model.head());
      for (std::size_t i = 0; i < probs.size(); ++i) correct += predicted_class(probs[i]) == batch.labels[i] ? 1 : 0;
      loss_sum += value * static_cast<double>(batch.labels.size());
      seen += batch.labels.size();
    }
    model.zero_grad();
    if (seen == 0) throw InvalidArgument("train split yielded no usable batches");

    const EvalResult val = evaluate(model, data, Split::kVal, config.batch_size, config.clamp_eps);
    if (!std::isfinite(val.loss)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch + 1));
    EpochRecord record;
    record.epoch = epoch + 1;
    record.train_loss = loss_sum / static_cast<double>(seen);
    record.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    record.val_loss = val.loss;
    record.val_acc = val.accuracy;
    record.lr = lr;
    history.records.push_back(record);
    if (config.on_epoch) config.on_epoch(record);

    lr = reduce_lr_on_plateau(plateau, val.loss, lr);
    if (early_stop_check(history, config.early_stop_threshold)) break;
  }
  return history;
}

}  // namespace mcnn
