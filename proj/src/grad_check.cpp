#include "mcnn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mcnn/errors.hpp"

namespace mcnn {

namespace {

thread_local BranchRecorder* active_recorder = nullptr;

double evaluate(const ScalarFunction& f, const Tensor& x) {
  NoGradGuard no_grad;
  const Tensor y = f(x);
  if (y.numel() != 1) throw InvalidArgument("grad_check needs a scalar-valued function");
  const double value = y.item();
  if (!std::isfinite(value)) throw NumericError("grad_check: function returned a non-finite value");
  return value;
}

}  // namespace

BranchRecorder::BranchRecorder() : previous_(active_recorder) { active_recorder = this; }
BranchRecorder::~BranchRecorder() { active_recorder = previous_; }

void BranchRecorder::mix(std::uint64_t value) { hash_ = (hash_ ^ value) * 0x100000001b3ULL; }

void BranchRecorder::record_signs(std::span<const double> values) {
  if (active_recorder == nullptr) return;
  std::uint64_t word = 0;
  std::size_t bits = 0;
  for (double v : values) {
    word = (word << 1) | (v > 0.0 ? 1u : 0u);
    if (++bits == 64) {
      active_recorder->mix(word);
      word = 0;
      bits = 0;
    }
  }
  active_recorder->mix(word ^ (std::uint64_t{bits} << 58));
  active_recorder->decisions_ += values.size();
}

void BranchRecorder::record_choices(std::span<const std::size_t> choices) {
  if (active_recorder == nullptr) return;
  for (std::size_t c : choices) active_recorder->mix(c);
  active_recorder->decisions_ += choices.size();
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double grad_check(const ScalarFunction& f, const Tensor& x, double eps) {
  std::vector<std::size_t> all(x.numel());
  std::iota(all.begin(), all.end(), 0);
  return grad_check(f, x, eps, all);
}

double grad_check(const ScalarFunction& f, const Tensor& x, double eps, std::span<const std::size_t> indices) {
  if (!(eps > 0.0)) throw InvalidArgument("grad_check: eps must be positive");
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  const Tensor y = f(probe);
  if (y.numel() != 1) throw InvalidArgument("grad_check needs a scalar-valued function");
  if (!std::isfinite(y.item())) throw NumericError("grad_check: function returned a non-finite value");
  backward(y);
  std::vector<double> analytic(probe.numel(), 0.0);
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  double worst = 0.0;
  auto values = probe.mutable_values();
  for (std::size_t i : indices) {
    if (i >= values.size()) throw InvalidArgument("grad_check: index out of range");
    const double original = values[i];
    values[i] = original + eps;
    const double plus = evaluate(f, probe);
    values[i] = original - eps;
    const double minus = evaluate(f, probe);
    values[i] = original;
    worst = std::max(worst, relative_error(analytic[i], (plus - minus) / (2.0 * eps)));
  }
  return worst;
}

}  // namespace mcnn
