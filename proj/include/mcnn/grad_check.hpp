#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "mcnn/tensor.hpp"

namespace mcnn {

using ScalarFunction = std::function<Tensor(const Tensor&)>;

// Largest relative disagreement between the backward-mode gradient of `f`
// at `x` and the central difference (f(x+eps) - f(x-eps)) / (2 eps), per
// element: |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// Results at non-differentiable points (relu at 0, max ties) are
// meaningless and can be large.
double grad_check(const ScalarFunction& f, const Tensor& x, double eps = 1e-5);

// Same check restricted to the listed flat indices of `x`.
double grad_check(const ScalarFunction& f, const Tensor& x, double eps, std::span<const std::size_t> indices);

double relative_error(double analytic, double numeric);

// While alive, relu and max reductions on this thread fold their branch
// decisions (which inputs are positive, which element wins each max) into
// a hash. Two evaluations with equal signatures took the same branches, so
// the function is smooth between them; a difference means a finite
// difference across them straddles a kink.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  std::uint64_t signature() const { return hash_; }
  std::size_t decisions() const { return decisions_; }

  // Hooks for the ops; no-ops without an active recorder.
  static void record_signs(std::span<const double> values);
  static void record_choices(std::span<const std::size_t> choices);

 private:
  void mix(std::uint64_t value);

  BranchRecorder* previous_;
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
  std::size_t decisions_ = 0;
};

}  // namespace mcnn
