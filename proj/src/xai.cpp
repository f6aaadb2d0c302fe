#include "mcnn/xai.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "mcnn/data.hpp"
#include "mcnn/errors.hpp"
#include "mcnn/ops.hpp"
#include "mcnn/random.hpp"

namespace mcnn {

namespace {

std::string key_of(const Coalition& coalition) { return std::string(coalition.begin(), coalition.end()); }

double binomial(std::size_t n, std::size_t k) {
  k = std::min(k, n - k);
  double result = 1.0;
  for (std::size_t i = 1; i <= k; ++i) result = result * static_cast<double>(n - k + i) / static_cast<double>(i);
  return result;
}

Coalition coalition_from_bits(std::uint64_t bits, std::size_t players) {
  Coalition c(players);
  for (std::size_t i = 0; i < players; ++i) c[i] = static_cast<std::uint8_t>((bits >> i) & 1U);
  return c;
}

// Solves the symmetric system, rejecting it when numerically singular.
Eigen::VectorXd solve_spd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const char* what) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  const double rcond = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
  if (ldlt.info() != Eigen::Success || !(rcond > 1e-13)) {
    throw NumericError(std::string(what) + ": singular system (reciprocal condition estimate " +
                       std::to_string(rcond) + ")");
  }
  return ldlt.solve(b);
}

}  // namespace

SetFunction::SetFunction(std::size_t players, BatchEvaluator evaluator)
    : players_(players), evaluator_(std::move(evaluator)) {
  if (players == 0) throw InvalidArgument("a set function needs at least one player");
}

SetFunction SetFunction::from_scalar(std::size_t players, std::function<double(const Coalition&)> f) {
  return SetFunction(players, [f = std::move(f)](const std::vector<Coalition>& coalitions) {
    std::vector<double> out;
    out.reserve(coalitions.size());
    for (const Coalition& c : coalitions) out.push_back(f(c));
    return out;
  });
}

double SetFunction::operator()(const Coalition& coalition) { return evaluate({coalition}).front(); }

std::vector<double> SetFunction::evaluate(const std::vector<Coalition>& coalitions) {
  std::vector<Coalition> missing;
  std::unordered_map<std::string, std::size_t> pending;
  for (const Coalition& c : coalitions) {
    if (c.size() != players_) throw InvalidArgument("coalition size does not match the number of players");
    std::string key = key_of(c);
    if (!memo_.contains(key) && !pending.contains(key)) {
      pending.emplace(std::move(key), missing.size());
      missing.push_back(c);
    }
  }
  if (!missing.empty()) {
    const std::vector<double> values = evaluator_(missing);
    if (values.size() != missing.size()) throw InvalidArgument("set function evaluator returned the wrong count");
    for (std::size_t i = 0; i < missing.size(); ++i) memo_.emplace(key_of(missing[i]), values[i]);
    evaluations_ += missing.size();
  }
  std::vector<double> out;
  out.reserve(coalitions.size());
  for (const Coalition& c : coalitions) out.push_back(memo_.at(key_of(c)));
  return out;
}

Baseline parse_baseline(const std::string& text) {
  if (text == "mean") return Baseline::kMeanColor;
  if (text == "gray") return Baseline::kGray;
  throw InvalidArgument("unknown baseline '" + text + "' (expected mean or gray)");
}

MaskedModel::MaskedModel(ModelGraph& model, Tensor image, SegmentMap segments, Baseline baseline, std::size_t batch_size)
    : model_(&model), image_(std::move(image)), segments_(std::move(segments)), batch_size_(batch_size) {
  if (image_.rank() != 3 || image_.dim(2) != 3) throw InvalidArgument("MaskedModel expects an [H,W,3] image");
  if (segments_.width != image_.dim(1) || segments_.height != image_.dim(0)) {
    throw InvalidArgument("segment map does not match the image extents");
  }
  segments_.validate();
  if (batch_size_ == 0) throw InvalidArgument("batch size must be positive");
  members_ = segments_.members();
  if (baseline == Baseline::kGray) {
    fill_ = {0.5, 0.5, 0.5};
  } else {
    auto v = image_.values();
    const std::size_t pixels = v.size() / 3;
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t c = 0; c < 3; ++c) fill_[c] += v[p * 3 + c];
    }
    for (double& f : fill_) f /= static_cast<double>(pixels);
  }
}

Tensor MaskedModel::masked_image(const Coalition& coalition) const {
  if (coalition.size() != segments_.count) throw InvalidArgument("coalition size does not match the segment count");
  std::vector<double> values(image_.values().begin(), image_.values().end());
  for (std::size_t s = 0; s < coalition.size(); ++s) {
    if (coalition[s]) continue;
    for (std::size_t p : members_[s]) {
      for (std::size_t c = 0; c < 3; ++c) values[p * 3 + c] = fill_[c];
    }
  }
  return Tensor(image_.shape(), std::move(values));
}

std::vector<std::array<double, 2>> MaskedModel::probabilities(const std::vector<Coalition>& coalitions) {
  std::vector<const Coalition*> missing;
  std::unordered_map<std::string, bool> queued;
  for (const Coalition& c : coalitions) {
    const std::string key = key_of(c);
    if (!cache_.contains(key) && queued.emplace(key, true).second) missing.push_back(&c);
  }
  NoGradGuard no_grad;
  const std::size_t pixels = image_.numel();
  for (std::size_t start = 0; start < missing.size(); start += batch_size_) {
    const std::size_t end = std::min(start + batch_size_, missing.size());
    std::vector<double> batch((end - start) * pixels);
    for (std::size_t i = start; i < end; ++i) {
      const Tensor masked = masked_image(*missing[i]);
      std::copy(masked.values().begin(), masked.values().end(), batch.begin() + static_cast<long>((i - start) * pixels));
    }
    const Tensor input({end - start, image_.dim(0), image_.dim(1), 3}, std::move(batch));
    const auto probs = class_probabilities(forward(*model_, input, Mode::kInfer), model_->head());
    for (std::size_t i = start; i < end; ++i) cache_.emplace(key_of(*missing[i]), probs[i - start]);
    model_calls_ += end - start;
  }
  std::vector<std::array<double, 2>> out;
  out.reserve(coalitions.size());
  for (const Coalition& c : coalitions) out.push_back(cache_.at(key_of(c)));
  return out;
}

SetFunction make_set_function(std::shared_ptr<MaskedModel> masked, int target_class) {
  if (target_class != 0 && target_class != 1) throw InvalidArgument("target class must be 0 or 1");
  const std::size_t players = masked->players();
  return SetFunction(players, [masked = std::move(masked), target_class](const std::vector<Coalition>& coalitions) {
    const auto probs = masked->probabilities(coalitions);
    std::vector<double> out(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i][static_cast<std::size_t>(target_class)];
    return out;
  });
}

SetFunction make_set_function(ModelGraph& model, const Tensor& image, const SegmentMap& segments, int target_class,
                              Baseline baseline) {
  return make_set_function(std::make_shared<MaskedModel>(model, image, segments, baseline), target_class);
}

std::string to_string(Method method) {
  switch (method) {
    case Method::kSaliency: return "saliency";
    case Method::kLime: return "lime";
    case Method::kShap: return "shap";
  }
  return "unknown";
}

Method parse_method(const std::string& text) {
  if (text == "saliency") return Method::kSaliency;
  if (text == "lime") return Method::kLime;
  if (text == "shap") return Method::kShap;
  throw InvalidArgument("unknown explanation method '" + text + "' (expected saliency, lime or shap)");
}

namespace {

nlohmann::ordered_json explanation_object(const Explanation& e) {
  nlohmann::ordered_json doc;
  doc["method"] = to_string(e.method);
  doc["class"] = e.target_class;
  doc["seed"] = e.seed;
  doc["phi0"] = e.phi0;
  doc["values"] = e.values;
  doc["r2"] = e.r2;
  doc["segments_digest"] = e.segments_digest;
  doc["intercept"] = e.intercept;
  doc["samples"] = e.samples;
  if (e.method == Method::kSaliency) {
    doc["width"] = e.width;
    doc["height"] = e.height;
  }
  return doc;
}

}  // namespace

std::string explanation_to_json(const Explanation& explanation) { return explanation_object(explanation).dump(2) + "\n"; }

std::string explanations_to_json(const std::vector<Explanation>& explanations) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  for (const Explanation& e : explanations) doc.push_back(explanation_object(e));
  return doc.dump(2) + "\n";
}

Explanation saliency_from_score(const std::function<Tensor(const Tensor&)>& score, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw InvalidArgument("saliency expects an [H,W,3] image");
  Tensor input = image.detach();
  input.set_requires_grad(true);
  const Tensor s = score(input);
  if (s.numel() != 1) throw InvalidArgument("saliency score must be a scalar");
  backward(s);
  const std::size_t height = image.dim(0), width = image.dim(1);
  Explanation e;
  e.method = Method::kSaliency;
  e.width = width;
  e.height = height;
  e.values.assign(width * height, 0.0);
  if (input.has_grad()) {
    auto g = input.grad();
    for (std::size_t p = 0; p < width * height; ++p) {
      e.values[p] = std::max({std::abs(g[p * 3]), std::abs(g[p * 3 + 1]), std::abs(g[p * 3 + 2])});
    }
  }
  const double peak = *std::max_element(e.values.begin(), e.values.end());
  if (peak > 0.0) {
    for (double& v : e.values) v /= peak;
  }
  return e;
}

Explanation saliency_map(ModelGraph& model, const Tensor& image, int target_class) {
  if (target_class != 0 && target_class != 1) throw InvalidArgument("target class must be 0 or 1");
  const Head head = model.head();
  auto score = [&](const Tensor& x) {
    const ForwardResult out = forward(model, reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)}), Mode::kInfer);
    if (head == Head::kSoftmax2) {
      std::vector<double> pick(2, 0.0);
      pick[static_cast<std::size_t>(target_class)] = 1.0;
      return sum(mul(out.logits, Tensor({1, 2}, pick)));
    }
    return scale(sum(out.logits), target_class == kUninfected ? 1.0 : -1.0);
  };
  Explanation e = saliency_from_score(score, image);
  e.target_class = target_class;
  return e;
}

std::vector<Coalition> lime_samples(std::size_t players, std::size_t n_samples, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Coalition> samples;
  samples.reserve(n_samples);
  samples.emplace_back(players, 1);
  while (samples.size() < n_samples) {
    Coalition c(players);
    for (auto& bit : c) bit = rng.uniform() < 0.5 ? 1 : 0;
    samples.push_back(std::move(c));
  }
  return samples;
}

double lime_kernel(const Coalition& coalition, double kernel_width) {
  const double dropped = static_cast<double>(std::count(coalition.begin(), coalition.end(), 0));
  const double distance = dropped / static_cast<double>(coalition.size());
  return std::exp(-(distance * distance) / (kernel_width * kernel_width));
}

RidgeFit weighted_ridge(const std::vector<Coalition>& design, std::span<const double> targets,
                        std::span<const double> weights, double lambda) {
  const std::size_t n = design.size();
  if (n == 0 || targets.size() != n || weights.size() != n) throw InvalidArgument("weighted_ridge: inconsistent inputs");
  if (lambda < 0.0) throw InvalidArgument("weighted_ridge: penalty must be non-negative");
  const std::size_t m = design.front().size();
  if (std::all_of(design.begin(), design.end(), [&](const Coalition& c) { return c == design.front(); })) {
    throw NumericError("weighted_ridge: degenerate design, all perturbations are identical");
  }
  // Augmented normal equations with column 0 as the unpenalised intercept.
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(static_cast<long>(m + 1), static_cast<long>(m + 1));
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<long>(m + 1));
  Eigen::VectorXd row(static_cast<long>(m + 1));
  for (std::size_t k = 0; k < n; ++k) {
    if (design[k].size() != m) throw InvalidArgument("weighted_ridge: ragged design");
    row(0) = 1.0;
    for (std::size_t j = 0; j < m; ++j) row(static_cast<long>(j + 1)) = design[k][j];
    gram.noalias() += weights[k] * row * row.transpose();
    rhs.noalias() += weights[k] * targets[k] * row;
  }
  for (std::size_t j = 1; j <= m; ++j) gram(static_cast<long>(j), static_cast<long>(j)) += lambda;
  const Eigen::VectorXd theta = solve_spd(gram, rhs, "weighted_ridge");

  RidgeFit fit;
  fit.intercept = theta(0);
  fit.coefficients.assign(theta.data() + 1, theta.data() + m + 1);
  double weight_sum = 0.0, weighted_mean = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    weight_sum += weights[k];
    weighted_mean += weights[k] * targets[k];
  }
  weighted_mean /= weight_sum;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double pred = fit.intercept;
    for (std::size_t j = 0; j < m; ++j) pred += fit.coefficients[j] * design[k][j];
    ss_res += weights[k] * (targets[k] - pred) * (targets[k] - pred);
    ss_tot += weights[k] * (targets[k] - weighted_mean) * (targets[k] - weighted_mean);
  }
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res <= 1e-24 ? 1.0 : 0.0);
  return fit;
}

Explanation lime_explain(SetFunction& game, const LimeConfig& config) {
  const std::size_t m = game.players();
  if (m < 2) throw InvalidArgument("lime needs at least two segments");
  if (config.n_samples < m) throw InvalidArgument("lime needs at least as many samples as segments");
  if (!(config.kernel_width > 0.0)) throw InvalidArgument("lime kernel width must be positive");
  const std::vector<Coalition> samples = lime_samples(m, config.n_samples, config.seed);
  const std::vector<double> targets = game.evaluate(samples);
  std::vector<double> weights(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) weights[k] = lime_kernel(samples[k], config.kernel_width);
  const RidgeFit fit = weighted_ridge(samples, targets, weights, config.ridge);

  Explanation e;
  e.method = Method::kLime;
  e.seed = config.seed;
  e.samples = config.n_samples;
  e.values = fit.coefficients;
  e.intercept = fit.intercept;
  e.r2 = fit.r2;
  return e;
}

double shapley_kernel_weight(std::size_t players, std::size_t size) {
  if (size == 0 || size >= players) {
    throw InvalidArgument("shapley kernel weight is infinite for empty or full coalitions");
  }
  const double m = static_cast<double>(players), s = static_cast<double>(size);
  return (m - 1.0) / (binomial(players, size) * s * (m - s));
}

Explanation kernel_shap(SetFunction& game, const ShapConfig& config) {
  const std::size_t m = game.players();
  if (m < 2) throw InvalidArgument("kernel_shap needs at least two players");
  const double base = game(Coalition(m, 0));
  const double full = game(Coalition(m, 1));
  const double delta = full - base;

  std::vector<Coalition> coalitions;
  std::vector<double> weights;
  if (m < config.enumerate_below) {
    if (m > 30) throw InvalidArgument("kernel_shap: too many players to enumerate");
    const std::uint64_t limit = (std::uint64_t{1} << m) - 1;
    for (std::uint64_t bits = 1; bits < limit; ++bits) {
      coalitions.push_back(coalition_from_bits(bits, m));
      weights.push_back(shapley_kernel_weight(m, static_cast<std::size_t>(std::popcount(bits))));
    }
  } else {
    if (config.n_samples < 2) throw InvalidArgument("kernel_shap needs at least two samples");
    // Size s is drawn with probability proportional to C(M,s) * kernel(M,s)
    // = (M-1) / (s (M-s)); members are then uniform, so every draw carries
    // equal weight. Each draw is paired with its complement.
    std::vector<double> cumulative(m - 1);
    double running = 0.0;
    for (std::size_t s = 1; s < m; ++s) {
      running += 1.0 / static_cast<double>(s * (m - s));
      cumulative[s - 1] = running;
    }
    Rng rng(config.seed);
    std::vector<std::size_t> order(m);
    const std::size_t pairs = (config.n_samples + 1) / 2;
    for (std::size_t p = 0; p < pairs; ++p) {
      const double u = rng.uniform() * running;
      const std::size_t size =
          static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin()) + 1;
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = 0; i < size; ++i) std::swap(order[i], order[i + rng.below(m - i)]);
      Coalition c(m, 0);
      for (std::size_t i = 0; i < size; ++i) c[order[i]] = 1;
      Coalition complement(m);
      for (std::size_t i = 0; i < m; ++i) complement[i] = c[i] ? 0 : 1;
      coalitions.push_back(std::move(c));
      coalitions.push_back(std::move(complement));
      weights.push_back(1.0);
      weights.push_back(1.0);
    }
  }
  const std::vector<double> values = game.evaluate(coalitions);

  // Substitute phi_last = delta - sum(others) and solve for the rest.
  const long unknowns = static_cast<long>(m - 1);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(unknowns, unknowns);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(unknowns);
  Eigen::VectorXd row(unknowns);
  for (std::size_t k = 0; k < coalitions.size(); ++k) {
    const Coalition& z = coalitions[k];
    const double last = z[m - 1];
    for (long j = 0; j < unknowns; ++j) row(j) = z[static_cast<std::size_t>(j)] - last;
    const double target = values[k] - base - last * delta;
    gram.noalias() += weights[k] * row * row.transpose();
    rhs.noalias() += weights[k] * target * row;
  }
  const Eigen::VectorXd solution = solve_spd(gram, rhs, "kernel_shap");

  Explanation e;
  e.method = Method::kShap;
  e.seed = config.seed;
  e.samples = coalitions.size();
  e.phi0 = base;
  e.values.assign(solution.data(), solution.data() + unknowns);
  e.values.push_back(delta - solution.sum());
  return e;
}

std::vector<double> exact_shapley(SetFunction& game) {
  const std::size_t m = game.players();
  if (m > 20) throw InvalidArgument("exact_shapley enumerates 2^M coalitions and is limited to M <= 20");
  const std::uint64_t total = std::uint64_t{1} << m;
  std::vector<Coalition> all;
  all.reserve(total);
  for (std::uint64_t bits = 0; bits < total; ++bits) all.push_back(coalition_from_bits(bits, m));
  const std::vector<double> v = game.evaluate(all);
  // |S|! (M-|S|-1)! / M! = 1 / (M * C(M-1, |S|))
  std::vector<double> weight(m);
  for (std::size_t s = 0; s < m; ++s) weight[s] = 1.0 / (static_cast<double>(m) * binomial(m - 1, s));
  std::vector<double> phi(m, 0.0);
  for (std::uint64_t bits = 0; bits < total; ++bits) {
    const std::size_t size = static_cast<std::size_t>(std::popcount(bits));
    for (std::size_t i = 0; i < m; ++i) {
      if (bits & (std::uint64_t{1} << i)) continue;
      phi[i] += weight[size] * (v[bits | (std::uint64_t{1} << i)] - v[bits]);
    }
  }
  return phi;
}

}  // namespace mcnn
