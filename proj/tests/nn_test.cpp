#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mcnn/errors.hpp"
#include "mcnn/grad_check.hpp"
#include "mcnn/nn.hpp"
#include "mcnn/ops.hpp"
#include "mcnn/random.hpp"

using namespace mcnn;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// Direct convolution with TF-style 'same' padding (extra pad on bottom/right).
std::vector<double> naive_conv(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride, Padding padding,
                               std::size_t& oh, std::size_t& ow) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), ci = x.dim(3);
  const std::size_t kh = k.dim(0), kw = k.dim(1), co = k.dim(3);
  long pad_top = 0, pad_left = 0;
  if (padding == Padding::kSame) {
    oh = (h + stride - 1) / stride;
    ow = (w + stride - 1) / stride;
    const long total_h = std::max<long>(0, static_cast<long>((oh - 1) * stride + kh) - static_cast<long>(h));
    const long total_w = std::max<long>(0, static_cast<long>((ow - 1) * stride + kw) - static_cast<long>(w));
    pad_top = total_h / 2;
    pad_left = total_w / 2;
  } else {
    oh = (h - kh) / stride + 1;
    ow = (w - kw) / stride + 1;
  }
  std::vector<double> out(n * oh * ow * co, 0.0);
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t o = 0; o < co; ++o) {
          double acc = b[o];
          for (std::size_t dy = 0; dy < kh; ++dy)
            for (std::size_t dx = 0; dx < kw; ++dx)
              for (std::size_t c = 0; c < ci; ++c) {
                const long y = static_cast<long>(oy * stride + dy) - pad_top;
                const long xx = static_cast<long>(ox * stride + dx) - pad_left;
                if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                acc += x[((bn * h + y) * w + xx) * ci + c] * k[((dy * kw + dx) * ci + c) * co + o];
              }
          out[((bn * oh + oy) * ow + ox) * co + o] = acc;
        }
  return out;
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
  Tensor x({1, 3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  std::vector<double> kv(9, 0.0);
  kv[4] = 1.0;
  Tensor y = conv2d(x, Tensor({3, 3, 1, 1}, kv), Tensor::zeros({1}));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, ValidSum) {
  Tensor y = conv2d(Tensor::full({1, 2, 2, 1}, 1.0), Tensor::full({2, 2, 1, 1}, 1.0), Tensor::zeros({1}), 1,
                    Padding::kValid);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.item(), 4.0);
}

TEST(Conv2d, MatchesDirectLoops) {
  for (auto [stride, padding] : {std::pair{std::size_t{1}, Padding::kSame}, std::pair{std::size_t{2}, Padding::kSame},
                                 std::pair{std::size_t{1}, Padding::kValid}, std::pair{std::size_t{2}, Padding::kValid}}) {
    const Tensor x = random_tensor({2, 8, 7, 3}, 1);
    const Tensor k = random_tensor({3, 3, 3, 4}, 2);
    const Tensor b = random_tensor({4}, 3);
    std::size_t oh = 0, ow = 0;
    const std::vector<double> expected = naive_conv(x, k, b, stride, padding, oh, ow);
    const Tensor y = conv2d(x, k, b, stride, padding);
    ASSERT_EQ(y.shape(), (Shape{2, oh, ow, 4}));
    double diff = 0.0;
    for (std::size_t i = 0; i < expected.size(); ++i) diff = std::max(diff, std::abs(expected[i] - y[i]));
    EXPECT_LT(diff, 1e-12);
  }
}

TEST(Conv2d, Linearity) {
  const Tensor a = random_tensor({1, 6, 6, 2}, 4), b = random_tensor({1, 6, 6, 2}, 5);
  const Tensor k = random_tensor({3, 3, 2, 3}, 6), zero = Tensor::zeros({3});
  const Tensor lhs = conv2d(add(a, b), k, zero);
  const Tensor rhs = add(conv2d(a, k, zero), conv2d(b, k, zero));
  for (std::size_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-10);
}

TEST(Conv2d, RejectsChannelMismatch) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 4, 4, 2}), Tensor::zeros({3, 3, 3, 1}), Tensor::zeros({1})), InvalidArgument);
}

TEST(BatchNorm, TrainModeNormalizes) {
  const Tensor x = random_tensor({4, 5, 5, 3}, 7, -3.0, 5.0);
  BatchNormState state = BatchNormState::create(3);
  const Tensor y = batchnorm(x, state, Mode::kTrain);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    const std::size_t rows = y.numel() / 3;
    for (std::size_t r = 0; r < rows; ++r) mean += y[r * 3 + c];
    mean /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) var += (y[r * 3 + c] - mean) * (y[r * 3 + c] - mean);
    var /= static_cast<double>(rows);
    EXPECT_LT(std::abs(mean), 1e-10);
    EXPECT_GE(var, 1.0 - 10 * state.epsilon);
    EXPECT_LE(var, 1.0 + 10 * state.epsilon);
  }
}

TEST(BatchNorm, MovingStatisticsUpdate) {
  Tensor x({2, 2}, {1.0, 10.0, 3.0, 30.0});
  BatchNormState state = BatchNormState::create(2, 0.9);
  batchnorm(x, state, Mode::kTrain);
  // batch means (2, 20), biased variances (1, 100)
  EXPECT_NEAR(state.moving_mean[0], 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(state.moving_mean[1], 0.1 * 20.0, 1e-15);
  EXPECT_NEAR(state.moving_var[0], 0.9 + 0.1 * 1.0, 1e-15);
  EXPECT_NEAR(state.moving_var[1], 0.9 + 0.1 * 100.0, 1e-12);
}

TEST(BatchNorm, AffineOnNormalizedInput) {
  Tensor x({4, 1}, {-1.0, -1.0, 1.0, 1.0});
  BatchNormState state = BatchNormState::create(1, 0.99, 1e-12);
  state.gamma = Tensor({1}, {2.0}, true);
  state.beta = Tensor({1}, {5.0}, true);
  const Tensor y = batchnorm(x, state, Mode::kTrain);
  EXPECT_NEAR(y[0], 3.0, 1e-9);
  EXPECT_NEAR(y[3], 7.0, 1e-9);
}

TEST(BatchNorm, InferIdentityStatistics) {
  const Tensor x = random_tensor({2, 3, 3, 2}, 8);
  BatchNormState state = BatchNormState::create(2);
  const Tensor y = batchnorm(x, state, Mode::kInfer);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], x[i] / std::sqrt(1.0 + 1e-3), 1e-15);
  EXPECT_DOUBLE_EQ(state.moving_mean[0], 0.0);
}

TEST(BatchNorm, SingleSampleTrainRejected) {
  BatchNormState state = BatchNormState::create(2);
  EXPECT_THROW(batchnorm(Tensor::zeros({1, 2}), state, Mode::kTrain), InvalidArgument);
}

TEST(MaxPool, Values) {
  EXPECT_DOUBLE_EQ(maxpool2d(Tensor({1, 2, 2, 1}, {1, 2, 3, 4})).item(), 4.0);
  const Tensor c = maxpool2d(Tensor::full({1, 4, 4, 2}, 3.5));
  EXPECT_EQ(c.shape(), (Shape{1, 2, 2, 2}));
  for (double v : c.values()) EXPECT_DOUBLE_EQ(v, 3.5);
  EXPECT_THROW(maxpool2d(Tensor::zeros({1, 1, 4, 1})), InvalidArgument);
  EXPECT_EQ(maxpool2d(Tensor::zeros({1, 5, 7, 1})).shape(), (Shape{1, 2, 3, 1}));
}

TEST(MaxPool, MatchesWindowEnumeration) {
  const Tensor x = random_tensor({1, 6, 6, 2}, 9);
  const Tensor y = maxpool2d(x);
  for (std::size_t oy = 0; oy < 3; ++oy)
    for (std::size_t ox = 0; ox < 3; ++ox)
      for (std::size_t c = 0; c < 2; ++c) {
        double best = -1e300;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) best = std::max(best, x[((2 * oy + dy) * 6 + 2 * ox + dx) * 2 + c]);
        EXPECT_EQ(y[(oy * 3 + ox) * 2 + c], best);
      }
}

TEST(GlobalAvgPool, MeanAndGradient) {
  EXPECT_DOUBLE_EQ(global_avg_pool(Tensor({1, 2, 2, 1}, {1, 3, 5, 7})).item(), 4.0);
  Tensor x = Tensor::full({1, 3, 4, 2}, 2.0, true);
  const Tensor y = global_avg_pool(x);
  EXPECT_DOUBLE_EQ(y[1], 2.0);
  backward(sum(y));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0 / 12.0);
}

TEST(Dense, OutputAndPenalty) {
  const Tensor x = random_tensor({3, 4}, 10);
  std::vector<double> eye(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  const DenseOutput id = dense(x, Tensor({4, 4}, eye), Tensor::zeros({4}));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(id.output[i], x[i]);
  EXPECT_DOUBLE_EQ(id.l2_penalty.item(), 0.0);
  EXPECT_DOUBLE_EQ(dense(x, Tensor::zeros({4, 2}), Tensor::zeros({2}), 0.01).l2_penalty.item(), 0.0);
  const Tensor w = random_tensor({4, 2}, 11);
  double squares = 0.0;
  for (double v : w.values()) squares += v * v;
  EXPECT_NEAR(dense(x, w, Tensor::zeros({2}), 0.01).l2_penalty.item(), 0.01 * squares, 1e-15);
  EXPECT_THROW(dense(x, Tensor::zeros({3, 2}), Tensor::zeros({2})), InvalidArgument);
}

TEST(Dropout, IdentityCases) {
  const Tensor x = random_tensor({10}, 12);
  const Tensor a = dropout(x, 0.0, Mode::kTrain, 1), b = dropout(x, 0.5, Mode::kInfer, 1);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_DOUBLE_EQ(a[i], x[i]);
    EXPECT_DOUBLE_EQ(b[i], x[i]);
  }
  EXPECT_THROW(dropout(x, 1.0, Mode::kTrain, 1), InvalidArgument);
}

TEST(Dropout, InvertedScalingExpectation) {
  const Tensor ones = Tensor::full({1000000}, 1.0);
  const Tensor y = dropout(ones, 0.25, Mode::kTrain, 77);
  double mean = 0.0;
  std::size_t zeros = 0;
  for (double v : y.values()) {
    mean += v;
    zeros += v == 0.0;
    if (v != 0.0) {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
    }
  }
  mean /= 1e6;
  EXPECT_GE(mean, 0.99);
  EXPECT_LE(mean, 1.01);
  EXPECT_NEAR(static_cast<double>(zeros) / 1e6, 0.25, 0.005);
  const Tensor again = dropout(ones, 0.25, Mode::kTrain, 77);
  EXPECT_TRUE(std::equal(y.values().begin(), y.values().end(), again.values().begin()));
}

TEST(Softmax, Properties) {
  const Tensor half = softmax(Tensor({1, 2}, {0.0, 0.0}));
  EXPECT_DOUBLE_EQ(half[0], 0.5);
  const Tensor big = softmax(Tensor({1, 2}, {1000.0, 0.0}));
  EXPECT_NEAR(big[0], 1.0, 1e-15);
  EXPECT_TRUE(std::isfinite(big[1]));
  const Tensor x = random_tensor({20, 3}, 13, -30.0, 30.0);
  const Tensor p = softmax(x);
  for (std::size_t r = 0; r < 20; ++r) {
    EXPECT_NEAR(p[r * 3] + p[r * 3 + 1] + p[r * 3 + 2], 1.0, 1e-12);
    auto row_x = x.values().subspan(r * 3, 3);
    auto row_p = p.values().subspan(r * 3, 3);
    EXPECT_EQ(std::max_element(row_x.begin(), row_x.end()) - row_x.begin(),
              std::max_element(row_p.begin(), row_p.end()) - row_p.begin());
  }
  EXPECT_THROW(softmax(Tensor::zeros({2, 1})), InvalidArgument);
}

TEST(Flatten, Shape) { EXPECT_EQ(flatten(Tensor::zeros({2, 3, 4})).shape(), (Shape{2, 12})); }

TEST(LayerGradCheck, AllLayers) {
  const Tensor x = random_tensor({2, 5, 5, 2}, 20);
  const Tensor k = random_tensor({3, 3, 2, 3}, 21, -0.5, 0.5);
  const Tensor b = random_tensor({3}, 22);
  const Tensor w_conv = random_tensor({2, 5, 5, 3}, 23);
  const Tensor w_in = random_tensor({2, 5, 5, 2}, 24);

  auto conv_x = [&](const Tensor& t) { return sum(mul(conv2d(t, k, b), w_conv)); };
  auto conv_k = [&](const Tensor& t) { return sum(mul(conv2d(x, t, b), w_conv)); };
  auto conv_b = [&](const Tensor& t) { return sum(mul(conv2d(x, k, t), w_conv)); };
  auto conv_strided = [&](const Tensor& t) { return sum(mul(conv2d(t, k, b, 2), conv2d(t, k, b, 2))); };
  EXPECT_LT(grad_check(conv_x, x), 1e-6);
  EXPECT_LT(grad_check(conv_k, k), 1e-6);
  EXPECT_LT(grad_check(conv_b, b), 1e-6);
  EXPECT_LT(grad_check(conv_strided, x), 1e-6);

  auto bn_x = [&](const Tensor& t) {
    BatchNormState s = BatchNormState::create(2);
    return sum(mul(batchnorm(t, s, Mode::kTrain), w_in));
  };
  auto bn_gamma = [&](const Tensor& t) {
    BatchNormState s = BatchNormState::create(2);
    s.gamma = t;
    return sum(mul(batchnorm(x, s, Mode::kTrain), w_in));
  };
  auto bn_infer = [&](const Tensor& t) {
    BatchNormState s = BatchNormState::create(2);
    s.moving_mean = Tensor({2}, {0.3, -0.2});
    s.moving_var = Tensor({2}, {0.5, 2.0});
    return sum(mul(batchnorm(t, s, Mode::kInfer), w_in));
  };
  EXPECT_LT(grad_check(bn_x, x), 1e-6);
  EXPECT_LT(grad_check(bn_gamma, Tensor({2}, {1.5, 0.7})), 1e-6);
  EXPECT_LT(grad_check(bn_infer, x), 1e-6);

  const Tensor w_pool = random_tensor({2, 2, 2, 2}, 25);
  EXPECT_LT(grad_check([&](const Tensor& t) { return sum(mul(maxpool2d(t), w_pool)); }, x), 1e-6);
  EXPECT_LT(grad_check([&](const Tensor& t) { return sum(mul(global_avg_pool(t), Tensor({2}, {1.0, -2.0}))); }, x),
            1e-6);

  const Tensor dx = random_tensor({3, 4}, 26), dw = random_tensor({4, 2}, 27), db = random_tensor({2}, 28);
  auto dense_w = [&](const Tensor& t) {
    const DenseOutput o = dense(dx, t, db, 0.01);
    return add(sum(mul(o.output, o.output)), o.l2_penalty);
  };
  auto dense_x = [&](const Tensor& t) { return sum(mul(dense(t, dw, db).output, dense(t, dw, db).output)); };
  EXPECT_LT(grad_check(dense_w, dw), 1e-6);
  EXPECT_LT(grad_check(dense_x, dx), 1e-6);

  const Tensor logits = random_tensor({3, 2}, 29, -2.0, 2.0);
  const Tensor sw = random_tensor({3, 2}, 30);
  EXPECT_LT(grad_check([&](const Tensor& t) { return sum(mul(softmax(t), sw)); }, logits), 1e-6);
}
