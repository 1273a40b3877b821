#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "bdg/nn.hpp"
#include "bdg/ops.hpp"
#include "bdg/reference.hpp"
#include "support.hpp"

using namespace bdg;
using test::randn;
using test::values;

namespace {

nn::Conv2dParams<double> conv_params(Tensor<double> w, std::int64_t stride, std::int64_t pad, std::int64_t dil) {
  nn::Conv2dParams<double> p;
  p.weight = std::move(w);
  p.stride = stride;
  p.padding = pad;
  p.dilation = dil;
  return p;
}

}  // namespace

TEST(Conv2d, DeltaKernelIsIdentity) {
  std::mt19937_64 rng(1);
  auto x = randn(Shape{1, 1, 5, 6}, rng);
  Tensor<double> w(Shape{1, 1, 3, 3});
  w.data_mut()[4] = 1;
  EXPECT_EQ(values(nn::conv2d(x, conv_params(w, 1, 1, 1))), values(x));
}

TEST(Conv2d, OnesKernelCountsNeighbours) {
  auto y = nn::conv2d(Tensor<double>(Shape{1, 1, 3, 3}, 1.0), conv_params(Tensor<double>(Shape{1, 1, 3, 3}, 1.0), 1, 1, 1));
  EXPECT_EQ(values(y), (std::vector<double>{4, 6, 4, 6, 9, 6, 4, 6, 4}));
}

TEST(Conv2d, RandomCasesMatchSixLoopOracle) {
  std::mt19937_64 rng(2);
  auto pick = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (int trial = 0; trial < 100; ++trial) {
    const int ci = pick(1, 4), co = pick(1, 4), h = pick(3, 9), w = pick(3, 9);
    const int k = pick(0, 1) ? 3 : 1, stride = pick(1, 2), dil = pick(1, 2), pad = pick(0, 2);
    if (dil * (k - 1) + 1 > std::min(h, w) + 2 * pad) continue;
    auto x = randn(Shape{pick(1, 2), ci, h, w}, rng);
    auto p = conv_params(randn(Shape{co, ci, k, k}, rng), stride, pad, dil);
    if (pick(0, 1)) p.bias = randn(Shape::channels(co), rng);
    const auto got = nn::conv2d(x, p);
    const auto want = ref::conv2d(x, p.weight, p.bias, stride, pad, dil);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_EQ(got.shape().h, nn::conv_out_extent(h, k, stride, pad, dil));
    for (std::int64_t i = 0; i < got.numel(); ++i) {
      EXPECT_NEAR(got.data()[i], want.data()[i], 1e-5 * std::max(1.0, std::abs(want.data()[i])));
    }
  }
}

TEST(Conv2d, Errors) {
  std::mt19937_64 rng(3);
  auto p = conv_params(randn(Shape{2, 3, 3, 3}, rng), 1, 0, 1);
  EXPECT_THROW(nn::conv2d(randn(Shape{1, 2, 5, 5}, rng), p), ShapeError);  // channel mismatch
  EXPECT_THROW(nn::conv2d(randn(Shape{1, 3, 2, 2}, rng), p), ShapeError);  // empty output
}

TEST(MaxPool, ExamplesAndTieRule) {
  EXPECT_EQ(nn::maxpool2(Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4})).item(), 4.0);
  auto x = Tensor<double>(Shape{1, 1, 2, 4}, 7.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(sum(nn::maxpool2(x)));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 0, 1, 0, 0, 0, 0, 0}));
  EXPECT_THROW(nn::maxpool2(Tensor<double>(Shape{1, 1, 3, 4})), ShapeError);
}

TEST(MaxPool, MatchesWindowScan) {
  std::mt19937_64 rng(4);
  auto x = randn(Shape{2, 3, 8, 8}, rng);
  EXPECT_EQ(values(nn::maxpool2(x)), values(ref::maxpool2(x)));
}

TEST(Upsample, HalfPixelExample) {
  auto y = nn::upsample_bilinear2(Tensor<double>(Shape{1, 1, 1, 2}, std::vector<double>{1, 3}));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 4}));
  for (int r = 0; r < 2; ++r) {
    EXPECT_DOUBLE_EQ(y.at(0, 0, r, 0), 1.0);
    EXPECT_DOUBLE_EQ(y.at(0, 0, r, 1), 1.5);
    EXPECT_DOUBLE_EQ(y.at(0, 0, r, 2), 2.5);
    EXPECT_DOUBLE_EQ(y.at(0, 0, r, 3), 3.0);
  }
}

TEST(Upsample, ConstantAndRangeProperties) {
  const auto c = nn::upsample_bilinear2(Tensor<double>(Shape{1, 2, 3, 5}, 2.5));
  for (double v : c.data()) EXPECT_EQ(v, 2.5);
  // Stride-2 sampling of an upsampled constant gives the constant back.
  EXPECT_EQ(c.at(0, 1, 4, 8), 2.5);
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    auto x = randn(Shape{1, 2, 4, 6}, rng);
    const auto y = nn::upsample_bilinear2(x);
    const auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
    const auto [ylo, yhi] = std::minmax_element(y.data().begin(), y.data().end());
    EXPECT_GE(*ylo, *lo - 1e-12);
    EXPECT_LE(*yhi, *hi + 1e-12);
    // maxpool then upsample never raises the global max
    const auto z = nn::upsample_bilinear2(nn::maxpool2(x));
    EXPECT_LE(*std::max_element(z.data().begin(), z.data().end()), *hi + 1e-12);
    const auto o = ref::upsample_bilinear2(x);
    for (std::int64_t i = 0; i < o.numel(); ++i) EXPECT_NEAR(y.data()[i], o.data()[i], 1e-12);
  }
}

TEST(BatchNorm, InferIdentity) {
  std::mt19937_64 rng(6);
  auto x = randn(Shape{2, 3, 4, 4}, rng);
  auto p = nn::BatchNormParams<double>::make(3);
  const auto y = nn::batchnorm(x, p, Mode::kInfer);
  for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-5 * std::abs(x.data()[i]) + 1e-12);
}

TEST(BatchNorm, TrainNormalizesAndUpdatesRunningStats) {
  std::mt19937_64 rng(7);
  auto x = randn(Shape{2, 3, 4, 4}, rng, 3.0);
  auto p = nn::BatchNormParams<double>::make(3);
  p.gamma.data_mut()[1] = 2.0;
  p.beta.data_mut()[1] = -1.0;
  const auto y = nn::batchnorm(x, p, Mode::kTrain);
  for (int c = 0; c < 3; ++c) {
    double m = 0, sq = 0;
    for (int n = 0; n < 2; ++n) {
      for (int i = 0; i < 16; ++i) m += y.data()[(n * 3 + c) * 16 + i];
    }
    m /= 32;
    for (int n = 0; n < 2; ++n) {
      for (int i = 0; i < 16; ++i) sq += std::pow(y.data()[(n * 3 + c) * 16 + i] - m, 2);
    }
    EXPECT_NEAR(m, p.beta.data()[c], 1e-4);
    EXPECT_NEAR(std::sqrt(sq / 32), p.gamma.data()[c], 1e-4);
    EXPECT_GT(p.running_var.data()[c], 0.0);
  }
  EXPECT_NE(p.running_mean.data()[0], 0.0);
  EXPECT_THROW(nn::batchnorm(randn(Shape{1, 2, 2, 2}, rng), p, Mode::kTrain), ShapeError);
}

TEST(Dropout, Semantics) {
  std::mt19937_64 rng(8);
  auto x = randn(Shape{1, 4, 16, 16}, rng);
  EXPECT_EQ(values(nn::dropout(x, 0.0, Mode::kTrain, 1)), values(x));
  EXPECT_EQ(values(nn::dropout(x, 0.5, Mode::kInfer, 1)), values(x));
  EXPECT_EQ(values(nn::dropout(x, 0.3, Mode::kTrain, 9)), values(nn::dropout(x, 0.3, Mode::kTrain, 9)));
  EXPECT_NE(values(nn::dropout(x, 0.3, Mode::kTrain, 9)), values(nn::dropout(x, 0.3, Mode::kTrain, 10)));
  const auto y = nn::dropout(Tensor<double>(Shape{1, 1, 100, 100}, 1.0), 0.25, Mode::kTrain, 3);
  int kept = 0;
  for (double v : y.data()) {
    if (v != 0) {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
      ++kept;
    }
  }
  EXPECT_NEAR(kept / 10000.0, 0.75, 0.03);
  EXPECT_THROW(nn::dropout(x, 1.0, Mode::kTrain, 1), ShapeError);
}

TEST(NnOps, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed + 50);
    const std::uint64_t proj = seed;
    auto x = randn(Shape{1, 2, 4, 4}, rng);
    auto p = conv_params(randn(Shape{2, 2, 3, 3}, rng), 1 + seed % 2, 1, 1 + (seed / 2) % 2);
    p.bias = randn(Shape::channels(2), rng);
    auto r = ref::grad_check([&] { return ref::random_projection(nn::conv2d(x, p), proj); },
                             {{"x", x}, {"w", p.weight}, {"b", *p.bias}});
    EXPECT_LT(r.max_rel_error, 1e-4) << "conv seed " << seed << " " << r.worst;

    r = ref::grad_check([&] { return ref::random_projection(nn::maxpool2(x), proj); }, {{"x", x}});
    EXPECT_LT(r.max_rel_error, 1e-4) << "maxpool seed " << seed;
    r = ref::grad_check([&] { return ref::random_projection(nn::upsample_bilinear2(x), proj); }, {{"x", x}});
    EXPECT_LT(r.max_rel_error, 1e-4) << "upsample seed " << seed;

    auto bx = randn(Shape{2, 3, 4, 4}, rng);
    auto bn = nn::BatchNormParams<double>::make(3);
    bn.gamma = randn(Shape::channels(3), rng);
    bn.beta = randn(Shape::channels(3), rng);
    for (Mode m : {Mode::kTrain, Mode::kInfer}) {
      r = ref::grad_check([&] { return ref::random_projection(nn::batchnorm(bx, bn, m), proj); },
                          {{"x", bx}, {"gamma", bn.gamma}, {"beta", bn.beta}});
      EXPECT_LT(r.max_rel_error, 1e-4) << "batchnorm seed " << seed;
    }
    r = ref::grad_check([&] { return ref::random_projection(nn::dropout(x, 0.4, Mode::kTrain, seed), proj); },
                        {{"x", x}});
    EXPECT_LT(r.max_rel_error, 1e-4) << "dropout seed " << seed;
  }
}
