#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "bdg/attention.hpp"
#include "bdg/ops.hpp"
#include "bdg/reference.hpp"
#include "support.hpp"

using namespace bdg;
using attention::double_norm;
using attention::ga_forward;
using test::mat;
using test::randn;
using test::values;

TEST(DoubleNorm, Examples) {
  for (double v : values(double_norm(mat(2, 2, {0, 0, 0, 0})))) EXPECT_DOUBLE_EQ(v, 0.5);
  const auto a = values(double_norm(mat(2, 2, {0, std::log(2.0), 0, 0})));
  EXPECT_NEAR(a[0], 3.0 / 7, 1e-15);
  EXPECT_NEAR(a[1], 4.0 / 7, 1e-15);
  EXPECT_NEAR(a[2], 0.6, 1e-15);
  EXPECT_NEAR(a[3], 0.4, 1e-15);
  for (double v : values(double_norm(mat(1, 4, {2, 2, 2, 2})))) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_THROW(double_norm(mat(1, 2, {0, NAN})), NumericError);
}

TEST(DoubleNorm, RowStochasticOverManySeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng() % 64), s = 1 + static_cast<std::int64_t>(rng() % 8);
    const double scale = seed % 10 == 0 ? 300.0 : 3.0;
    const auto a = double_norm(randn<float>(Shape::matrix(n, s), rng, scale));
    for (std::int64_t i = 0; i < n; ++i) {
      double total = 0;
      for (std::int64_t j = 0; j < s; ++j) {
        const float v = a.data()[i * s + j];
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
        total += v;
      }
      ASSERT_NEAR(total, 1.0, 1e-5) << "seed " << seed << " row " << i;
    }
  }
}

TEST(DoubleNorm, MatchesTwoStepOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    auto a = randn(Shape::matrix(9, 5), rng, 2.0);
    const auto want = ref::double_norm(a.data(), 9, 5);
    const auto got = values(double_norm(a));
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(DoubleNorm, ColumnShiftInvariance) {
  std::mt19937_64 rng(2);
  auto a = randn(Shape::matrix(6, 4), rng);
  auto shifted = a.detach();
  const double shift[4] = {0.5, -2.0, 4.0, 0.0};
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 4; ++j) shifted.data_mut()[i * 4 + j] += shift[j];
  }
  const auto x = values(double_norm(a));
  const auto y = values(double_norm(shifted));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], y[i], 1e-14);
}

TEST(GaForward, ZeroValueUnitsGiveZero) {
  std::mt19937_64 rng(3);
  auto p = attention::GaParams<double>::make(4, 3, 5, 0.0);
  p.m_k = randn(p.m_k.shape(), rng);
  for (double v : values(ga_forward(randn(Shape::matrix(7, 4), rng), p, Mode::kTrain, 1))) EXPECT_EQ(v, 0.0);
}

TEST(GaForward, MatchesDirectFormula) {
  // N=3, d=2, S=2, d_out=2 with hand-picked values, then random shapes.
  auto p = attention::GaParams<double>::make(2, 2, 2, 0.0);
  p.m_k = mat(2, 2, {0.5, -1.0, 2.0, 0.25});
  p.m_v = mat(2, 2, {1.0, 2.0, -3.0, 0.5});
  const auto f = mat(3, 2, {1.0, 0.0, 0.0, 1.0, 0.3, -0.7});
  const auto want = ref::ga_direct(f.data(), p.m_k.data(), p.m_v.data(), 3, 2, 2, 2);
  const auto got = values(ga_forward(f, p, Mode::kInfer, 0));
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-10);

  std::mt19937_64 rng(4);
  for (int t = 0; t < 30; ++t) {
    const std::int64_t n = 1 + rng() % 64, d = 1 + rng() % 16, s = 1 + rng() % 8, dout = 1 + rng() % 6;
    auto q = attention::GaParams<double>::make(d, dout, s, 0.1);
    q.m_k = randn(q.m_k.shape(), rng);
    q.m_v = randn(q.m_v.shape(), rng);
    auto x = randn(Shape::matrix(n, d), rng);
    const auto w = ref::ga_direct(x.data(), q.m_k.data(), q.m_v.data(), n, d, s, dout);
    const auto g = values(ga_forward(x, q, Mode::kInfer, 0));
    for (std::size_t i = 0; i < w.size(); ++i) ASSERT_NEAR(g[i], w[i], 1e-10);
  }
}

TEST(GaForward, OutputsAreConvexCombinationsOfValueRows) {
  std::mt19937_64 rng(5);
  auto p = attention::GaParams<double>::make(3, 4, 6, 0.0);
  p.m_k = randn(p.m_k.shape(), rng);
  p.m_v = randn(p.m_v.shape(), rng);
  const auto y = ga_forward(randn(Shape::matrix(20, 3), rng), p, Mode::kInfer, 0);
  for (int c = 0; c < 4; ++c) {
    double lo = 1e300, hi = -1e300;
    for (int s = 0; s < 6; ++s) {
      lo = std::min(lo, p.m_v.data()[s * 4 + c]);
      hi = std::max(hi, p.m_v.data()[s * 4 + c]);
    }
    for (int i = 0; i < 20; ++i) {
      EXPECT_GE(y.data()[i * 4 + c], lo - 1e-12);
      EXPECT_LE(y.data()[i * 4 + c], hi + 1e-12);
    }
  }
}

TEST(GaForward, Errors) {
  auto p = attention::GaParams<double>::make(3, 2, 4, 0.0);
  EXPECT_THROW(ga_forward(Tensor<double>(Shape::matrix(5, 4)), p, Mode::kInfer, 0), ShapeError);
  EXPECT_THROW(attention::GaParams<double>::make(3, 2, 4, 1.0), ShapeError);
  EXPECT_THROW(attention::GaParams<double>::make(0, 2, 4, 0.0), ShapeError);
}

TEST(DgaFuse, ShapesAndRatioError) {
  std::mt19937_64 rng(6);
  auto p = attention::DgaParams<double>::make(4, 8, 8, 0.1);
  const auto out = attention::dga_fuse(randn(Shape{2, 4, 8, 12}, rng), randn(Shape{2, 8, 4, 6}, rng), p,
                                       ForwardContext{Mode::kTrain, 1});
  EXPECT_EQ(out.shape(), (Shape{2, 12, 8, 12}));
  EXPECT_THROW(attention::dga_fuse(randn(Shape{1, 4, 8, 8}, rng), randn(Shape{1, 8, 8, 8}, rng), p, {}), ShapeError);
  EXPECT_THROW(attention::dga_fuse(randn(Shape{1, 5, 8, 8}, rng), randn(Shape{1, 8, 4, 4}, rng), p, {}), ShapeError);
}

TEST(DgaFuse, ZeroValueUnitsGiveResidualIdentity) {
  std::mt19937_64 rng(7);
  auto p = attention::DgaParams<double>::make(4, 8, 8, 0.1);
  p.ga_high.m_k = randn(p.ga_high.m_k.shape(), rng);
  p.ga_low.m_k = randn(p.ga_low.m_k.shape(), rng);
  auto fh = randn(Shape{1, 4, 8, 8}, rng);
  auto fl = randn(Shape{1, 8, 4, 4}, rng);
  const auto fused = attention::dga_fuse(fh, fl, p, ForwardContext{Mode::kTrain, 3});
  const auto plain = concat_channels<double>({fh, nn::upsample_bilinear2(fl)});
  EXPECT_EQ(values(fused), values(plain));
}

TEST(DgaFuse, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  auto p = attention::DgaParams<double>::make(4, 8, 8, 0.1);
  p.ga_high.m_k = randn(p.ga_high.m_k.shape(), rng, 0.5);
  p.ga_high.m_v = randn(p.ga_high.m_v.shape(), rng, 0.5);
  p.ga_low.m_k = randn(p.ga_low.m_k.shape(), rng, 0.5);
  p.ga_low.m_v = randn(p.ga_low.m_v.shape(), rng, 0.5);
  p.down.conv.weight = randn(p.down.conv.weight.shape(), rng, 0.5);
  p.down.bn.beta = randn(p.down.bn.beta.shape(), rng, 0.2);
  auto fh = randn(Shape{1, 4, 8, 8}, rng);
  auto fl = randn(Shape{1, 8, 4, 4}, rng);
  ref::GradCheckOptions o;
  o.max_entries_per_tensor = 8;
  const auto r = ref::grad_check(
      [&] { return ref::random_projection(attention::dga_fuse(fh, fl, p, ForwardContext{Mode::kTrain, 3}), 5); },
      {{"f_h", fh}, {"f_l", fl}, {"m_k.hi", p.ga_high.m_k}, {"m_v.hi", p.ga_high.m_v}, {"m_k.lo", p.ga_low.m_k},
       {"m_v.lo", p.ga_low.m_v}, {"down.w", p.down.conv.weight}},
      o);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(NaiveSelfAttention, RowsAreConvexCombinations) {
  std::mt19937_64 rng(9);
  auto f = randn<float>(Shape::matrix(300, 4), rng);
  const auto y = attention::naive_self_attention(f);
  EXPECT_EQ(y.shape(), f.shape());
  for (int c = 0; c < 4; ++c) {
    float lo = 1e30f, hi = -1e30f;
    for (int i = 0; i < 300; ++i) {
      lo = std::min(lo, f.data()[i * 4 + c]);
      hi = std::max(hi, f.data()[i * 4 + c]);
    }
    for (int i = 0; i < 300; ++i) {
      EXPECT_GE(y.data()[i * 4 + c], lo - 1e-4f);
      EXPECT_LE(y.data()[i * 4 + c], hi + 1e-4f);
    }
  }
}
