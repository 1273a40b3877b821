#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "bdg/ops.hpp"
#include "bdg/reference.hpp"
#include "bdg/serialize.hpp"
#include "support.hpp"

using namespace bdg;
using test::mat;
using test::randn;
using test::values;

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor<float>(Shape{0, 1, 1, 1}), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{1, 1, 2, 2}).item(), ShapeError);
}

TEST(Tensor, HandlesShareStorage) {
  Tensor<float> a(Shape{1, 1, 1, 2});
  Tensor<float> b = a;
  b.data_mut()[1] = 5;
  EXPECT_EQ(a.data()[1], 5);
  EXPECT_FALSE(a.detach().same_storage(a));
}

TEST(Autodiff, SumGivesOnes) {
  auto x = Tensor<double>(Shape{2, 3, 2, 2}, 0.5);
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Autodiff, SumOfSquares) {
  auto x = mat(1, 3, {1, 2, 3});
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(sum(mul(x, x)));
  EXPECT_EQ(values(x.detach()), (std::vector<double>{1, 2, 3}));
  const std::vector<double> g(x.grad().begin(), x.grad().end());
  EXPECT_EQ(g, (std::vector<double>{2, 4, 6}));
}

TEST(Autodiff, BackwardTwiceIsAnError) {
  auto x = mat(1, 2, {1, 2});
  x.set_requires_grad(true);
  Tape<double> tape;
  auto loss = sum(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), TapeError);
}

TEST(Autodiff, NonScalarAndDetachedLossesRejected) {
  auto x = mat(1, 2, {1, 2});
  x.set_requires_grad(true);
  Tape<double> tape;
  EXPECT_THROW(tape.backward(scale(x, 2.0)), ShapeError);
  EXPECT_THROW(tape.backward(Tensor<double>::scalar(1.0)), TapeError);
}

TEST(Autodiff, SharedInputAccumulates) {
  // y = x*x + x at x = 3 -> dy/dx = 7
  auto x = mat(1, 1, {3});
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(sum(add(mul(x, x), x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Matmul, Examples) {
  EXPECT_EQ(values(matmul(mat(2, 2, {1, 0, 0, 1}), mat(2, 2, {1, 2, 3, 4}))), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(values(matmul(mat(2, 2, {1, 0, 0, 0}), mat(2, 2, {5, 6, 7, 8}))), (std::vector<double>{5, 6, 0, 0}));
  EXPECT_THROW(matmul(mat(2, 3, std::vector<double>(6)), mat(2, 3, std::vector<double>(6))), ShapeError);
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = randn(Shape::matrix(3, 4), rng);
    auto b = randn(Shape::matrix(4, 2), rng);
    const auto got = values(matmul(a, b));
    const auto want = ref::matmul(a.data(), b.data(), 3, 4, 2);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-6 * std::abs(want[i]) + 1e-12);
  }
}

TEST(Matmul, IdentityAssociativityBitwise) {
  std::mt19937_64 rng(2);
  auto a = randn(Shape::matrix(5, 4), rng);
  auto b = randn(Shape::matrix(4, 3), rng);
  Tensor<double> eye(Shape::matrix(4, 4));
  for (int i = 0; i < 4; ++i) eye.data_mut()[i * 5] = 1;
  EXPECT_EQ(values(matmul(matmul(a, eye), b)), values(matmul(a, matmul(eye, b))));
}

TEST(Softmax, Examples) {
  const auto z = softmax_axis(mat(2, 2, {0, 0, 0, 0}), NormAxis::kWithinColumn);
  for (double v : z.data()) EXPECT_DOUBLE_EQ(v, 0.5);
  const auto s = values(softmax_axis(mat(2, 2, {0, std::log(2.0), 0, 0}), NormAxis::kWithinColumn));
  EXPECT_NEAR(s[0], 0.5, 1e-15);
  EXPECT_NEAR(s[1], 2.0 / 3, 1e-15);
  EXPECT_NEAR(s[2], 0.5, 1e-15);
  EXPECT_NEAR(s[3], 1.0 / 3, 1e-15);
  EXPECT_EQ(softmax_axis(mat(1, 1, {42}), NormAxis::kWithinRow).item(), 1.0);
}

TEST(Softmax, StableAtLargeMagnitudes) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e4, 1e4);
  for (auto axis : {NormAxis::kWithinColumn, NormAxis::kWithinRow}) {
    Tensor<float> x(Shape::matrix(6, 5));
    for (float& v : x.data_mut()) v = static_cast<float>(u(rng));
    const auto y = softmax_axis(x, axis);
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 5; ++j) ASSERT_GE(y.data()[i * 5 + j], 0.0f);
    }
    const int outer = axis == NormAxis::kWithinRow ? 6 : 5;
    const int inner = axis == NormAxis::kWithinRow ? 5 : 6;
    for (int o = 0; o < outer; ++o) {
      double total = 0;
      for (int k = 0; k < inner; ++k) total += axis == NormAxis::kWithinRow ? y.data()[o * 5 + k] : y.data()[k * 5 + o];
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, NanRejected) {
  EXPECT_THROW(softmax_axis(mat(1, 2, {0, std::numeric_limits<double>::quiet_NaN()}), NormAxis::kWithinRow),
               NumericError);
}

TEST(L1Normalize, Examples) {
  const auto a = values(l1_normalize_axis(mat(1, 2, {0.5, 2.0 / 3}), NormAxis::kWithinRow));
  EXPECT_NEAR(a[0], 3.0 / 7, 1e-15);
  EXPECT_NEAR(a[1], 4.0 / 7, 1e-15);
  EXPECT_EQ(values(l1_normalize_axis(mat(1, 3, {1, 0, 0}), NormAxis::kWithinRow)), (std::vector<double>{1, 0, 0}));
  EXPECT_EQ(values(l1_normalize_axis(mat(1, 2, {2, 2}), NormAxis::kWithinRow)), (std::vector<double>{0.5, 0.5}));
}

TEST(L1Normalize, ZeroSliceNamesIndex) {
  try {
    l1_normalize_axis(mat(2, 2, {1, 1, 0, 0}), NormAxis::kWithinRow);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
}

TEST(Concat, ExamplesAndSliceRoundTrip) {
  std::mt19937_64 rng(4);
  auto a = randn(Shape{1, 2, 2, 2}, rng);
  auto b = randn(Shape{1, 3, 2, 2}, rng);
  const auto c = concat_channels<double>({a, b});
  EXPECT_EQ(c.shape(), (Shape{1, 5, 2, 2}));
  EXPECT_EQ(values(slice_channels(c, 0, 2)), values(a));
  EXPECT_EQ(values(slice_channels(c, 2, 3)), values(b));
  EXPECT_EQ(values(concat_channels<double>({a})), values(a));
  EXPECT_THROW(concat_channels<double>({a, randn(Shape{1, 1, 3, 2}, rng)}), ShapeError);
}

TEST(PixelMatrix, RoundTripIsExact) {
  std::mt19937_64 rng(5);
  auto x = randn(Shape{1, 3, 4, 5}, rng);
  const auto m = pixels_to_matrix(x);
  EXPECT_EQ(m.shape(), Shape::matrix(20, 3));
  EXPECT_EQ(m.data()[7 * 3 + 2], x.at(0, 2, 1, 2));
  EXPECT_EQ(values(matrix_to_pixels(m, 4, 5)), values(x));
}

// Every differentiable op against central differences, over 20 seeds.
TEST(Autodiff, OpsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto a = randn(Shape::matrix(3, 4), rng);
    auto b = randn(Shape::matrix(4, 2), rng);
    auto c = randn(Shape::matrix(3, 4), rng);
    Tensor<double> pos(Shape::matrix(3, 4));
    std::uniform_real_distribution<double> u(0.3, 2.0);
    for (double& v : pos.data_mut()) v = u(rng);
    auto y = randn(Shape{1, 2, 1, 1}, rng);
    auto img = randn(Shape{1, 2, 3, 3}, rng);
    const std::uint64_t p = seed + 100;
    auto check = [&](const char* what, const std::function<Tensor<double>()>& fn,
                     std::vector<std::pair<std::string, Tensor<double>>> in) {
      const auto r = ref::grad_check(fn, in);
      EXPECT_LT(r.max_rel_error, 1e-4) << what << " seed " << seed << " at " << r.worst;
    };
    check("matmul", [&] { return ref::random_projection(matmul(a, b), p); }, {{"a", a}, {"b", b}});
    check("transpose", [&] { return ref::random_projection(transpose(a), p); }, {{"a", a}});
    check("softmax col", [&] { return ref::random_projection(softmax_axis(a, NormAxis::kWithinColumn), p); }, {{"a", a}});
    check("softmax row", [&] { return ref::random_projection(softmax_axis(a, NormAxis::kWithinRow), p); }, {{"a", a}});
    check("l1 row", [&] { return ref::random_projection(l1_normalize_axis(pos, NormAxis::kWithinRow), p); }, {{"x", pos}});
    check("l1 col", [&] { return ref::random_projection(l1_normalize_axis(pos, NormAxis::kWithinColumn), p); },
          {{"x", pos}});
    check("add/mul/scale", [&] { return ref::random_projection(scale(mul(add(a, c), c), 1.5), p); },
          {{"a", a}, {"c", c}});
    check("mean", [&] { return mean(mul(a, a)); }, {{"a", a}});
    check("broadcast+gap",
          [&] { return ref::random_projection(add_spatial_broadcast(img, global_avg_pool(mul(img, img))), p); },
          {{"img", img}});
    check("broadcast y", [&] { return ref::random_projection(add_spatial_broadcast(img, y), p); }, {{"y", y}});
    check("concat/slice",
          [&] { return ref::random_projection(slice_channels(concat_channels<double>({img, img}), 1, 2), p); },
          {{"img", img}});
    check("pixels", [&] { return ref::random_projection(matrix_to_pixels(pixels_to_matrix(img), 3, 3), p); },
          {{"img", img}});
  }
}

TEST(Serialize, RecordLayout) {
  Tensor<float> t(Shape{1, 1, 1, 2}, std::vector<float>{1.0f, -2.0f});
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 1u + 16u + 8u);
  EXPECT_EQ(bytes.substr(0, 4), "BDGT");
  EXPECT_EQ(bytes[4], 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[4 + 1 + 12]), 2u);  // w, little-endian
  float second = 0;
  std::memcpy(&second, bytes.data() + 25, 4);
  EXPECT_EQ(second, -2.0f);
}

TEST(Serialize, RoundTripAndErrors) {
  std::mt19937_64 rng(6);
  auto t = randn(Shape{2, 3, 4, 5}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  const auto back = read_tensor<double>(ss);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(values(back), values(t));

  std::stringstream bad("XXXX");
  EXPECT_THROW(read_tensor<double>(bad), DataError);
  std::stringstream ss2;
  write_tensor(ss2, t);
  std::stringstream cut(ss2.str().substr(0, 30));
  EXPECT_THROW(read_tensor<double>(cut), DataError);
}
