#include <random>
#include <string>

#include <gtest/gtest.h>

#include "bdg/network.hpp"
#include "bdg/reference.hpp"
#include "bdg/rsu.hpp"
#include "support.hpp"

using namespace bdg;
using rsu::RsuConfig;
using test::randn;
using test::values;

namespace {

template <typename T>
std::int64_t trainable(rsu::RsuBlock<T>& b) {
  std::int64_t n = 0;
  b.visit("rsu", [&n](const std::string&, Tensor<T>& t, ParamRole r) {
    if (is_trainable(r)) n += t.numel();
  });
  return n;
}

}  // namespace

TEST(Rsu, GoldenParameterCount) {
  // entry 1856 + enc1 18496 + 5 x 9280 + bottom 9280 + 5 x 18496 + dec1 36992, counted per layer
  auto b = rsu::build_rsu<float>(RsuConfig{7, 3, 32, 64});
  EXPECT_EQ(trainable(b), 205504);
  EXPECT_EQ(ref::rsu_params(RsuConfig{7, 3, 32, 64}), 205504);
}

TEST(Rsu, VersionBlocksBuildAndMatchCountingOracle) {
  for (auto v : {net::Version::kLight, net::Version::kBase, net::Version::kLarge}) {
    for (const auto& cfg : net::NetworkConfig::for_version(v).low_res_blocks) {
      auto b = rsu::build_rsu<float>(cfg);
      EXPECT_EQ(trainable(b), ref::rsu_params(cfg)) << cfg.str();
      EXPECT_EQ(static_cast<int>(b.encoder.size()), cfg.l - 1);
      EXPECT_EQ(static_cast<int>(b.decoder.size()), cfg.l - 1);
      EXPECT_EQ(b.bottom.conv.dilation, 2);
    }
  }
}

TEST(Rsu, InvalidConfigs) {
  EXPECT_THROW(rsu::build_rsu<float>(RsuConfig{3, 3, 4, 4}), ShapeError);
  EXPECT_THROW(rsu::build_rsu<float>(RsuConfig{8, 3, 4, 4}), ShapeError);
  EXPECT_THROW(rsu::build_rsu<float>(RsuConfig{4, 0, 4, 4}), ShapeError);
}

TEST(Rsu, Rsu4PoolsTwice) {
  auto b = rsu::build_rsu<float>(RsuConfig{4, 64, 16, 64});
  rsu::RsuTrace trace;
  std::mt19937_64 rng(1);
  rsu::rsu_forward(b, randn<float>(Shape{1, 64, 8, 8}, rng), Mode::kInfer, rsu::PoolPolicy::kStrict, &trace);
  EXPECT_EQ(trace.pools, 2);
}

TEST(Rsu, PreservesSpatialSizeAndMirrorsSkips) {
  std::mt19937_64 rng(2);
  for (int l = 4; l <= 7; ++l) {
    auto b = rsu::build_rsu<float>(RsuConfig{l, 3, 4, 6});
    const std::int64_t d = std::int64_t{1} << (l - 2);
    for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{d, d}, {2 * d, 3 * d}}) {
      rsu::RsuTrace trace;
      const auto y = rsu::rsu_forward(b, randn<float>(Shape{2, 3, h, w}, rng), Mode::kTrain,
                                      rsu::PoolPolicy::kStrict, &trace);
      EXPECT_EQ(y.shape(), (Shape{2, 6, h, w})) << "l=" << l;
      ASSERT_EQ(trace.encoder.size(), static_cast<std::size_t>(l - 1));
      ASSERT_EQ(trace.decoder_inputs.size(), static_cast<std::size_t>(l - 1));
      for (int k = 0; k < l - 1; ++k) {
        EXPECT_EQ(trace.encoder[k].h, trace.decoder_inputs[k].h);
        EXPECT_EQ(trace.encoder[k].w, trace.decoder_inputs[k].w);
      }
    }
  }
}

TEST(Rsu, Rsu7On64) {
  std::mt19937_64 rng(3);
  auto b = rsu::build_rsu<float>(RsuConfig{7, 3, 32, 64});
  EXPECT_EQ(rsu::rsu_forward(b, randn<float>(Shape{1, 3, 64, 64}, rng), Mode::kInfer).shape(), (Shape{1, 64, 64, 64}));
}

TEST(Rsu, DivisibilityErrorNamesDivisor) {
  std::mt19937_64 rng(4);
  auto b = rsu::build_rsu<float>(RsuConfig{6, 3, 4, 4});
  try {
    rsu::rsu_forward(b, randn<float>(Shape{1, 3, 24, 32}, rng), Mode::kInfer);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("16"), std::string::npos) << e.what();
  }
  // The saturating policy accepts it and still preserves the size.
  EXPECT_EQ(rsu::rsu_forward(b, randn<float>(Shape{1, 3, 24, 32}, rng), Mode::kInfer, rsu::PoolPolicy::kSaturate).shape(),
            (Shape{1, 4, 24, 32}));
  EXPECT_THROW(rsu::rsu_forward(b, randn<float>(Shape{1, 2, 32, 32}, rng), Mode::kInfer), ShapeError);
}

TEST(Rsu, ZeroedFinalDecoderLeavesEntryOutput) {
  std::mt19937_64 rng(5);
  auto b = rsu::build_rsu<double>(RsuConfig{5, 3, 4, 6});
  b.visit("rsu", [&rng](const std::string&, Tensor<double>& t, ParamRole r) {
    if (r == ParamRole::kConvWeight) t = randn(t.shape(), rng, 0.3);
  });
  for (double& v : b.decoder[0].conv.weight.data_mut()) v = 0;
  auto x = randn(Shape{1, 3, 16, 16}, rng);
  const auto y = rsu::rsu_forward(b, x, Mode::kInfer);
  EXPECT_EQ(values(y), values(b.entry.forward(x, Mode::kInfer)));
}

TEST(Rsu, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  auto b = rsu::build_rsu<double>(RsuConfig{4, 2, 2, 2});
  std::vector<std::pair<std::string, Tensor<double>>> in;
  std::normal_distribution<double> jitter(0.0, 0.2);
  b.visit("rsu", [&](const std::string& name, Tensor<double>& t, ParamRole r) {
    if (r == ParamRole::kConvWeight) t = randn(t.shape(), rng, 0.5);
    if (r == ParamRole::kBnGamma) for (double& v : t.data_mut()) v = 1 + jitter(rng);
    if (r == ParamRole::kBnBeta) for (double& v : t.data_mut()) v = 1.5 + jitter(rng);
    if (is_trainable(r)) in.emplace_back(name, t);
  });
  auto x = randn(Shape{2, 2, 16, 16}, rng);
  in.insert(in.begin(), {"x", x});
  ref::GradCheckOptions o;
  o.max_entries_per_tensor = 4;
  o.max_attempts_per_tensor = 32;
  const auto r =
      ref::grad_check([&] { return ref::random_projection(rsu::rsu_forward(b, x, Mode::kTrain), 3); }, in, o);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_TRUE(r.unchecked.empty()) << r.unchecked.front();
}
