#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>

#include <gtest/gtest.h>

#include "bdg/network.hpp"
#include "bdg/ops.hpp"
#include "bdg/reference.hpp"
#include "bdg/train.hpp"
#include "support.hpp"

using namespace bdg;
using net::FusionMode;
using net::NetworkConfig;
using net::Version;
using test::randn;
using test::values;

namespace {

const ForwardContext kInfer{Mode::kInfer, 0};

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("bdg_network_test_" + name);
}

}  // namespace

TEST(NetworkConfig, JsonRoundTrip) {
  for (auto v : {Version::kLight, Version::kBase, Version::kLarge}) {
    auto cfg = NetworkConfig::for_version(v, 11, FusionMode::kSingleEA);
    cfg.ohem = false;
    cfg.ga_s = 32;
    EXPECT_EQ(NetworkConfig::from_json(cfg.to_json()), cfg);
    EXPECT_EQ(NetworkConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());
  }
  EXPECT_THROW(NetworkConfig::from_json("{"), ConfigError);
  EXPECT_THROW(net::parse_version("huge"), ConfigError);
  EXPECT_THROW(net::parse_fusion_mode("sum"), ConfigError);
}

TEST(NetworkConfig, ValidateRejectsBadValues) {
  auto cfg = NetworkConfig::for_version(Version::kLight, 3);
  EXPECT_NO_THROW(cfg.validate());
  auto bad = cfg;
  bad.num_classes = 0;
  EXPECT_ANY_THROW(bad.validate());
  bad = cfg;
  bad.num_classes = 256;
  EXPECT_ANY_THROW(bad.validate());
  bad = cfg;
  bad.ga_s = 0;
  EXPECT_ANY_THROW(bad.validate());
  bad = cfg;
  bad.ga_dropout = 1.0;
  EXPECT_ANY_THROW(bad.validate());
}

TEST(Network, ForwardShapes) {
  std::mt19937_64 rng(1);
  auto model = net::build_model<float>(NetworkConfig::for_version(Version::kLight, 3, FusionMode::kConcatOnly));
  const auto x = randn<float>(Shape{1, 3, 64, 64}, rng);
  EXPECT_EQ(net::forward(model, x, kInfer).shape(), (Shape{1, 3, 64, 64}));
  EXPECT_EQ(net::high_res_forward(model, x, Mode::kInfer).shape(), (Shape{1, 128, 8, 8}));
  EXPECT_EQ(net::low_res_forward(model, randn<float>(Shape{1, 3, 256, 256}, rng), Mode::kInfer).shape(),
            (Shape{1, 64, 16, 16}));
  EXPECT_THROW(net::forward(model, randn<float>(Shape{1, 3, 48, 64}, rng), kInfer), ShapeError);
  EXPECT_THROW(net::forward(model, randn<float>(Shape{1, 1, 64, 64}, rng), kInfer), ShapeError);
}

TEST(Network, EveryFusionModeProducesLogits) {
  std::mt19937_64 rng(2);
  const auto x = randn<float>(Shape{2, 3, 64, 64}, rng);
  for (auto m : {FusionMode::kHighOnly, FusionMode::kLowOnly, FusionMode::kConcatOnly, FusionMode::kSingleEA,
                 FusionMode::kDGA}) {
    auto model = net::build_model<float>(NetworkConfig::for_version(Version::kLight, 5, m));
    const auto y = net::forward(model, x, kInfer);
    EXPECT_EQ(y.shape(), (Shape{2, 5, 64, 64})) << net::to_string(m);
    for (auto l : net::argmax_labels(y, 1)) EXPECT_LT(l, 5);
  }
}

TEST(Network, ArgmaxPicksLargestChannel) {
  Tensor<float> logits(Shape{1, 3, 1, 2});
  auto d = logits.data_mut();
  // pixel 0: channel 2 wins; pixel 1: tie between 0 and 1 goes to 0
  d[0] = 0; d[1] = 5; d[2] = 1; d[3] = 5; d[4] = 2; d[5] = -1;
  EXPECT_EQ(net::argmax_labels(logits), (std::vector<std::uint8_t>{2, 0}));
}

TEST(Network, ForwardIsDeterministic) {
  std::mt19937_64 rng(3);
  const auto x = randn<float>(Shape{1, 3, 64, 64}, rng);
  auto a = net::build_model<float>(NetworkConfig::for_version(Version::kLight, 3));
  auto b = net::build_model<float>(NetworkConfig::for_version(Version::kLight, 3));
  EXPECT_EQ(values(net::forward(a, x, kInfer)), values(net::forward(b, x, kInfer)));
  const ForwardContext train{Mode::kTrain, 42};
  EXPECT_EQ(values(net::forward(a, x, train)), values(net::forward(b, x, train)));
}

TEST(Network, ParamCountsMatchOracleAndGrowWithVersion) {
  std::int64_t prev = 0;
  for (auto v : {Version::kLight, Version::kBase, Version::kLarge}) {
    const auto cfg = NetworkConfig::for_version(v);
    auto model = net::build_model<float>(cfg);
    const auto n = net::count_params(model);
    EXPECT_EQ(n, ref::network_params(cfg)) << net::to_string(v);
    EXPECT_GT(n, prev);
    std::int64_t sum = 0;
    for (const auto& [name, c] : net::param_breakdown(model)) sum += c;
    EXPECT_EQ(sum, n);
    prev = n;
  }
}

TEST(Network, ZeroValueUnitsMatchConcatOnly) {
  std::mt19937_64 rng(4);
  auto dga = net::build_model<double>(NetworkConfig::for_version(Version::kLight, 3, FusionMode::kDGA));
  auto cat = net::build_model<double>(NetworkConfig::for_version(Version::kLight, 3, FusionMode::kConcatOnly));
  for (double& v : dga.dga->ga_high.m_v.data_mut()) v = 0;
  for (double& v : dga.dga->ga_low.m_v.data_mut()) v = 0;
  const auto x = randn<double>(Shape{1, 3, 64, 64}, rng);
  EXPECT_EQ(values(net::forward(dga, x, kInfer)), values(net::forward(cat, x, kInfer)));
}

TEST(Network, GradientsReachEverySubmodule) {
  std::mt19937_64 rng(5);
  auto model = net::build_model<float>(NetworkConfig::for_version(Version::kLight, 3));
  train::set_trainable(model, true);
  Tape<float> tape;
  const auto y = net::forward(model, randn<float>(Shape{2, 3, 64, 64}, rng), ForwardContext{Mode::kTrain, 1});
  tape.backward(sum(mul(y, y)));
  std::set<std::string> missing;
  model.visit([&](const std::string& name, Tensor<float>& t, ParamRole r) {
    if (!is_trainable(r)) return;
    double mag = 0;
    for (float g : t.grad()) mag += std::abs(g);
    if (!(mag > 0)) missing.insert(name);
  });
  EXPECT_TRUE(missing.empty()) << *missing.begin();
}

TEST(Network, ContextEmbedKeepsShape) {
  std::mt19937_64 rng(6);
  auto block = net::ContextEmbed<float>::make(8);
  const auto x = randn<float>(Shape{2, 8, 4, 6}, rng);
  EXPECT_EQ(net::context_embed(block, x, Mode::kInfer).shape(), x.shape());
  EXPECT_THROW(net::context_embed(block, randn<float>(Shape{2, 4, 4, 6}, rng), Mode::kInfer), ShapeError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(7);
  auto cfg = NetworkConfig::for_version(Version::kLight, 4);
  cfg.init_seed = 99;
  auto model = net::build_model<float>(cfg);
  const auto path = temp_file("rt.bdgn");
  net::save_checkpoint(path, model);
  EXPECT_EQ(net::read_checkpoint_config(path), cfg);
  auto loaded = net::load_checkpoint<float>(path, &cfg);
  std::vector<std::vector<float>> a, b;
  model.visit([&](const std::string&, Tensor<float>& t, ParamRole) { a.push_back(values(t)); });
  loaded.visit([&](const std::string&, Tensor<float>& t, ParamRole) { b.push_back(values(t)); });
  EXPECT_EQ(a, b);
  const auto x = randn<float>(Shape{1, 3, 64, 64}, rng);
  EXPECT_EQ(values(net::forward(model, x, kInfer)), values(net::forward(loaded, x, kInfer)));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsMismatchAndTrailingBytes) {
  auto cfg = NetworkConfig::for_version(Version::kLight, 4);
  auto model = net::build_model<float>(cfg);
  const auto path = temp_file("bad.bdgn");
  net::save_checkpoint(path, model);
  auto other = NetworkConfig::for_version(Version::kLight, 5);
  EXPECT_ANY_THROW(net::load_checkpoint<float>(path, &other));
  { std::ofstream(path, std::ios::binary | std::ios::app) << 'x'; }
  EXPECT_THROW(net::load_checkpoint<float>(path), DataError);
  { std::ofstream(path, std::ios::binary) << "BDGX"; }
  EXPECT_THROW(net::load_checkpoint<float>(path), DataError);
  std::filesystem::remove(path);
  EXPECT_THROW(net::load_checkpoint<float>(path), DataError);
}
