#include "bdg/network.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

#include <json.hpp>

#include "bdg/ops.hpp"
#include "bdg/serialize.hpp"

namespace bdg::net {

using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[4] = {'B', 'D', 'G', 'N'};

const std::map<Version, std::string> kVersionNames = {
    {Version::kLight, "light"}, {Version::kBase, "base"}, {Version::kLarge, "large"}};

const std::map<FusionMode, std::string> kFusionNames = {{FusionMode::kHighOnly, "high_only"},
                                                        {FusionMode::kLowOnly, "low_only"},
                                                        {FusionMode::kConcatOnly, "concat"},
                                                        {FusionMode::kSingleEA, "single_ea"},
                                                        {FusionMode::kDGA, "dga"}};

std::array<rsu::RsuConfig, 6> version_table(Version v) {
  switch (v) {
    case Version::kLight:
      return {{{7, 3, 16, 32}, {6, 32, 16, 64}, {5, 64, 16, 64}, {4, 64, 16, 64}, {4, 64, 16, 64}, {4, 64, 32, 64}}};
    case Version::kBase:
      return {{{7, 3, 16, 32},
               {6, 32, 16, 64},
               {5, 64, 32, 128},
               {4, 128, 64, 256},
               {4, 256, 128, 256},
               {4, 256, 128, 256}}};
    case Version::kLarge:
      return {{{7, 3, 32, 64},
               {6, 64, 32, 128},
               {5, 128, 64, 256},
               {4, 256, 128, 512},
               {4, 512, 256, 512},
               {4, 512, 256, 512}}};
  }
  throw ConfigError("unknown network version");
}

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

}  // namespace

std::string to_string(Version v) { return kVersionNames.at(v); }
std::string to_string(FusionMode m) { return kFusionNames.at(m); }

Version parse_version(const std::string& s) {
  for (const auto& [v, name] : kVersionNames) {
    if (name == s) return v;
  }
  throw ConfigError("unknown version '" + s + "' (expected light, base or large)");
}

FusionMode parse_fusion_mode(const std::string& s) {
  for (const auto& [m, name] : kFusionNames) {
    if (name == s) return m;
  }
  throw ConfigError("unknown fusion mode '" + s + "' (expected high_only, low_only, concat, single_ea or dga)");
}

NetworkConfig NetworkConfig::for_version(Version v, std::int64_t num_classes, FusionMode mode) {
  NetworkConfig cfg;
  cfg.version = v;
  cfg.low_res_blocks = version_table(v);
  cfg.num_classes = num_classes;
  cfg.fusion_mode = mode;
  return cfg;
}

void NetworkConfig::validate() const {
  if (num_classes < 1 || num_classes > 255) throw ConfigError("num_classes must be in [1, 255]");
  if (ga_s < 1) throw ConfigError("ga_s must be >= 1");
  if (!(ga_dropout >= 0.0) || ga_dropout >= 1.0) throw ConfigError("ga_dropout must lie in [0, 1)");
  const decltype(high_res_stage_channels) hr{{{3, 64}, {64, 64}, {64, 128}}};
  if (high_res_stage_channels != hr) throw ConfigError("high-resolution stages must be (3,64),(64,64),(64,128)");
  if (low_res_blocks != version_table(version)) {
    throw ConfigError("low-resolution blocks do not match the " + to_string(version) + " table");
  }
  for (const auto& b : low_res_blocks) b.validate();
  if (low_res_blocks[4].c_out != low_res_blocks[5].c_out) {
    throw ConfigError("stage-5 and stage-6 output channels must be equal");
  }
}

std::int64_t NetworkConfig::fused_channels() const {
  switch (fusion_mode) {
    case FusionMode::kHighOnly:
      return high_channels();
    case FusionMode::kLowOnly:
      return low_channels();
    default:
      return high_channels() + low_channels();
  }
}

std::string NetworkConfig::to_json() const {
  json j;
  j["version"] = to_string(version);
  j["num_classes"] = num_classes;
  j["fusion_mode"] = to_string(fusion_mode);
  j["ohem"] = ohem;
  j["ga_s"] = ga_s;
  j["ga_dropout"] = ga_dropout;
  j["init_seed"] = init_seed;
  json hr = json::array();
  for (const auto& [i, o] : high_res_stage_channels) hr.push_back({i, o});
  j["high_res_stage_channels"] = hr;
  json lr = json::array();
  for (const auto& b : low_res_blocks) lr.push_back({b.l, b.c_in, b.m, b.c_out});
  j["low_res_blocks"] = lr;
  return j.dump();
}

NetworkConfig NetworkConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network config is not valid JSON: ") + e.what());
  }
  try {
    NetworkConfig cfg = for_version(parse_version(j.at("version").get<std::string>()),
                                    j.at("num_classes").get<std::int64_t>(),
                                    parse_fusion_mode(j.at("fusion_mode").get<std::string>()));
    cfg.ohem = j.at("ohem").get<bool>();
    cfg.ga_s = j.at("ga_s").get<std::int64_t>();
    cfg.ga_dropout = j.at("ga_dropout").get<double>();
    cfg.init_seed = j.at("init_seed").get<std::uint64_t>();
    const auto& hr = j.at("high_res_stage_channels");
    for (std::size_t i = 0; i < 3; ++i) {
      cfg.high_res_stage_channels[i] = {hr.at(i).at(0).get<std::int64_t>(), hr.at(i).at(1).get<std::int64_t>()};
    }
    const auto& lr = j.at("low_res_blocks");
    if (lr.size() != 6) throw ConfigError("low_res_blocks must list six blocks");
    for (std::size_t i = 0; i < 6; ++i) {
      cfg.low_res_blocks[i] = {lr.at(i).at(0).get<int>(), lr.at(i).at(1).get<std::int64_t>(),
                               lr.at(i).at(2).get<std::int64_t>(), lr.at(i).at(3).get<std::int64_t>()};
    }
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
}

template <typename T>
ContextEmbed<T> ContextEmbed<T>::make(std::int64_t channels) {
  ContextEmbed ce;
  ce.reduce = nn::Conv2dParams<T>::make(channels, channels, 1, 1, 0, 1, false);
  ce.bn = nn::BatchNormParams<T>::make(channels);
  ce.fuse = nn::Conv2dParams<T>::make(channels, channels, 3, 1, 1, 1, true);
  return ce;
}

template <typename T>
void ContextEmbed<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  reduce.visit(prefix + ".reduce", v);
  bn.visit(prefix + ".bn", v);
  fuse.visit(prefix + ".fuse", v);
}

template <typename T>
void SegHead<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  conv.visit(prefix + ".conv", v);
  classifier.visit(prefix + ".classifier", v);
}

template <typename T>
void SegModel<T>::visit(const ParamVisitor<T>& v) {
  for (std::size_t i = 0; i < high.size(); ++i) high[i].visit("high.stage" + std::to_string(i + 1), v);
  for (std::size_t i = 0; i < low.size(); ++i) low[i].visit("low.stage" + std::to_string(i + 1), v);
  if (context) context->visit("context", v);
  if (dga) dga->visit("fusion.dga", v);
  if (single_ga) single_ga->visit("fusion.ga", v);
  head.visit("head", v);
}

template <typename T>
void initialize(SegModel<T>& model, std::uint64_t seed) {
  model.visit([seed](const std::string& name, Tensor<T>& t, ParamRole role) {
    std::mt19937_64 rng(mix_seed(seed, name_hash(name)));
    auto data = t.data_mut();
    switch (role) {
      case ParamRole::kConvWeight: {
        const Shape& s = t.shape();
        const double fan_in = static_cast<double>(s.c * s.h * s.w);
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (T& x : data) x = static_cast<T>(dist(rng));
        break;
      }
      case ParamRole::kAttentionUnit: {
        std::normal_distribution<double> dist(0.0, 0.02);
        for (T& x : data) x = static_cast<T>(dist(rng));
        break;
      }
      case ParamRole::kBnGamma:
      case ParamRole::kBnRunningVar:
        std::fill(data.begin(), data.end(), T{1});
        break;
      case ParamRole::kConvBias:
      case ParamRole::kBnBeta:
      case ParamRole::kBnRunningMean:
        std::fill(data.begin(), data.end(), T{0});
        break;
    }
  });
}

template <typename T>
SegModel<T> build_model(const NetworkConfig& cfg) {
  cfg.validate();
  SegModel<T> m;
  m.config = cfg;
  if (cfg.uses_high_branch()) {
    for (const auto& [ci, co] : cfg.high_res_stage_channels) m.high.push_back(nn::ConvBnRelu<T>::make(ci, co));
  }
  if (cfg.uses_low_branch()) {
    for (const auto& b : cfg.low_res_blocks) m.low.push_back(rsu::build_rsu<T>(b));
    m.context = ContextEmbed<T>::make(cfg.low_res_blocks[5].c_out);
  }
  if (cfg.fusion_mode == FusionMode::kDGA) {
    m.dga = attention::DgaParams<T>::make(cfg.high_channels(), cfg.low_channels(), cfg.ga_s, cfg.ga_dropout);
  } else if (cfg.fusion_mode == FusionMode::kSingleEA) {
    const std::int64_t c = cfg.fused_channels();
    m.single_ga = attention::GaParams<T>::make(c, c, cfg.ga_s, cfg.ga_dropout);
  }
  m.head.conv = nn::ConvBnRelu<T>::make(cfg.fused_channels(), 64);
  m.head.classifier = nn::Conv2dParams<T>::make(64, cfg.num_classes, 1, 1, 0, 1, true);
  initialize(m, cfg.init_seed);
  return m;
}

template <typename T>
Tensor<T> high_res_forward(SegModel<T>& model, const Tensor<T>& image, Mode mode) {
  const Shape& s = image.shape();
  if (model.high.empty()) throw ShapeError("high_res_forward: model has no high-resolution branch");
  if (s.h % 8 != 0 || s.w % 8 != 0) {
    throw ShapeError("high_res_forward: image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " must be divisible by 8");
  }
  Tensor<T> x = image;
  for (auto& stage : model.high) x = nn::maxpool2(stage.forward(x, mode));
  return x;
}

template <typename T>
Tensor<T> context_embed(ContextEmbed<T>& block, const Tensor<T>& x, Mode mode) {
  const Tensor<T> g = global_avg_pool(x);
  const Tensor<T> y = nn::batchnorm(nn::conv2d(g, block.reduce), block.bn, mode);
  return nn::conv2d(add_spatial_broadcast(x, y), block.fuse);
}

template <typename T>
Tensor<T> low_res_forward(SegModel<T>& model, const Tensor<T>& image, Mode mode) {
  const Shape& s = image.shape();
  if (model.low.empty()) throw ShapeError("low_res_forward: model has no low-resolution branch");
  Tensor<T> x = image;
  Tensor<T> stage5;
  for (std::size_t i = 0; i < model.low.size(); ++i) {
    const Shape& xs = x.shape();
    if (i + 1 < model.low.size() && (xs.h % 2 != 0 || xs.w % 2 != 0)) {
      throw ShapeError("low_res_forward: stage " + std::to_string(i + 1) + " input " + std::to_string(xs.h) + "x" +
                       std::to_string(xs.w) + " cannot be pooled; image " + std::to_string(s.h) + "x" +
                       std::to_string(s.w) + " must be divisible by 32");
    }
    x = rsu::rsu_forward(model.low[i], x, mode, rsu::PoolPolicy::kSaturate);
    if (i == 4) stage5 = x;
    if (i + 1 < model.low.size()) x = nn::maxpool2(x);
  }
  return add(nn::upsample_bilinear2(context_embed(*model.context, x, mode)), stage5);
}

template <typename T>
Tensor<T> forward(SegModel<T>& model, const Tensor<T>& image, const ForwardContext& ctx, StageTimes* times) {
  const NetworkConfig& cfg = model.config;
  const Shape& s = image.shape();
  if (s.c != 3) throw ShapeError("forward: expected a 3-channel image batch, got " + s.str());
  if (s.h % 32 != 0 || s.w % 32 != 0) {
    throw ShapeError("forward: image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " must be divisible by 32");
  }
  auto t0 = Clock::now();
  Tensor<T> f_h;
  Tensor<T> f_l;
  if (cfg.uses_high_branch()) f_h = high_res_forward(model, image, ctx.mode);
  if (times) times->high_ms = elapsed_ms(t0);
  t0 = Clock::now();
  if (cfg.uses_low_branch()) f_l = low_res_forward(model, image, ctx.mode);
  if (times) times->low_ms = elapsed_ms(t0);

  t0 = Clock::now();
  Tensor<T> fused;
  switch (cfg.fusion_mode) {
    case FusionMode::kHighOnly:
      fused = f_h;
      break;
    case FusionMode::kLowOnly:
      fused = nn::upsample_bilinear2(f_l);
      break;
    case FusionMode::kConcatOnly:
      fused = concat_channels<T>({f_h, nn::upsample_bilinear2(f_l)});
      break;
    case FusionMode::kSingleEA: {
      const Tensor<T> cat = concat_channels<T>({f_h, nn::upsample_bilinear2(f_l)});
      fused = add(cat, attention::ga_apply(cat, *model.single_ga, ctx.mode, mix_seed(ctx.seed, name_hash("fusion.ga"))));
      break;
    }
    case FusionMode::kDGA:
      fused = attention::dga_fuse(f_h, f_l, *model.dga, ctx);
      break;
  }
  if (times) times->fusion_ms = elapsed_ms(t0);

  t0 = Clock::now();
  if (fused.shape().c != model.head.conv.conv.c_in()) {
    throw ShapeError("forward: fused map has " + std::to_string(fused.shape().c) + " channels, head expects " +
                     std::to_string(model.head.conv.conv.c_in()));
  }
  Tensor<T> logits = nn::conv2d(model.head.conv.forward(fused, ctx.mode), model.head.classifier);
  for (int i = 0; i < 3; ++i) logits = nn::upsample_bilinear2(logits);
  if (times) times->head_ms = elapsed_ms(t0);
  return logits;
}

template <typename T>
std::int64_t count_params(SegModel<T>& model) {
  std::int64_t total = 0;
  model.visit([&total](const std::string&, Tensor<T>& t, ParamRole role) {
    if (is_trainable(role)) total += t.numel();
  });
  return total;
}

template <typename T>
std::vector<std::pair<std::string, std::int64_t>> param_breakdown(SegModel<T>& model) {
  std::vector<std::pair<std::string, std::int64_t>> out;
  model.visit([&out](const std::string& name, Tensor<T>& t, ParamRole role) {
    if (!is_trainable(role)) return;
    // Group by the first two name components, e.g. "low.stage3" or "fusion.dga".
    std::size_t cut = name.find('.');
    if (cut != std::string::npos && name.compare(0, cut, "head") != 0 && name.compare(0, cut, "context") != 0) {
      cut = name.find('.', cut + 1);
    }
    const std::string key = name.substr(0, cut);
    if (out.empty() || out.back().first != key) out.emplace_back(key, 0);
    out.back().second += t.numel();
  });
  return out;
}

template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits, std::int64_t index) {
  const Shape& s = logits.shape();
  const std::int64_t hw = s.plane();
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(hw));
  auto d = logits.data().subspan(static_cast<std::size_t>(index * s.c * hw), static_cast<std::size_t>(s.c * hw));
  for (std::int64_t p = 0; p < hw; ++p) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < s.c; ++c) {
      if (d[c * hw + p] > d[best * hw + p]) best = c;
    }
    labels[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(best);
  }
  return labels;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, SegModel<T>& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic, 4);
  write_u16(os, kCheckpointVersion);
  const std::string cfg = model.config.to_json();
  write_u32(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  model.visit([&os](const std::string&, Tensor<T>& t, ParamRole) { write_tensor(os, t); });
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

namespace {

NetworkConfig read_header(std::istream& is, const std::filesystem::path& path) {
  char magic[4];
  read_exact(is, magic, 4, "checkpoint magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw DataError(path.string() + " is not a BDGN checkpoint");
  const std::uint16_t version = read_u16(is);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint format version " + std::to_string(version));
  }
  const std::uint32_t len = read_u32(is);
  std::string text(len, '\0');
  read_exact(is, text.data(), len, "checkpoint config");
  return NetworkConfig::from_json(text);
}

}  // namespace

NetworkConfig read_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  return read_header(is, path);
}

template <typename T>
SegModel<T> load_checkpoint(const std::filesystem::path& path, const NetworkConfig* expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  const NetworkConfig cfg = read_header(is, path);
  if (expected != nullptr && !(cfg == *expected)) {
    throw ConfigError("checkpoint config " + cfg.to_json() + " does not match requested " + expected->to_json());
  }
  SegModel<T> model = build_model<T>(cfg);
  model.visit([&is](const std::string& name, Tensor<T>& t, ParamRole) {
    const Tensor<T> stored = read_tensor<T>(is);
    if (stored.shape() != t.shape()) {
      throw DataError("checkpoint tensor " + name + " has shape " + stored.shape().str() + ", expected " +
                      t.shape().str());
    }
    std::copy(stored.data().begin(), stored.data().end(), t.data_mut().begin());
  });
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after checkpoint tensors");
  return model;
}

#define BDG_INSTANTIATE_NET(T)                                                                          \
  template struct ContextEmbed<T>;                                                                      \
  template struct SegHead<T>;                                                                           \
  template struct SegModel<T>;                                                                          \
  template SegModel<T> build_model<T>(const NetworkConfig&);                                            \
  template void initialize<T>(SegModel<T>&, std::uint64_t);                                             \
  template Tensor<T> high_res_forward<T>(SegModel<T>&, const Tensor<T>&, Mode);                         \
  template Tensor<T> low_res_forward<T>(SegModel<T>&, const Tensor<T>&, Mode);                          \
  template Tensor<T> context_embed<T>(ContextEmbed<T>&, const Tensor<T>&, Mode);                        \
  template Tensor<T> forward<T>(SegModel<T>&, const Tensor<T>&, const ForwardContext&, StageTimes*);    \
  template std::int64_t count_params<T>(SegModel<T>&);                                                  \
  template std::vector<std::pair<std::string, std::int64_t>> param_breakdown<T>(SegModel<T>&);          \
  template std::vector<std::uint8_t> argmax_labels<T>(const Tensor<T>&, std::int64_t);                  \
  template void save_checkpoint<T>(const std::filesystem::path&, SegModel<T>&);                         \
  template SegModel<T> load_checkpoint<T>(const std::filesystem::path&, const NetworkConfig*);

BDG_INSTANTIATE_NET(float)
BDG_INSTANTIATE_NET(double)

}  // namespace bdg::net
