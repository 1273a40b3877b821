#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bdg/attention.hpp"
#include "bdg/nn.hpp"
#include "bdg/params.hpp"
#include "bdg/rsu.hpp"
#include "bdg/tensor.hpp"

namespace bdg::net {

enum class Version { kLight, kBase, kLarge };

/// Fusion of the two branch outputs; the non-DGA modes are the ablation rows.
enum class FusionMode { kHighOnly, kLowOnly, kConcatOnly, kSingleEA, kDGA };

std::string to_string(Version v);
std::string to_string(FusionMode m);
Version parse_version(const std::string& s);
FusionMode parse_fusion_mode(const std::string& s);

struct NetworkConfig {
  Version version = Version::kLight;
  std::array<std::pair<std::int64_t, std::int64_t>, 3> high_res_stage_channels{{{3, 64}, {64, 64}, {64, 128}}};
  std::array<rsu::RsuConfig, 6> low_res_blocks{};
  std::int64_t num_classes = 19;
  FusionMode fusion_mode = FusionMode::kDGA;
  bool ohem = true;
  std::int64_t ga_s = 64;
  double ga_dropout = 0.1;
  std::uint64_t init_seed = 0x5EED;

  /// Stage tables of the Light/Base/Large versions.
  static NetworkConfig for_version(Version v, std::int64_t num_classes = 19, FusionMode mode = FusionMode::kDGA);

  void validate() const;
  std::int64_t high_channels() const { return high_res_stage_channels[2].second; }
  std::int64_t low_channels() const { return low_res_blocks[4].c_out; }
  /// Channel width entering the segmentation head.
  std::int64_t fused_channels() const;
  bool uses_high_branch() const { return fusion_mode != FusionMode::kLowOnly; }
  bool uses_low_branch() const { return fusion_mode != FusionMode::kHighOnly; }

  /// Canonical (sorted-key, compact) JSON text.
  std::string to_json() const;
  static NetworkConfig from_json(const std::string& text);

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Global-pool context block: out = conv3x3(x + BN(conv1x1(gap(x)))).
template <typename T>
struct ContextEmbed {
  nn::Conv2dParams<T> reduce;  // 1x1, no bias (followed by BN)
  nn::BatchNormParams<T> bn;
  nn::Conv2dParams<T> fuse;    // 3x3, with bias

  static ContextEmbed make(std::int64_t channels);
  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

template <typename T>
struct SegHead {
  nn::ConvBnRelu<T> conv;          // fused -> 64
  nn::Conv2dParams<T> classifier;  // 1x1, 64 -> num_classes, with bias

  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

template <typename T>
struct SegModel {
  NetworkConfig config;
  std::vector<nn::ConvBnRelu<T>> high;   // 3 stages, empty for LowOnly
  std::vector<rsu::RsuBlock<T>> low;     // 6 stages, empty for HighOnly
  std::optional<ContextEmbed<T>> context;
  std::optional<attention::DgaParams<T>> dga;
  std::optional<attention::GaParams<T>> single_ga;
  SegHead<T> head;

  /// Every stored tensor in deterministic order, including BN running stats.
  void visit(const ParamVisitor<T>& v);
};

/// Wall-clock split of one forward, in milliseconds.
struct StageTimes {
  double high_ms = 0;
  double low_ms = 0;
  double fusion_ms = 0;
  double head_ms = 0;
};

/// Builds and initializes a model (Kaiming fan-in normal convs, unit BN,
/// N(0, 0.02) attention units), seeded per parameter name.
template <typename T>
SegModel<T> build_model(const NetworkConfig& cfg);

template <typename T>
void initialize(SegModel<T>& model, std::uint64_t seed);

template <typename T>
Tensor<T> high_res_forward(SegModel<T>& model, const Tensor<T>& image, Mode mode);

template <typename T>
Tensor<T> low_res_forward(SegModel<T>& model, const Tensor<T>& image, Mode mode);

template <typename T>
Tensor<T> context_embed(ContextEmbed<T>& block, const Tensor<T>& x, Mode mode);

/// Logits (n, num_classes, H, W) for an image batch (n, 3, H, W).
template <typename T>
Tensor<T> forward(SegModel<T>& model, const Tensor<T>& image, const ForwardContext& ctx,
                  StageTimes* times = nullptr);

/// Trainable scalars: conv weights and biases, BN affine, attention units.
template <typename T>
std::int64_t count_params(SegModel<T>& model);

/// Trainable scalars per top-level submodule, in model order.
template <typename T>
std::vector<std::pair<std::string, std::int64_t>> param_breakdown(SegModel<T>& model);

/// Argmax over channels for image `index` of a logits batch.
template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits, std::int64_t index = 0);

// Checkpoint: "BDGN", u16 format version, u32 length + canonical config JSON,
// then every stored tensor as a BDGT record in visit() order.
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, SegModel<T>& model);

/// Loads a checkpoint; if `expected` is given, the stored config must match it.
template <typename T>
SegModel<T> load_checkpoint(const std::filesystem::path& path, const NetworkConfig* expected = nullptr);

/// Reads only the config blob of a checkpoint.
NetworkConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace bdg::net
