#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "bdg/tensor.hpp"

namespace bdg {

/// What a stored tensor is for; drives initialization, counting and the optimizer.
enum class ParamRole {
  kConvWeight,
  kConvBias,
  kBnGamma,
  kBnBeta,
  kBnRunningMean,
  kBnRunningVar,
  kAttentionUnit,
};

constexpr bool is_trainable(ParamRole role) {
  return role != ParamRole::kBnRunningMean && role != ParamRole::kBnRunningVar;
}

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Tensor<T>& tensor, ParamRole role)>;

enum class Mode { kTrain, kInfer };

/// Per-forward settings threaded through every block.
struct ForwardContext {
  Mode mode = Mode::kInfer;
  std::uint64_t seed = 0;  // dropout stream; sites derive their own seeds from it
};

/// Stable 64-bit mix used to derive per-site and per-parameter seeds.
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL + (b << 6) + (b >> 2);
  z ^= b;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// FNV-1a over a parameter or site name.
inline std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace bdg
