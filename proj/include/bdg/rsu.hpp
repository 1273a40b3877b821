#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bdg/nn.hpp"
#include "bdg/params.hpp"
#include "bdg/tensor.hpp"

namespace bdg::rsu {

/// RSU-L(C_in, M, C_out).
struct RsuConfig {
  int l = 4;
  std::int64_t c_in = 1;
  std::int64_t m = 1;
  std::int64_t c_out = 1;

  /// Internal pooling steps, l - 2.
  int pool_count() const { return l - 2; }
  /// Spatial dims of the input must be a multiple of this.
  std::int64_t divisor() const { return std::int64_t{1} << pool_count(); }
  void validate() const;
  std::string str() const;

  friend bool operator==(const RsuConfig&, const RsuConfig&) = default;
};

enum class PoolPolicy {
  kStrict,    ///< input must be divisible by 2^(l-2)
  kSaturate,  ///< an internal pool (and its matching upsample) is skipped on odd-sized maps
};

/// Shapes observed during one forward, for mirror checks.
struct RsuTrace {
  std::vector<Shape> encoder;         // index k-1: output of encoder stage k (k = 1..l-1)
  std::vector<Shape> decoder_inputs;  // index k-1: concat input of decoder stage k
  int pools = 0;
};

template <typename T>
struct RsuBlock {
  RsuConfig cfg;
  nn::ConvBnRelu<T> entry;                 // c_in -> c_out
  std::vector<nn::ConvBnRelu<T>> encoder;  // stage k at index k-1; stage 1 is c_out -> m
  nn::ConvBnRelu<T> bottom;                // dilation 2, no pooling
  std::vector<nn::ConvBnRelu<T>> decoder;  // stage k at index k-1; stage 1 is 2m -> c_out

  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

template <typename T>
RsuBlock<T> build_rsu(const RsuConfig& cfg);

/// Output has shape (n, c_out, h, w): entry conv result plus the U-decoder result.
template <typename T>
Tensor<T> rsu_forward(RsuBlock<T>& block, const Tensor<T>& x, Mode mode, PoolPolicy policy = PoolPolicy::kStrict,
                      RsuTrace* trace = nullptr);

}  // namespace bdg::rsu
