#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "bdg/params.hpp"
#include "bdg/tensor.hpp"

namespace bdg::nn {

/// Square-kernel 2-D convolution parameters. Weight is (c_out, c_in, k, k);
/// bias, when present, is (1, c_out, 1, 1).
template <typename T>
struct Conv2dParams {
  Tensor<T> weight;
  std::optional<Tensor<T>> bias;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;

  static Conv2dParams make(std::int64_t c_in, std::int64_t c_out, std::int64_t k, std::int64_t stride,
                           std::int64_t padding, std::int64_t dilation, bool with_bias);

  std::int64_t c_out() const { return weight.shape().n; }
  std::int64_t c_in() const { return weight.shape().c; }
  std::int64_t kernel() const { return weight.shape().h; }

  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  static BatchNormParams make(std::int64_t channels);
  std::int64_t channels() const { return gamma.shape().c; }
  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

/// out = floor((in + 2*pad - dilation*(k-1) - 1) / stride) + 1
constexpr std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad,
                                       std::int64_t dilation) {
  const std::int64_t span = in + 2 * pad - dilation * (k - 1) - 1;
  return span < 0 ? 0 : span / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dParams<T>& p);

/// 2x2 max pool with stride 2; gradient goes to the first maximum in scan order.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x);

/// 2x bilinear upsample, half-pixel centers, clamped at the border.
template <typename T>
Tensor<T> upsample_bilinear2(const Tensor<T>& x);

/// Train mode normalizes with batch statistics and updates the running
/// statistics in place; infer mode applies the running statistics.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormParams<T>& p, Mode mode);

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, std::uint64_t seed);

/// conv -> batchnorm -> (optional) ReLU, the repeated unit of both branches.
template <typename T>
struct ConvBnRelu {
  Conv2dParams<T> conv;
  BatchNormParams<T> bn;
  bool relu = true;

  static ConvBnRelu make(std::int64_t c_in, std::int64_t c_out, std::int64_t k = 3, std::int64_t stride = 1,
                         std::int64_t dilation = 1, bool relu = true);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

}  // namespace bdg::nn
