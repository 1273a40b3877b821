#pragma once

#include <cstdint>
#include <string>

#include "bdg/nn.hpp"
#include "bdg/params.hpp"
#include "bdg/tensor.hpp"

namespace bdg::attention {

/// External learnable key/value units of one Guided Attention unit.
///
/// m_k is S x d (d = incoming feature width), m_v is S x d_out. The value
/// unit carries the output width, so a GA unit can emit exactly the channel
/// count of the branch it feeds back into.
template <typename T>
struct GaParams {
  Tensor<T> m_k;
  Tensor<T> m_v;
  std::int64_t s = 64;
  double dropout_rate = 0.1;

  static GaParams make(std::int64_t d, std::int64_t d_out, std::int64_t s = 64, double dropout_rate = 0.1);

  std::int64_t d() const { return m_k.shape().w; }
  std::int64_t d_out() const { return m_v.shape().w; }

  /// Throws ShapeError if the unit shapes disagree with s.
  void validate() const;
  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

/// Column-wise softmax (over the N rows of each of the S columns), then
/// row-wise L1 normalization. Output rows sum to 1.
template <typename T>
Tensor<T> double_norm(const Tensor<T>& a_tilde);

/// F_out = dropout(double_norm(F_in * m_k^T) * m_v) for F_in of shape N x d.
template <typename T>
Tensor<T> ga_forward(const Tensor<T>& f_in, const GaParams<T>& p, Mode mode, std::uint64_t seed);

/// ga_forward over every image of a (n, d, h, w) batch; attention is
/// normalized per image. Returns (n, d_out, h, w).
template <typename T>
Tensor<T> ga_apply(const Tensor<T>& x, const GaParams<T>& p, Mode mode, std::uint64_t seed);

/// Parameters of the Dual-Guided Attention fusion block.
template <typename T>
struct DgaParams {
  nn::ConvBnRelu<T> down;  // 3x3 stride-2, C_h -> C_h
  GaParams<T> ga_high;     // on concat(f_h, up(f_l)) @1/8, d_out = C_h
  GaParams<T> ga_low;      // on concat(down(f_h), f_l) @1/16, d_out = C_l

  static DgaParams make(std::int64_t c_high, std::int64_t c_low, std::int64_t s = 64, double dropout_rate = 0.1);
  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

/// Fuses the 1/8 high-resolution map f_h (C_h) with the 1/16 low-resolution
/// map f_l (C_l); returns concat(f_h + GA_hi, up(f_l + GA_lo)) at 1/8.
template <typename T>
Tensor<T> dga_fuse(const Tensor<T>& f_h, const Tensor<T>& f_l, DgaParams<T>& p, const ForwardContext& ctx);

/// Quadratic-cost comparator: softmax(F F^T / sqrt(d)) F, forward only.
/// Exists to contrast scaling against ga_forward.
template <typename T>
Tensor<T> naive_self_attention(const Tensor<T>& f);

}  // namespace bdg::attention
