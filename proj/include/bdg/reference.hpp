#pragma once

// Straightforward implementations used as test oracles. Nothing here shares
// code with the optimized paths beyond the Tensor container itself.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdg/network.hpp"
#include "bdg/tensor.hpp"

namespace bdg::ref {

/// Row-major (n x k) * (k x m), triple loop.
std::vector<double> matmul(std::span<const double> a, std::span<const double> b, std::int64_t n, std::int64_t k,
                           std::int64_t m);

/// Six nested loops over (n, co, oy, ox, ci, ky, kx), zero padding.
Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& weight, const std::optional<Tensor<double>>& bias,
                      std::int64_t stride, std::int64_t padding, std::int64_t dilation);

/// Scans each 2x2 window; also returns the flat argmax input index per output.
Tensor<double> maxpool2(const Tensor<double>& x, std::vector<std::int64_t>* argmax = nullptr);

/// Evaluates s = (d + 0.5)/2 - 0.5 (clamped) per output pixel.
Tensor<double> upsample_bilinear2(const Tensor<double>& x);

/// Column softmax (over rows i, for each column j) of an n x s matrix.
std::vector<double> softmax_columns(std::span<const double> a, std::int64_t n, std::int64_t s);

/// Column softmax then row L1 normalization.
std::vector<double> double_norm(std::span<const double> a, std::int64_t n, std::int64_t s);

/// Attention pipeline written out elementwise: returns the N x d_out output and
/// optionally the N x S attention map.
std::vector<double> ga_direct(std::span<const double> f, std::span<const double> m_k, std::span<const double> m_v,
                              std::int64_t n, std::int64_t d, std::int64_t s, std::int64_t d_out,
                              std::vector<double>* attention = nullptr);

struct OhemOracle {
  std::vector<std::int64_t> kept;  // ascending pixel indices
  double loss = 0;
};

/// Sorts all valid pixels by loss (descending, then index) and selects.
OhemOracle ohem_select(std::span<const double> logits, std::int64_t n, std::int64_t c, std::int64_t hw,
                       std::span<const std::uint8_t> labels, double thresh, double min_kept, int ignore_index);

// Parameter counts by formula, straight from the config tables.
std::int64_t conv_params(std::int64_t c_in, std::int64_t c_out, std::int64_t k, bool bias);
std::int64_t conv_bn_params(std::int64_t c_in, std::int64_t c_out, std::int64_t k = 3);
std::int64_t rsu_params(const rsu::RsuConfig& cfg);
std::int64_t network_params(const net::NetworkConfig& cfg);

struct GradCheckOptions {
  double eps = 1e-4;
  std::int64_t max_entries_per_tensor = 0;  // 0: every entry
  std::int64_t max_attempts_per_tensor = 0;  // candidates tried per tensor; 0: no limit
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::int64_t checked = 0;
  std::int64_t tensors = 0;
  std::int64_t straddled = 0;  // entries skipped because +-eps changed a branch choice
  std::vector<std::string> unchecked;  // tensors where every attempt straddled
  std::string worst;  // "<tensor>[<index>]"
};

/// Compares tape gradients with central differences. `loss_fn` must build a fresh
/// scalar from the listed tensors each call. Relative error per entry is
/// |a - n| / max(|a|, |n|, 1e-3 * max_n), where max_n is the largest |n| seen.
/// An entry whose +eps or -eps evaluation takes a different ReLU / pooling /
/// OHEM branch than the unperturbed one is not a valid difference quotient;
/// it is replaced by another sampled entry and counted in `straddled`.
GradCheckResult grad_check(const std::function<Tensor<double>()>& loss_fn,
                           const std::vector<std::pair<std::string, Tensor<double>>>& inputs,
                           const GradCheckOptions& opt = {});

/// sum(x * r) for a fixed random r: a scalar head whose gradient is r.
Tensor<double> random_projection(const Tensor<double>& x, std::uint64_t seed);

}  // namespace bdg::ref
