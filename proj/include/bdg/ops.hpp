#pragma once

#include <cstdint>
#include <vector>

#include "bdg/tensor.hpp"

// Differentiable tensor primitives. Every op records a backward closure on
// the active Tape<T> when at least one input requires grad.
//
// Matrix view: a tensor of shape (n, c, h, w) is read as an (n*c*h) x w
// matrix; matrix-valued results have shape (1, 1, rows, cols).

namespace bdg {

/// Normalization direction for softmax_axis / l1_normalize_axis on an N x S matrix.
enum class NormAxis {
  kWithinColumn,  ///< each column sums to 1 (reduce over rows)
  kWithinRow,     ///< each row sums to 1 (reduce over columns)
};

/// Fingerprint of branch choices taken by piecewise-linear ops (ReLU masks,
/// pooling argmaxes, OHEM selections). Null unless a caller installs one;
/// gradient checks compare fingerprints to spot steps that cross a kink.
struct BranchTrace {
  std::uint64_t hash = 0;
  void fold(std::uint64_t v);
  void fold_bits(const std::vector<bool>& bits);
};
BranchTrace*& branch_trace();

template <typename T>
std::int64_t matrix_rows(const Tensor<T>& x) {
  const Shape& s = x.shape();
  return s.n * s.c * s.h;
}

template <typename T>
std::int64_t matrix_cols(const Tensor<T>& x) {
  return x.shape().w;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> softmax_axis(const Tensor<T>& x, NormAxis axis);

template <typename T>
Tensor<T> l1_normalize_axis(const Tensor<T>& x, NormAxis axis);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Sum of all elements, shape (1,1,1,1).
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Weighted sum: sum_i x_i * w_i with a constant weight tensor of the same shape.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const Tensor<T>& weights);

/// x (n,c,h,w) + y (n,c,1,1) broadcast over the spatial plane.
template <typename T>
Tensor<T> add_spatial_broadcast(const Tensor<T>& x, const Tensor<T>& y);

/// Mean over (h, w) per (n, c); output (n, c, 1, 1).
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Stacks channel blocks in argument order. All inputs share n, h, w.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> xs);

template <typename T>
Tensor<T> concat_channels(std::initializer_list<Tensor<T>> xs) {
  std::vector<Tensor<T>> v(xs);
  return concat_channels<T>(std::span<const Tensor<T>>(v));
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t start, std::int64_t count);

/// Stacks along the batch axis. All inputs share c, h, w.
template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> xs);

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, std::int64_t index);

/// Single image (1, c, h, w) -> (1, 1, h*w, c); pixel order is row-major over (h, w).
template <typename T>
Tensor<T> pixels_to_matrix(const Tensor<T>& x);

/// Inverse of pixels_to_matrix: (1, 1, h*w, c) -> (1, c, h, w).
template <typename T>
Tensor<T> matrix_to_pixels(const Tensor<T>& m, std::int64_t h, std::int64_t w);

/// Throws NumericError if any element is NaN; `where` names the op.
template <typename T>
void require_no_nan(const Tensor<T>& x, const char* where);

/// NaN checks at op boundaries are compiled into debug builds only.
template <typename T>
inline void debug_check_finite(const Tensor<T>& x, const char* where) {
#ifndef NDEBUG
  require_no_nan(x, where);
#else
  (void)x;
  (void)where;
#endif
}

}  // namespace bdg
