#pragma once

#include <cstdint>

// Raw-buffer compute kernels, OpenMP-parallel. Layout is always row-major;
// the serial reference versions used to check them live in bdg/reference.hpp.

namespace bdg::kernels {

/// Worker count used by the parallel kernels (BDG_THREADS, else OpenMP default).
int thread_count();
void set_thread_count(int n);

/// C = alpha * op(A) * op(B) + beta * C, op(X) = X or X^T.
/// op(A) is M x K, op(B) is K x N, C is M x N with leading dimension ldc.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha,
          const T* a, std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc);

struct ConvGeometry {
  std::int64_t c_in, h, w;       // input plane
  std::int64_t k;                // square kernel extent
  std::int64_t stride, pad, dilation;
  std::int64_t out_h, out_w;

  std::int64_t patch() const { return c_in * k * k; }
  std::int64_t out_pixels() const { return out_h * out_w; }
};

/// Lowers output pixels [p0, p1) of one image into a patch() x (p1 - p0) matrix.
template <typename T>
void im2col(const ConvGeometry& g, const T* image, std::int64_t p0, std::int64_t p1, T* col);

/// Scatter-adds a patch matrix for pixels [p0, p1) back into an image gradient.
template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, std::int64_t p0, std::int64_t p1, T* image);

/// 2x2/stride-2 max pool over `planes` planes of h x w; records flat argmax
/// offsets (within the plane) for the backward pass. First max in scan order wins.
template <typename T>
void maxpool2_forward(std::int64_t planes, std::int64_t h, std::int64_t w, const T* in, T* out,
                      std::int32_t* argmax);

template <typename T>
void maxpool2_backward(std::int64_t planes, std::int64_t h, std::int64_t w, const T* grad_out,
                       const std::int32_t* argmax, T* grad_in);

/// 2x bilinear upsample with half-pixel centers and edge clamping.
template <typename T>
void upsample2_forward(std::int64_t planes, std::int64_t h, std::int64_t w, const T* in, T* out);

template <typename T>
void upsample2_backward(std::int64_t planes, std::int64_t h, std::int64_t w, const T* grad_out,
                        T* grad_in);

}  // namespace bdg::kernels
