#include "bdg/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

namespace bdg::kernels {

namespace {

int initial_threads() {
  if (const char* env = std::getenv("BDG_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return omp_get_max_threads();
}

int g_threads = initial_threads();

template <typename T>
struct Blocking;

template <>
struct Blocking<float> {
  static constexpr int kMr = 8;
  static constexpr int kNr = 32;
  static constexpr std::int64_t kMc = 128;
  static constexpr std::int64_t kKc = 256;
  static constexpr std::int64_t kNc = 4096;
};

template <>
struct Blocking<double> {
  static constexpr int kMr = 8;
  static constexpr int kNr = 16;
  static constexpr std::int64_t kMc = 96;
  static constexpr std::int64_t kKc = 256;
  static constexpr std::int64_t kNc = 2048;
};

// Packs op(A)[i0:i0+mc, p0:p0+kc] as MR-row panels, k-major within a panel.
template <typename T, int MR>
void pack_a(bool trans, const T* a, std::int64_t lda, std::int64_t i0, std::int64_t mc,
            std::int64_t p0, std::int64_t kc, T* out) {
  for (std::int64_t ir = 0; ir < mc; ir += MR) {
    const int rows = static_cast<int>(std::min<std::int64_t>(MR, mc - ir));
    T* panel = out + ir * kc;
    for (std::int64_t p = 0; p < kc; ++p) {
      T* dst = panel + p * MR;
      for (int r = 0; r < rows; ++r) {
        const std::int64_t i = i0 + ir + r;
        const std::int64_t kk = p0 + p;
        dst[r] = trans ? a[kk * lda + i] : a[i * lda + kk];
      }
      for (int r = rows; r < MR; ++r) dst[r] = T{0};
    }
  }
}

// Packs op(B)[p0:p0+kc, j0:j0+nc] as NR-column strips, k-major within a strip.
template <typename T, int NR>
void pack_b(bool trans, const T* b, std::int64_t ldb, std::int64_t p0, std::int64_t kc,
            std::int64_t j0, std::int64_t nc, T* out) {
  const std::int64_t strips = (nc + NR - 1) / NR;
#pragma omp parallel for schedule(static) num_threads(g_threads) if (strips > 4)
  for (std::int64_t s = 0; s < strips; ++s) {
    const std::int64_t jr = s * NR;
    const int cols = static_cast<int>(std::min<std::int64_t>(NR, nc - jr));
    T* strip = out + jr * kc;
    for (std::int64_t p = 0; p < kc; ++p) {
      T* dst = strip + p * NR;
      const std::int64_t kk = p0 + p;
      if (!trans) {
        const T* src = b + kk * ldb + j0 + jr;
        for (int j = 0; j < cols; ++j) dst[j] = src[j];
      } else {
        for (int j = 0; j < cols; ++j) dst[j] = b[(j0 + jr + j) * ldb + kk];
      }
      for (int j = cols; j < NR; ++j) dst[j] = T{0};
    }
  }
}

template <typename T, int MR, int NR>
inline void micro_kernel(std::int64_t kc, const T* __restrict ap, const T* __restrict bp,
                         T* __restrict c, std::int64_t ldc, int rows, int cols, T alpha) {
  alignas(64) T acc[MR][NR] = {};
  for (std::int64_t p = 0; p < kc; ++p) {
    const T* bk = bp + p * NR;
    const T* ak = ap + p * MR;
#pragma GCC unroll 8
    for (int i = 0; i < MR; ++i) {
      const T av = ak[i];
#pragma omp simd
      for (int j = 0; j < NR; ++j) acc[i][j] += av * bk[j];
    }
  }
  if (rows == MR && cols == NR) {
    for (int i = 0; i < MR; ++i) {
      T* ci = c + i * ldc;
#pragma omp simd
      for (int j = 0; j < NR; ++j) ci[j] += alpha * acc[i][j];
    }
  } else {
    for (int i = 0; i < rows; ++i) {
      T* ci = c + i * ldc;
      for (int j = 0; j < cols; ++j) ci[j] += alpha * acc[i][j];
    }
  }
}

}  // namespace

int thread_count() { return g_threads; }
void set_thread_count(int n) { g_threads = n > 0 ? n : initial_threads(); }

template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha,
          const T* a, std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc) {
  using B = Blocking<T>;
  constexpr int MR = B::kMr;
  constexpr int NR = B::kNr;
  if (m <= 0 || n <= 0) return;

  if (beta != T{1}) {
#pragma omp parallel for schedule(static) num_threads(g_threads) if (m * n > 65536)
    for (std::int64_t i = 0; i < m; ++i) {
      T* ci = c + i * ldc;
      if (beta == T{0}) {
        std::fill(ci, ci + n, T{0});
      } else {
        for (std::int64_t j = 0; j < n; ++j) ci[j] *= beta;
      }
    }
  }
  if (k <= 0 || alpha == T{0}) return;

  std::vector<T> bpack;
  for (std::int64_t jc = 0; jc < n; jc += B::kNc) {
    const std::int64_t nc = std::min(B::kNc, n - jc);
    const std::int64_t nc_pad = (nc + NR - 1) / NR * NR;
    for (std::int64_t pc = 0; pc < k; pc += B::kKc) {
      const std::int64_t kc = std::min(B::kKc, k - pc);
      bpack.resize(static_cast<std::size_t>(nc_pad * kc));
      pack_b<T, NR>(trans_b, b, ldb, pc, kc, jc, nc, bpack.data());
      const T* bp = bpack.data();
      const std::int64_t mblocks = (m + B::kMc - 1) / B::kMc;
      const std::int64_t nstrips = nc_pad / NR;
      // Parallelize over (row block, column strip group) tiles so narrow and
      // tall products both spread across workers.
      const std::int64_t sgroup = 16;
      const std::int64_t ngroups = (nstrips + sgroup - 1) / sgroup;
#pragma omp parallel for collapse(2) schedule(dynamic) num_threads(g_threads) if (mblocks * ngroups > 1)
      for (std::int64_t ib = 0; ib < mblocks; ++ib) {
        for (std::int64_t sg = 0; sg < ngroups; ++sg) {
          thread_local std::vector<T> apack;
          const std::int64_t ic = ib * B::kMc;
          const std::int64_t mc = std::min(B::kMc, m - ic);
          const std::int64_t mc_pad = (mc + MR - 1) / MR * MR;
          if (static_cast<std::int64_t>(apack.size()) < mc_pad * kc) {
            apack.resize(static_cast<std::size_t>(mc_pad * kc));
          }
          pack_a<T, MR>(trans_a, a, lda, ic, mc, pc, kc, apack.data());
          const std::int64_t s_end = std::min(nstrips, (sg + 1) * sgroup);
          for (std::int64_t s = sg * sgroup; s < s_end; ++s) {
            const std::int64_t jr = s * NR;
            const int cols = static_cast<int>(std::min<std::int64_t>(NR, nc - jr));
            for (std::int64_t ir = 0; ir < mc; ir += MR) {
              const int rows = static_cast<int>(std::min<std::int64_t>(MR, mc - ir));
              micro_kernel<T, MR, NR>(kc, apack.data() + ir * kc, bp + jr * kc,
                                      c + (ic + ir) * ldc + jc + jr, ldc, rows, cols, alpha);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, const T* image, std::int64_t p0, std::int64_t p1, T* col) {
  const std::int64_t kk = g.k * g.k;
  const std::int64_t width = p1 - p0;
  const std::int64_t rows = g.patch();
#pragma omp parallel for schedule(static) num_threads(g_threads) if (rows * width > 32768)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t ci = r / kk;
    const std::int64_t ky = (r % kk) / g.k;
    const std::int64_t kx = r % g.k;
    const T* plane = image + ci * g.h * g.w;
    T* dst = col + r * width;
    std::int64_t oy = p0 / g.out_w;
    std::int64_t ox = p0 % g.out_w;
    for (std::int64_t p = 0; p < width; ++p) {
      const std::int64_t iy = oy * g.stride - g.pad + ky * g.dilation;
      const std::int64_t ix = ox * g.stride - g.pad + kx * g.dilation;
      dst[p] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? plane[iy * g.w + ix] : T{0};
      if (++ox == g.out_w) {
        ox = 0;
        ++oy;
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, std::int64_t p0, std::int64_t p1, T* image) {
  const std::int64_t kk = g.k * g.k;
  const std::int64_t width = p1 - p0;
  // One channel per task: rows of different channels never alias.
#pragma omp parallel for schedule(static) num_threads(g_threads) if (g.c_in > 1 && kk * width > 4096)
  for (std::int64_t ci = 0; ci < g.c_in; ++ci) {
    T* plane = image + ci * g.h * g.w;
    for (std::int64_t q = 0; q < kk; ++q) {
      const std::int64_t ky = q / g.k;
      const std::int64_t kx = q % g.k;
      const T* src = col + (ci * kk + q) * width;
      std::int64_t oy = p0 / g.out_w;
      std::int64_t ox = p0 % g.out_w;
      for (std::int64_t p = 0; p < width; ++p) {
        const std::int64_t iy = oy * g.stride - g.pad + ky * g.dilation;
        const std::int64_t ix = ox * g.stride - g.pad + kx * g.dilation;
        if (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) plane[iy * g.w + ix] += src[p];
        if (++ox == g.out_w) {
          ox = 0;
          ++oy;
        }
      }
    }
  }
}

template <typename T>
void maxpool2_forward(std::int64_t planes, std::int64_t h, std::int64_t w, const T* in, T* out,
                      std::int32_t* argmax) {
  const std::int64_t oh = h / 2;
  const std::int64_t ow = w / 2;
#pragma omp parallel for schedule(static) num_threads(g_threads) if (planes * h * w > 65536)
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const T* src = in + pl * h * w;
    T* dst = out + pl * oh * ow;
    std::int32_t* arg = argmax + pl * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t x = 0; x < ow; ++x) {
        const std::int64_t base = (2 * y) * w + 2 * x;
        const std::int64_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::int64_t best = cand[0];
        for (int q = 1; q < 4; ++q) {
          if (src[cand[q]] > src[best]) best = cand[q];
        }
        dst[y * ow + x] = src[best];
        arg[y * ow + x] = static_cast<std::int32_t>(best);
      }
    }
  }
}

template <typename T>
void maxpool2_backward(std::int64_t planes, std::int64_t h, std::int64_t w, const T* grad_out,
                       const std::int32_t* argmax, T* grad_in) {
  const std::int64_t opix = (h / 2) * (w / 2);
#pragma omp parallel for schedule(static) num_threads(g_threads) if (planes * h * w > 65536)
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const T* go = grad_out + pl * opix;
    const std::int32_t* arg = argmax + pl * opix;
    T* gi = grad_in + pl * h * w;
    for (std::int64_t q = 0; q < opix; ++q) gi[arg[q]] += go[q];
  }
}

namespace {

struct Tap {
  std::int64_t i0, i1;
  double frac;
};

// Source taps for a 2x upsample along one axis of length n:
// s = (d + 0.5) / 2 - 0.5, clamped to [0, n - 1].
std::vector<Tap> upsample_taps(std::int64_t n) {
  std::vector<Tap> taps(static_cast<std::size_t>(2 * n));
  for (std::int64_t d = 0; d < 2 * n; ++d) {
    double s = (static_cast<double>(d) + 0.5) / 2.0 - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(s));
    const std::int64_t i1 = std::min(i0 + 1, n - 1);
    taps[static_cast<std::size_t>(d)] = {i0, i1, s - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <typename T>
void upsample2_forward(std::int64_t planes, std::int64_t h, std::int64_t w, const T* in, T* out) {
  const auto ty = upsample_taps(h);
  const auto tx = upsample_taps(w);
  const std::int64_t oh = 2 * h;
  const std::int64_t ow = 2 * w;
#pragma omp parallel for schedule(static) num_threads(g_threads) if (planes * h * w > 16384)
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const T* src = in + pl * h * w;
    T* dst = out + pl * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      const T fy = static_cast<T>(a.frac);
      const T* r0 = src + a.i0 * w;
      const T* r1 = src + a.i1 * w;
      T* drow = dst + y * ow;
      for (std::int64_t x = 0; x < ow; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(x)];
        const T fx = static_cast<T>(b.frac);
        const T top = r0[b.i0] + fx * (r0[b.i1] - r0[b.i0]);
        const T bot = r1[b.i0] + fx * (r1[b.i1] - r1[b.i0]);
        drow[x] = top + fy * (bot - top);
      }
    }
  }
}

template <typename T>
void upsample2_backward(std::int64_t planes, std::int64_t h, std::int64_t w, const T* grad_out,
                        T* grad_in) {
  const auto ty = upsample_taps(h);
  const auto tx = upsample_taps(w);
  const std::int64_t oh = 2 * h;
  const std::int64_t ow = 2 * w;
#pragma omp parallel for schedule(static) num_threads(g_threads) if (planes * h * w > 16384)
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const T* go = grad_out + pl * oh * ow;
    T* gi = grad_in + pl * h * w;
    for (std::int64_t y = 0; y < oh; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      const T fy = static_cast<T>(a.frac);
      for (std::int64_t x = 0; x < ow; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(x)];
        const T fx = static_cast<T>(b.frac);
        const T g = go[y * ow + x];
        const T gt = g * (T{1} - fy);
        const T gb = g * fy;
        gi[a.i0 * w + b.i0] += gt * (T{1} - fx);
        gi[a.i0 * w + b.i1] += gt * fx;
        gi[a.i1 * w + b.i0] += gb * (T{1} - fx);
        gi[a.i1 * w + b.i1] += gb * fx;
      }
    }
  }
}

#define BDG_INSTANTIATE_KERNELS(T)                                                                \
  template void gemm<T>(bool, bool, std::int64_t, std::int64_t, std::int64_t, T, const T*,        \
                        std::int64_t, const T*, std::int64_t, T, T*, std::int64_t);               \
  template void im2col<T>(const ConvGeometry&, const T*, std::int64_t, std::int64_t, T*);         \
  template void col2im_add<T>(const ConvGeometry&, const T*, std::int64_t, std::int64_t, T*);     \
  template void maxpool2_forward<T>(std::int64_t, std::int64_t, std::int64_t, const T*, T*,       \
                                    std::int32_t*);                                               \
  template void maxpool2_backward<T>(std::int64_t, std::int64_t, std::int64_t, const T*,          \
                                     const std::int32_t*, T*);                                    \
  template void upsample2_forward<T>(std::int64_t, std::int64_t, std::int64_t, const T*, T*);     \
  template void upsample2_backward<T>(std::int64_t, std::int64_t, std::int64_t, const T*, T*);

BDG_INSTANTIATE_KERNELS(float)
BDG_INSTANTIATE_KERNELS(double)

}  // namespace bdg::kernels
