#include "bdg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "bdg/kernels.hpp"
#include "bdg/ops.hpp"

namespace bdg::nn {

namespace {

template <typename T>
Tensor<T> make_output(Shape shape, Tape<T>* tape) {
  Tensor<T> out(shape);
  if (tape != nullptr) out.mark_recorded(tape);
  return out;
}

// Output pixels lowered per GEMM call; bounds the patch matrix to ~16 MB of f32.
constexpr std::int64_t kMaxColElements = std::int64_t{4} << 20;

std::int64_t tile_pixels(const kernels::ConvGeometry& g) {
  const std::int64_t total = g.out_pixels();
  const std::int64_t fit = std::max<std::int64_t>(g.out_w, kMaxColElements / std::max<std::int64_t>(g.patch(), 1));
  return std::min(total, fit);
}

bool is_pointwise(const kernels::ConvGeometry& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

template <typename T>
Conv2dParams<T> Conv2dParams<T>::make(std::int64_t c_in, std::int64_t c_out, std::int64_t k, std::int64_t stride,
                                      std::int64_t padding, std::int64_t dilation, bool with_bias) {
  if (k < 1 || k % 2 == 0) throw ShapeError("conv kernel extent must be odd, got " + std::to_string(k));
  if (c_in < 1 || c_out < 1) throw ShapeError("conv channel counts must be >= 1");
  if (stride < 1 || dilation < 1 || padding < 0) throw ShapeError("conv stride/dilation must be >= 1, padding >= 0");
  Conv2dParams p;
  p.weight = Tensor<T>(Shape{c_out, c_in, k, k});
  if (with_bias) p.bias = Tensor<T>(Shape::channels(c_out));
  p.stride = stride;
  p.padding = padding;
  p.dilation = dilation;
  return p;
}

template <typename T>
void Conv2dParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  v(prefix + ".weight", weight, ParamRole::kConvWeight);
  if (bias) v(prefix + ".bias", *bias, ParamRole::kConvBias);
}

template <typename T>
BatchNormParams<T> BatchNormParams<T>::make(std::int64_t channels) {
  BatchNormParams p;
  p.gamma = Tensor<T>(Shape::channels(channels), T{1});
  p.beta = Tensor<T>(Shape::channels(channels), T{0});
  p.running_mean = Tensor<T>(Shape::channels(channels), T{0});
  p.running_var = Tensor<T>(Shape::channels(channels), T{1});
  return p;
}

template <typename T>
void BatchNormParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  v(prefix + ".gamma", gamma, ParamRole::kBnGamma);
  v(prefix + ".beta", beta, ParamRole::kBnBeta);
  v(prefix + ".running_mean", running_mean, ParamRole::kBnRunningMean);
  v(prefix + ".running_var", running_var, ParamRole::kBnRunningVar);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dParams<T>& p) {
  const Shape& s = x.shape();
  const std::int64_t k = p.kernel();
  if (s.c != p.c_in()) {
    throw ShapeError("conv2d: input has " + std::to_string(s.c) + " channels, weight expects " +
                     std::to_string(p.c_in()));
  }
  if (k % 2 == 0) throw ShapeError("conv2d: even kernel extent " + std::to_string(k));
  kernels::ConvGeometry g{s.c, s.h, s.w, k, p.stride, p.padding, p.dilation,
                          conv_out_extent(s.h, k, p.stride, p.padding, p.dilation),
                          conv_out_extent(s.w, k, p.stride, p.padding, p.dilation)};
  if (g.out_h < 1 || g.out_w < 1) {
    throw ShapeError("conv2d: empty output for input " + s.str() + " with kernel " + std::to_string(k) +
                     ", dilation " + std::to_string(p.dilation) + ", padding " + std::to_string(p.padding));
  }
  const std::int64_t c_out = p.c_out();
  const std::int64_t pix = g.out_pixels();
  const std::int64_t patch = g.patch();
  const std::int64_t tile = tile_pixels(g);

  Tensor<T> weight = p.weight;
  std::optional<Tensor<T>> bias = p.bias;
  Tape<T>* tape = bias ? recording_tape<T>({&x, &weight, &*bias}) : recording_tape<T>({&x, &weight});
  Tensor<T> out = make_output<T>(Shape{s.n, c_out, g.out_h, g.out_w}, tape);

  const T* wdata = weight.data().data();
  const T* xdata = x.data().data();
  T* odata = out.data_mut().data();
  std::vector<T> col;
  for (std::int64_t b = 0; b < s.n; ++b) {
    const T* img = xdata + b * s.c * s.plane();
    T* dst = odata + b * c_out * pix;
    for (std::int64_t p0 = 0; p0 < pix; p0 += tile) {
      const std::int64_t p1 = std::min(pix, p0 + tile);
      if (is_pointwise(g)) {
        kernels::gemm<T>(false, false, c_out, p1 - p0, patch, T{1}, wdata, patch, img + p0, pix, T{0}, dst + p0, pix);
      } else {
        col.resize(static_cast<std::size_t>(patch * (p1 - p0)));
        kernels::im2col<T>(g, img, p0, p1, col.data());
        kernels::gemm<T>(false, false, c_out, p1 - p0, patch, T{1}, wdata, patch, col.data(), p1 - p0, T{0},
                         dst + p0, pix);
      }
    }
    if (bias) {
      auto bv = bias->data();
      for (std::int64_t co = 0; co < c_out; ++co) {
        T* plane = dst + co * pix;
        for (std::int64_t q = 0; q < pix; ++q) plane[q] += bv[co];
      }
    }
  }
  debug_check_finite(out, "conv2d");

  if (tape != nullptr) {
    tape->record([x, weight, bias, out, g, tile]() mutable {
      if (!out.has_grad()) return;
      const Shape& s = x.shape();
      const std::int64_t c_out = weight.shape().n;
      const std::int64_t pix = g.out_pixels();
      const std::int64_t patch = g.patch();
      const T* gout = out.grad().data();
      const T* xdata = x.data().data();
      const T* wdata = weight.data().data();
      T* gw = weight.requires_grad() ? weight.grad_mut().data() : nullptr;
      T* gx = x.requires_grad() ? x.grad_mut().data() : nullptr;
      std::vector<T> col;
      std::vector<T> dcol;
      for (std::int64_t b = 0; b < s.n; ++b) {
        const T* img = xdata + b * s.c * s.plane();
        const T* gy = gout + b * c_out * pix;
        T* gimg = gx ? gx + b * s.c * s.plane() : nullptr;
        for (std::int64_t p0 = 0; p0 < pix; p0 += tile) {
          const std::int64_t p1 = std::min(pix, p0 + tile);
          const std::int64_t tp = p1 - p0;
          if (is_pointwise(g)) {
            if (gw) kernels::gemm<T>(false, true, c_out, patch, tp, T{1}, gy + p0, pix, img + p0, pix, T{1}, gw, patch);
            if (gimg) kernels::gemm<T>(true, false, patch, tp, c_out, T{1}, wdata, patch, gy + p0, pix, T{1}, gimg + p0, pix);
            continue;
          }
          if (gw) {
            col.resize(static_cast<std::size_t>(patch * tp));
            kernels::im2col<T>(g, img, p0, p1, col.data());
            kernels::gemm<T>(false, true, c_out, patch, tp, T{1}, gy + p0, pix, col.data(), tp, T{1}, gw, patch);
          }
          if (gimg) {
            dcol.resize(static_cast<std::size_t>(patch * tp));
            kernels::gemm<T>(true, false, patch, tp, c_out, T{1}, wdata, patch, gy + p0, pix, T{0}, dcol.data(), tp);
            kernels::col2im_add<T>(g, dcol.data(), p0, p1, gimg);
          }
        }
      }
      if (bias && bias->requires_grad()) {
        auto gb = bias->grad_mut();
        for (std::int64_t b = 0; b < s.n; ++b) {
          for (std::int64_t co = 0; co < c_out; ++co) {
            const T* plane = gout + (b * c_out + co) * pix;
            T acc{0};
            for (std::int64_t q = 0; q < pix; ++q) acc += plane[q];
            gb[co] += acc;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("maxpool2: odd spatial dimension in " + s.str());
  }
  Tape<T>* tape = recording_tape<T>({&x});
  Tensor<T> out = make_output<T>(Shape{s.n, s.c, s.h / 2, s.w / 2}, tape);
  std::vector<std::int32_t> argmax(static_cast<std::size_t>(out.numel()));
  kernels::maxpool2_forward<T>(s.n * s.c, s.h, s.w, x.data().data(), out.data_mut().data(), argmax.data());
  if (BranchTrace* trace = branch_trace()) {
    for (std::int32_t a : argmax) trace->fold(static_cast<std::uint64_t>(a));
  }
  if (tape != nullptr) {
    tape->record([x, out, argmax = std::move(argmax)]() mutable {
      if (!out.has_grad()) return;
      const Shape& s = x.shape();
      kernels::maxpool2_backward<T>(s.n * s.c, s.h, s.w, out.grad().data(), argmax.data(), x.grad_mut().data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> upsample_bilinear2(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tape<T>* tape = recording_tape<T>({&x});
  Tensor<T> out = make_output<T>(Shape{s.n, s.c, 2 * s.h, 2 * s.w}, tape);
  kernels::upsample2_forward<T>(s.n * s.c, s.h, s.w, x.data().data(), out.data_mut().data());
  if (tape != nullptr) {
    tape->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const Shape& s = x.shape();
      kernels::upsample2_backward<T>(s.n * s.c, s.h, s.w, out.grad().data(), x.grad_mut().data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormParams<T>& p, Mode mode) {
  const Shape& s = x.shape();
  if (s.c != p.channels()) {
    throw ShapeError("batchnorm: input has " + std::to_string(s.c) + " channels, parameters have " +
                     std::to_string(p.channels()));
  }
  const std::int64_t c = s.c;
  const std::int64_t hw = s.plane();
  const std::int64_t count = s.n * hw;
  std::vector<T> mean(static_cast<std::size_t>(c));
  std::vector<T> inv_std(static_cast<std::size_t>(c));
  auto px = x.data();

  if (mode == Mode::kTrain) {
    auto rm = p.running_mean.data_mut();
    auto rv = p.running_var.data_mut();
#pragma omp parallel for schedule(static) num_threads(kernels::thread_count()) if (count * c > 65536)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::int64_t b = 0; b < s.n; ++b) {
        const T* plane = px.data() + (b * c + ch) * hw;
        for (std::int64_t q = 0; q < hw; ++q) acc += static_cast<double>(plane[q]);
      }
      const double mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::int64_t b = 0; b < s.n; ++b) {
        const T* plane = px.data() + (b * c + ch) * hw;
        for (std::int64_t q = 0; q < hw; ++q) {
          const double d = static_cast<double>(plane[q]) - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(p.eps)));
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      const double m = static_cast<double>(p.momentum);
      rm[ch] = static_cast<T>((1.0 - m) * static_cast<double>(rm[ch]) + m * mu);
      rv[ch] = static_cast<T>((1.0 - m) * static_cast<double>(rv[ch]) + m * unbiased);
    }
  } else {
    auto rm = p.running_mean.data();
    auto rv = p.running_var.data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = T{1} / std::sqrt(rv[ch] + p.eps);
    }
  }

  Tensor<T> gamma = p.gamma;
  Tensor<T> beta = p.beta;
  Tape<T>* tape = recording_tape<T>({&x, &gamma, &beta});
  Tensor<T> out = make_output<T>(s, tape);
  auto po = out.data_mut();
  auto pg = gamma.data();
  auto pb = beta.data();
#pragma omp parallel for schedule(static) num_threads(kernels::thread_count()) if (count * c > 65536)
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t b = 0; b < s.n; ++b) {
      const std::int64_t off = (b * c + ch) * hw;
      for (std::int64_t q = 0; q < hw; ++q) po[off + q] = (px[off + q] - mean[ch]) * inv_std[ch] * pg[ch] + pb[ch];
    }
  }
  debug_check_finite(out, "batchnorm");

  if (tape != nullptr) {
    const bool batch_stats = mode == Mode::kTrain;
    tape->record([x, gamma, beta, out, mean = std::move(mean), inv_std = std::move(inv_std), batch_stats]() mutable {
      if (!out.has_grad()) return;
      const Shape& s = x.shape();
      const std::int64_t c = s.c;
      const std::int64_t hw = s.plane();
      const std::int64_t count = s.n * hw;
      auto g = out.grad();
      auto px = x.data();
      auto pg = gamma.data();
      T* gx = x.requires_grad() ? x.grad_mut().data() : nullptr;
      T* gg = gamma.requires_grad() ? gamma.grad_mut().data() : nullptr;
      T* gb = beta.requires_grad() ? beta.grad_mut().data() : nullptr;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double sum_g = 0.0;
        double sum_gx = 0.0;
        for (std::int64_t b = 0; b < s.n; ++b) {
          const std::int64_t off = (b * c + ch) * hw;
          for (std::int64_t q = 0; q < hw; ++q) {
            const double xh = static_cast<double>((px[off + q] - mean[ch]) * inv_std[ch]);
            sum_g += static_cast<double>(g[off + q]);
            sum_gx += static_cast<double>(g[off + q]) * xh;
          }
        }
        if (gg) gg[ch] += static_cast<T>(sum_gx);
        if (gb) gb[ch] += static_cast<T>(sum_g);
        if (!gx) continue;
        const T scale = pg[ch] * inv_std[ch];
        if (batch_stats) {
          // dx = gamma/sigma * (g - mean(g) - xhat * mean(g * xhat))
          const T mg = static_cast<T>(sum_g / static_cast<double>(count));
          const T mgx = static_cast<T>(sum_gx / static_cast<double>(count));
          for (std::int64_t b = 0; b < s.n; ++b) {
            const std::int64_t off = (b * c + ch) * hw;
            for (std::int64_t q = 0; q < hw; ++q) {
              const T xh = (px[off + q] - mean[ch]) * inv_std[ch];
              gx[off + q] += scale * (g[off + q] - mg - xh * mgx);
            }
          }
        } else {
          for (std::int64_t b = 0; b < s.n; ++b) {
            const std::int64_t off = (b * c + ch) * hw;
            for (std::int64_t q = 0; q < hw; ++q) gx[off + q] += scale * g[off + q];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, std::uint64_t seed) {
  if (!(rate >= 0.0) || rate >= 1.0) throw ShapeError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::kInfer || rate == 0.0) return x;
  Tape<T>* tape = recording_tape<T>({&x});
  Tensor<T> out = make_output<T>(x.shape(), tape);
  std::mt19937_64 rng(seed);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(static_cast<std::size_t>(x.numel()));
  for (T& m : mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u >= rate ? keep_scale : T{0};
  }
  auto px = x.data();
  auto po = out.data_mut();
  for (std::size_t i = 0; i < mask.size(); ++i) po[i] = px[i] * mask[i];
  if (tape != nullptr) {
    tape->record([x, out, mask = std::move(mask)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return out;
}

template <typename T>
ConvBnRelu<T> ConvBnRelu<T>::make(std::int64_t c_in, std::int64_t c_out, std::int64_t k, std::int64_t stride,
                                  std::int64_t dilation, bool relu) {
  ConvBnRelu u;
  u.conv = Conv2dParams<T>::make(c_in, c_out, k, stride, dilation * (k - 1) / 2, dilation, false);
  u.bn = BatchNormParams<T>::make(c_out);
  u.relu = relu;
  return u;
}

template <typename T>
Tensor<T> ConvBnRelu<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> y = batchnorm(conv2d(x, conv), bn, mode);
  return relu ? bdg::relu(y) : y;
}

template <typename T>
void ConvBnRelu<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  conv.visit(prefix + ".conv", v);
  bn.visit(prefix + ".bn", v);
}

#define BDG_INSTANTIATE_NN(T)                                                        \
  template struct Conv2dParams<T>;                                                   \
  template struct BatchNormParams<T>;                                                \
  template struct ConvBnRelu<T>;                                                     \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Conv2dParams<T>&);            \
  template Tensor<T> maxpool2<T>(const Tensor<T>&);                                  \
  template Tensor<T> upsample_bilinear2<T>(const Tensor<T>&);                        \
  template Tensor<T> batchnorm<T>(const Tensor<T>&, BatchNormParams<T>&, Mode);      \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Mode, std::uint64_t);

BDG_INSTANTIATE_NN(float)
BDG_INSTANTIATE_NN(double)

}  // namespace bdg::nn
