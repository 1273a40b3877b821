#include "bdg/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "bdg/kernels.hpp"
#include "bdg/ops.hpp"

namespace bdg::attention {

template <typename T>
GaParams<T> GaParams<T>::make(std::int64_t d, std::int64_t d_out, std::int64_t s, double dropout_rate) {
  if (d < 1 || d_out < 1 || s < 1) throw ShapeError("GaParams: d, d_out and s must be >= 1");
  if (!(dropout_rate >= 0.0) || dropout_rate >= 1.0) throw ShapeError("GaParams: dropout rate must lie in [0, 1)");
  GaParams p;
  p.m_k = Tensor<T>(Shape::matrix(s, d));
  p.m_v = Tensor<T>(Shape::matrix(s, d_out));
  p.s = s;
  p.dropout_rate = dropout_rate;
  return p;
}

template <typename T>
void GaParams<T>::validate() const {
  if (matrix_rows(m_k) != s || matrix_rows(m_v) != s) {
    throw ShapeError("GaParams: units " + m_k.shape().str() + " / " + m_v.shape().str() + " disagree with S=" +
                     std::to_string(s));
  }
}

template <typename T>
void GaParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  v(prefix + ".m_k", m_k, ParamRole::kAttentionUnit);
  v(prefix + ".m_v", m_v, ParamRole::kAttentionUnit);
}

// Row L1 of a column softmax equals a row softmax of (a - column logsumexp).
// Evaluating it that way cannot underflow a whole row to zero, which the
// two-step form does once scores reach a few hundred.
template <typename T>
Tensor<T> double_norm(const Tensor<T>& a_tilde) {
  require_no_nan(a_tilde, "double_norm");
  const std::int64_t n = matrix_rows(a_tilde);
  const std::int64_t s = matrix_cols(a_tilde);
  auto a = a_tilde.data();
  // Column logsumexp, accumulated in row-major sweeps.
  std::vector<double> lse(static_cast<std::size_t>(s), -std::numeric_limits<double>::infinity());
  std::vector<double> col_sum(static_cast<std::size_t>(s), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < s; ++j) lse[j] = std::max(lse[j], static_cast<double>(a[i * s + j]));
  }
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < s; ++j) col_sum[j] += std::exp(static_cast<double>(a[i * s + j]) - lse[j]);
  }
  for (std::int64_t j = 0; j < s; ++j) lse[j] += std::log(col_sum[j]);
  Tape<T>* tape = recording_tape<T>({&a_tilde});
  Tensor<T> out(Shape::matrix(n, s));
  if (tape != nullptr) out.mark_recorded(tape);
  auto o = out.data_mut();
  std::vector<double> row(static_cast<std::size_t>(s));
  for (std::int64_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < s; ++j) {
      row[j] = static_cast<double>(a[i * s + j]) - lse[j];
      mx = std::max(mx, row[j]);
    }
    double total = 0;
    for (std::int64_t j = 0; j < s; ++j) total += (row[j] = std::exp(row[j] - mx));
    for (std::int64_t j = 0; j < s; ++j) o[i * s + j] = static_cast<T>(row[j] / total);
  }
  if (tape != nullptr) {
    tape->record([a_tilde, out, lse = std::move(lse), n, s]() {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto y = out.data();
      auto x = a_tilde.data();
      // Through the row softmax: gb = y * (g - <y, g>_row).
      std::vector<double> gb(static_cast<std::size_t>(n * s));
      for (std::int64_t i = 0; i < n; ++i) {
        double dot = 0;
        for (std::int64_t j = 0; j < s; ++j) dot += static_cast<double>(y[i * s + j]) * g[i * s + j];
        for (std::int64_t j = 0; j < s; ++j) gb[i * s + j] = y[i * s + j] * (g[i * s + j] - dot);
      }
      // Through the column logsumexp: ga = gb - p * colsum(gb), p = column softmax.
      auto ga = a_tilde.grad_mut();
      std::vector<double> col(static_cast<std::size_t>(s), 0.0);
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < s; ++j) col[j] += gb[i * s + j];
      }
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < s; ++j) {
          const double p = std::exp(static_cast<double>(x[i * s + j]) - lse[j]);
          ga[i * s + j] += static_cast<T>(gb[i * s + j] - p * col[j]);
        }
      }
    });
  }
  debug_check_finite(out, "double_norm");
  return out;
}

template <typename T>
Tensor<T> ga_forward(const Tensor<T>& f_in, const GaParams<T>& p, Mode mode, std::uint64_t seed) {
  p.validate();
  if (matrix_cols(f_in) != p.d()) {
    throw ShapeError("ga_forward: feature width " + std::to_string(matrix_cols(f_in)) + " but m_k expects " +
                     std::to_string(p.d()));
  }
  require_no_nan(f_in, "ga_forward");
  const Tensor<T> attn = double_norm(matmul(f_in, transpose(p.m_k)));
  const Tensor<T> mid = matmul(attn, p.m_v);
  return nn::dropout(mid, p.dropout_rate, mode, seed);
}

template <typename T>
Tensor<T> ga_apply(const Tensor<T>& x, const GaParams<T>& p, Mode mode, std::uint64_t seed) {
  const Shape& s = x.shape();
  std::vector<Tensor<T>> outs;
  outs.reserve(static_cast<std::size_t>(s.n));
  for (std::int64_t b = 0; b < s.n; ++b) {
    const Tensor<T> m = pixels_to_matrix(slice_batch(x, b));
    const Tensor<T> y = ga_forward(m, p, mode, mix_seed(seed, static_cast<std::uint64_t>(b)));
    outs.push_back(matrix_to_pixels(y, s.h, s.w));
  }
  return concat_batch<T>(std::span<const Tensor<T>>(outs));
}

template <typename T>
DgaParams<T> DgaParams<T>::make(std::int64_t c_high, std::int64_t c_low, std::int64_t s, double dropout_rate) {
  DgaParams p;
  p.down = nn::ConvBnRelu<T>::make(c_high, c_high, 3, 2);
  p.ga_high = GaParams<T>::make(c_high + c_low, c_high, s, dropout_rate);
  p.ga_low = GaParams<T>::make(c_high + c_low, c_low, s, dropout_rate);
  return p;
}

template <typename T>
void DgaParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  down.visit(prefix + ".down", v);
  ga_high.visit(prefix + ".ga_high", v);
  ga_low.visit(prefix + ".ga_low", v);
}

template <typename T>
Tensor<T> dga_fuse(const Tensor<T>& f_h, const Tensor<T>& f_l, DgaParams<T>& p, const ForwardContext& ctx) {
  const Shape& sh = f_h.shape();
  const Shape& sl = f_l.shape();
  if (sh.n != sl.n || sh.h != 2 * sl.h || sh.w != 2 * sl.w) {
    throw ShapeError("dga_fuse: high-resolution map " + sh.str() + " must be exactly twice the spatial size of " +
                     sl.str());
  }
  if (sh.c != p.ga_high.d_out() || sl.c != p.ga_low.d_out()) {
    throw ShapeError("dga_fuse: branch channels (" + std::to_string(sh.c) + ", " + std::to_string(sl.c) +
                     ") do not match the fusion parameters");
  }
  const Tensor<T> down = p.down.forward(f_h, ctx.mode);
  const Tensor<T> up = nn::upsample_bilinear2(f_l);
  const Tensor<T> cat_hi = concat_channels<T>({f_h, up});
  const Tensor<T> cat_lo = concat_channels<T>({down, f_l});
  const Tensor<T> ga_hi = ga_apply(cat_hi, p.ga_high, ctx.mode, mix_seed(ctx.seed, name_hash("dga.ga_high")));
  const Tensor<T> ga_lo = ga_apply(cat_lo, p.ga_low, ctx.mode, mix_seed(ctx.seed, name_hash("dga.ga_low")));
  const Tensor<T> r_h = add(f_h, ga_hi);
  const Tensor<T> r_l = add(f_l, ga_lo);
  return concat_channels<T>({r_h, nn::upsample_bilinear2(r_l)});
}

template <typename T>
Tensor<T> naive_self_attention(const Tensor<T>& f) {
  const std::int64_t n = matrix_rows(f);
  const std::int64_t d = matrix_cols(f);
  Tensor<T> out(Shape::matrix(n, d));
  const T* fd = f.data().data();
  T* od = out.data_mut().data();
  const T inv_sqrt_d = T{1} / std::sqrt(static_cast<T>(d));
  constexpr std::int64_t kRowTile = 256;
  std::vector<T> scores;
  for (std::int64_t r0 = 0; r0 < n; r0 += kRowTile) {
    const std::int64_t rows = std::min(kRowTile, n - r0);
    scores.resize(static_cast<std::size_t>(rows * n));
    kernels::gemm<T>(false, true, rows, n, d, inv_sqrt_d, fd + r0 * d, d, fd, d, T{0}, scores.data(), n);
    for (std::int64_t i = 0; i < rows; ++i) {
      T* row = scores.data() + i * n;
      const T mx = *std::max_element(row, row + n);
      T total{0};
      for (std::int64_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        total += row[j];
      }
      const T inv = T{1} / total;
      for (std::int64_t j = 0; j < n; ++j) row[j] *= inv;
    }
    kernels::gemm<T>(false, false, rows, d, n, T{1}, scores.data(), n, fd, d, T{0}, od + r0 * d, d);
  }
  return out;
}

#define BDG_INSTANTIATE_ATTENTION(T)                                                                   \
  template struct GaParams<T>;                                                                         \
  template struct DgaParams<T>;                                                                        \
  template Tensor<T> double_norm<T>(const Tensor<T>&);                                                 \
  template Tensor<T> ga_forward<T>(const Tensor<T>&, const GaParams<T>&, Mode, std::uint64_t);         \
  template Tensor<T> ga_apply<T>(const Tensor<T>&, const GaParams<T>&, Mode, std::uint64_t);           \
  template Tensor<T> dga_fuse<T>(const Tensor<T>&, const Tensor<T>&, DgaParams<T>&, const ForwardContext&); \
  template Tensor<T> naive_self_attention<T>(const Tensor<T>&);

BDG_INSTANTIATE_ATTENTION(float)
BDG_INSTANTIATE_ATTENTION(double)

}  // namespace bdg::attention
