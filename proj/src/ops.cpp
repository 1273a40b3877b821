#include "bdg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "bdg/kernels.hpp"
#include "bdg/params.hpp"

namespace bdg {

namespace {

template <typename T>
Tensor<T> make_output(Shape shape, Tape<T>* tape) {
  Tensor<T> out(shape);
  if (tape != nullptr) out.mark_recorded(tape);
  return out;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace

template <typename T>
void require_no_nan(const Tensor<T>& x, const char* where) {
  for (T v : x.data()) {
    if (std::isnan(v)) throw NumericError(std::string(where) + ": NaN in input " + x.shape().str());
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::int64_t n = matrix_rows(a);
  const std::int64_t k = matrix_cols(a);
  const std::int64_t m = matrix_cols(b);
  if (matrix_rows(b) != k) {
    throw ShapeError("matmul: inner dimensions differ, a " + a.shape().str() + " as " + std::to_string(n) +
                     "x" + std::to_string(k) + ", b " + b.shape().str() + " as " +
                     std::to_string(matrix_rows(b)) + "x" + std::to_string(m));
  }
  Tape<T>* tape = recording_tape<T>({&a, &b});
  Tensor<T> out = make_output<T>(Shape::matrix(n, m), tape);
  kernels::gemm<T>(false, false, n, m, k, T{1}, a.data().data(), k, b.data().data(), m, T{0},
                   out.data_mut().data(), m);
  debug_check_finite(out, "matmul");
  if (tape != nullptr) {
    tape->record([a, b, out, n, k, m]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      if (a.requires_grad()) {
        kernels::gemm<T>(false, true, n, k, m, T{1}, g, m, b.data().data(), m, T{1}, a.grad_mut().data(), k);
      }
      if (b.requires_grad()) {
        kernels::gemm<T>(true, false, k, m, n, T{1}, a.data().data(), k, g, m, T{1}, b.grad_mut().data(), m);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  const std::int64_t rows = matrix_rows(a);
  const std::int64_t cols = matrix_cols(a);
  Tape<T>* tape = recording_tape<T>({&a});
  Tensor<T> out = make_output<T>(Shape::matrix(cols, rows), tape);
  auto src = a.data();
  auto dst = out.data_mut();
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
  }
  if (tape != nullptr) {
    tape->record([a, out, rows, cols]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::int64_t i = 0; i < rows; ++i) {
        for (std::int64_t j = 0; j < cols; ++j) ga[i * cols + j] += g[j * rows + i];
      }
    });
  }
  return out;
}

namespace {

// Visits every slice along `axis` as (offset, stride, length).
template <typename F>
void for_each_slice(std::int64_t rows, std::int64_t cols, NormAxis axis, F&& f) {
  if (axis == NormAxis::kWithinColumn) {
    for (std::int64_t j = 0; j < cols; ++j) f(j, j, cols, rows);
  } else {
    for (std::int64_t i = 0; i < rows; ++i) f(i, i * cols, std::int64_t{1}, cols);
  }
}

}  // namespace

template <typename T>
Tensor<T> softmax_axis(const Tensor<T>& x, NormAxis axis) {
  require_no_nan(x, "softmax_axis");
  const std::int64_t rows = matrix_rows(x);
  const std::int64_t cols = matrix_cols(x);
  Tape<T>* tape = recording_tape<T>({&x});
  Tensor<T> out = make_output<T>(Shape::matrix(rows, cols), tape);
  auto src = x.data();
  auto dst = out.data_mut();
  for_each_slice(rows, cols, axis, [&](std::int64_t, std::int64_t off, std::int64_t stride, std::int64_t len) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t q = 0; q < len; ++q) mx = std::max(mx, src[off + q * stride]);
    T total{0};
    for (std::int64_t q = 0; q < len; ++q) {
      const T e = std::exp(src[off + q * stride] - mx);
      dst[off + q * stride] = e;
      total += e;
    }
    const T inv = T{1} / total;
    for (std::int64_t q = 0; q < len; ++q) dst[off + q * stride] *= inv;
  });
  if (tape != nullptr) {
    tape->record([x, out, rows, cols, axis]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto y = out.data();
      auto gx = x.grad_mut();
      for_each_slice(rows, cols, axis, [&](std::int64_t, std::int64_t off, std::int64_t stride, std::int64_t len) {
        T dot{0};
        for (std::int64_t q = 0; q < len; ++q) dot += g[off + q * stride] * y[off + q * stride];
        for (std::int64_t q = 0; q < len; ++q) {
          const std::int64_t i = off + q * stride;
          gx[i] += y[i] * (g[i] - dot);
        }
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> l1_normalize_axis(const Tensor<T>& x, NormAxis axis) {
  require_no_nan(x, "l1_normalize_axis");
  const std::int64_t rows = matrix_rows(x);
  const std::int64_t cols = matrix_cols(x);
  auto src = x.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] < T{0}) throw NumericError("l1_normalize_axis: negative entry at flat index " + std::to_string(i));
  }
  Tape<T>* tape = recording_tape<T>({&x});
  Tensor<T> out = make_output<T>(Shape::matrix(rows, cols), tape);
  auto dst = out.data_mut();
  std::vector<T> sums(static_cast<std::size_t>(axis == NormAxis::kWithinColumn ? cols : rows));
  const char* axis_name = axis == NormAxis::kWithinColumn ? "column" : "row";
  for_each_slice(rows, cols, axis, [&](std::int64_t idx, std::int64_t off, std::int64_t stride, std::int64_t len) {
    T total{0};
    for (std::int64_t q = 0; q < len; ++q) total += src[off + q * stride];
    if (!(total > T{0})) {
      throw NumericError(std::string("l1_normalize_axis: ") + axis_name + " " + std::to_string(idx) +
                         " has zero sum");
    }
    sums[static_cast<std::size_t>(idx)] = total;
    const T inv = T{1} / total;
    for (std::int64_t q = 0; q < len; ++q) dst[off + q * stride] = src[off + q * stride] * inv;
  });
  if (tape != nullptr) {
    tape->record([x, out, rows, cols, axis, sums = std::move(sums)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto y = out.data();
      auto gx = x.grad_mut();
      for_each_slice(rows, cols, axis, [&](std::int64_t idx, std::int64_t off, std::int64_t stride, std::int64_t len) {
        // d(x_i / S)/dx_j = (delta_ij - y_i) / S
        T dot{0};
        for (std::int64_t q = 0; q < len; ++q) dot += g[off + q * stride] * y[off + q * stride];
        const T inv = T{1} / sums[static_cast<std::size_t>(idx)];
        for (std::int64_t q = 0; q < len; ++q) {
          const std::int64_t i = off + q * stride;
          gx[i] += (g[i] - dot) * inv;
        }
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tape<T>* tape = recording_tape<T>({&a, &b});
  Tensor<T> out = make_output<T>(a.shape(), tape);
  auto pa = a.data();
  auto pb = b.data();
  auto po = out.data_mut();
  const auto total = static_cast<std::int64_t>(po.size());
#pragma omp parallel for schedule(static) num_threads(kernels::thread_count()) if (total > 262144)
  for (std::int64_t i = 0; i < total; ++i) po[i] = pa[i] + pb[i];
  if (tape != nullptr) {
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      for (const Tensor<T>* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto gt = t->grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tape<T>* tape = recording_tape<T>({&a, &b});
  Tensor<T> out = make_output<T>(a.shape(), tape);
  auto pa = a.data();
  auto pb = b.data();
  auto po = out.data_mut();
  for (std::size_t i = 0; i < po.size(); ++i) po[i] = pa[i] * pb[i];
  if (tape != nullptr) {
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        auto vb = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        auto va = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tape<T>* tape = recording_tape<T>({&a});
  Tensor<T> out = make_output<T>(a.shape(), tape);
  auto pa = a.data();
  auto po = out.data_mut();
  for (std::size_t i = 0; i < po.size(); ++i) po[i] = pa[i] * factor;
  if (tape != nullptr) {
    tape->record([a, out, factor]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

void BranchTrace::fold(std::uint64_t v) { hash = mix_seed(hash, v); }

void BranchTrace::fold_bits(const std::vector<bool>& bits) {
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    word = (word << 1) | static_cast<std::uint64_t>(bits[i]);
    if (i % 64 == 63) fold(std::exchange(word, 0));
  }
  fold(word);
  fold(bits.size());
}

BranchTrace*& branch_trace() {
  thread_local BranchTrace* trace = nullptr;
  return trace;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tape<T>* tape = recording_tape<T>({&x});
  Tensor<T> out = make_output<T>(x.shape(), tape);
  auto px = x.data();
  auto po = out.data_mut();
  const auto total = static_cast<std::int64_t>(po.size());
#pragma omp parallel for schedule(static) num_threads(kernels::thread_count()) if (total > 262144)
  for (std::int64_t i = 0; i < total; ++i) po[i] = px[i] > T{0} ? px[i] : T{0};
  if (BranchTrace* trace = branch_trace()) {
    std::vector<bool> mask(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) mask[i] = px[i] > T{0};
    trace->fold_bits(mask);
  }
  if (tape != nullptr) {
    tape->record([x, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto px = x.data();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (px[i] > T{0}) gx[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tape<T>* tape = recording_tape<T>({&x});
  Tensor<T> out = make_output<T>(Shape{}, tape);
  T total{0};
  for (T v : x.data()) total += v;
  out.data_mut()[0] = total;
  if (tape != nullptr) {
    tape->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      for (T& v : x.grad_mut()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const Tensor<T>& weights) {
  require_same_shape(x, weights, "weighted_sum");
  Tape<T>* tape = recording_tape<T>({&x});
  Tensor<T> out = make_output<T>(Shape{}, tape);
  auto px = x.data();
  auto pw = weights.data();
  T total{0};
  for (std::size_t i = 0; i < px.size(); ++i) total += px[i] * pw[i];
  out.data_mut()[0] = total;
  if (tape != nullptr) {
    tape->record([x, weights, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      auto gx = x.grad_mut();
      auto pw = weights.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * pw[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_spatial_broadcast(const Tensor<T>& x, const Tensor<T>& y) {
  const Shape& s = x.shape();
  if (y.shape() != Shape{s.n, s.c, 1, 1}) {
    throw ShapeError("add_spatial_broadcast: expected " + Shape{s.n, s.c, 1, 1}.str() + ", got " + y.shape().str());
  }
  Tape<T>* tape = recording_tape<T>({&x, &y});
  Tensor<T> out = make_output<T>(s, tape);
  auto px = x.data();
  auto py = y.data();
  auto po = out.data_mut();
  const std::int64_t hw = s.plane();
  for (std::int64_t q = 0; q < s.n * s.c; ++q) {
    for (std::int64_t p = 0; p < hw; ++p) po[q * hw + p] = px[q * hw + p] + py[q];
  }
  if (tape != nullptr) {
    tape->record([x, y, out, hw]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (y.requires_grad()) {
        auto gy = y.grad_mut();
        for (std::size_t q = 0; q < gy.size(); ++q) {
          T acc{0};
          for (std::int64_t p = 0; p < hw; ++p) acc += g[q * hw + p];
          gy[q] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tape<T>* tape = recording_tape<T>({&x});
  Tensor<T> out = make_output<T>(Shape{s.n, s.c, 1, 1}, tape);
  auto px = x.data();
  auto po = out.data_mut();
  const std::int64_t hw = s.plane();
  for (std::int64_t q = 0; q < s.n * s.c; ++q) {
    T acc{0};
    for (std::int64_t p = 0; p < hw; ++p) acc += px[q * hw + p];
    po[q] = acc / static_cast<T>(hw);
  }
  if (tape != nullptr) {
    tape->record([x, out, hw]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad_mut();
      const T inv = T{1} / static_cast<T>(hw);
      for (std::size_t q = 0; q < g.size(); ++q) {
        for (std::int64_t p = 0; p < hw; ++p) gx[q * hw + p] += g[q] * inv;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = xs[0].shape();
  std::int64_t total_c = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("concat_channels: spatial/batch mismatch " + s0.str() + " vs " + s.str());
    }
    total_c += s.c;
  }
  Tape<T>* tape = recording_tape<T>(xs);
  Tensor<T> out = make_output<T>(Shape{s0.n, total_c, s0.h, s0.w}, tape);
  auto po = out.data_mut();
  const std::int64_t hw = s0.plane();
  for (std::int64_t n = 0; n < s0.n; ++n) {
    std::int64_t c_off = 0;
    for (const auto& t : xs) {
      const std::int64_t block = t.shape().c * hw;
      auto src = t.data().subspan(static_cast<std::size_t>(n * block), static_cast<std::size_t>(block));
      std::copy(src.begin(), src.end(), po.begin() + (n * total_c + c_off) * hw);
      c_off += t.shape().c;
    }
  }
  if (tape != nullptr) {
    std::vector<Tensor<T>> inputs(xs.begin(), xs.end());
    tape->record([inputs, out, total_c, hw]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      const std::int64_t batch = out.shape().n;
      std::int64_t c_off = 0;
      for (auto& t : inputs) {
        const std::int64_t c = t.shape().c;
        if (t.requires_grad()) {
          auto gt = t.grad_mut();
          for (std::int64_t n = 0; n < batch; ++n) {
            const T* src = g.data() + (n * total_c + c_off) * hw;
            T* dst = gt.data() + n * c * hw;
            for (std::int64_t i = 0; i < c * hw; ++i) dst[i] += src[i];
          }
        }
        c_off += c;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t start, std::int64_t count) {
  const Shape& s = x.shape();
  if (start < 0 || count < 1 || start + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + std::to_string(s.c) + " channels");
  }
  Tape<T>* tape = recording_tape<T>({&x});
  Tensor<T> out = make_output<T>(Shape{s.n, count, s.h, s.w}, tape);
  auto px = x.data();
  auto po = out.data_mut();
  const std::int64_t hw = s.plane();
  for (std::int64_t n = 0; n < s.n; ++n) {
    std::copy_n(px.begin() + (n * s.c + start) * hw, count * hw, po.begin() + n * count * hw);
  }
  if (tape != nullptr) {
    tape->record([x, out, start, count, hw]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad_mut();
      const Shape& s = x.shape();
      for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t i = 0; i < count * hw; ++i) gx[(n * s.c + start) * hw + i] += g[n * count * hw + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> xs) {
  if (xs.empty()) throw ShapeError("concat_batch: no inputs");
  const Shape& s0 = xs[0].shape();
  std::int64_t total_n = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    if (s.c != s0.c || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("concat_batch: shape mismatch " + s0.str() + " vs " + s.str());
    }
    total_n += s.n;
  }
  if (xs.size() == 1) return xs[0];
  Tape<T>* tape = recording_tape<T>(xs);
  Tensor<T> out = make_output<T>(Shape{total_n, s0.c, s0.h, s0.w}, tape);
  auto po = out.data_mut();
  std::size_t off = 0;
  for (const auto& t : xs) {
    std::copy(t.data().begin(), t.data().end(), po.begin() + static_cast<std::ptrdiff_t>(off));
    off += t.data().size();
  }
  if (tape != nullptr) {
    std::vector<Tensor<T>> inputs(xs.begin(), xs.end());
    tape->record([inputs, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::size_t off = 0;
      for (auto& t : inputs) {
        const std::size_t len = static_cast<std::size_t>(t.numel());
        if (t.requires_grad()) {
          auto gt = t.grad_mut();
          for (std::size_t i = 0; i < len; ++i) gt[i] += g[off + i];
        }
        off += len;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, std::int64_t index) {
  const Shape& s = x.shape();
  if (index < 0 || index >= s.n) throw ShapeError("slice_batch: index " + std::to_string(index) + " out of range");
  if (s.n == 1) return x;
  Tape<T>* tape = recording_tape<T>({&x});
  Tensor<T> out = make_output<T>(Shape{1, s.c, s.h, s.w}, tape);
  const std::int64_t len = s.c * s.plane();
  std::copy_n(x.data().begin() + index * len, len, out.data_mut().begin());
  if (tape != nullptr) {
    tape->record([x, out, index, len]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::int64_t i = 0; i < len; ++i) gx[index * len + i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> pixels_to_matrix(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.n != 1) throw ShapeError("pixels_to_matrix: expects a single image, got " + s.str());
  const std::int64_t pix = s.plane();
  const std::int64_t c = s.c;
  Tape<T>* tape = recording_tape<T>({&x});
  Tensor<T> out = make_output<T>(Shape::matrix(pix, c), tape);
  auto px = x.data();
  auto po = out.data_mut();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t p = 0; p < pix; ++p) po[p * c + ch] = px[ch * pix + p];
  }
  if (tape != nullptr) {
    tape->record([x, out, pix, c]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t p = 0; p < pix; ++p) gx[ch * pix + p] += g[p * c + ch];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> matrix_to_pixels(const Tensor<T>& m, std::int64_t h, std::int64_t w) {
  const std::int64_t pix = matrix_rows(m);
  const std::int64_t c = matrix_cols(m);
  if (pix != h * w) {
    throw ShapeError("matrix_to_pixels: " + std::to_string(pix) + " rows cannot form " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  Tape<T>* tape = recording_tape<T>({&m});
  Tensor<T> out = make_output<T>(Shape{1, c, h, w}, tape);
  auto pm = m.data();
  auto po = out.data_mut();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t p = 0; p < pix; ++p) po[ch * pix + p] = pm[p * c + ch];
  }
  if (tape != nullptr) {
    tape->record([m, out, pix, c]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gm = m.grad_mut();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t p = 0; p < pix; ++p) gm[p * c + ch] += g[ch * pix + p];
      }
    });
  }
  return out;
}

#define BDG_INSTANTIATE_OPS(T)                                                           \
  template void require_no_nan<T>(const Tensor<T>&, const char*);                        \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                     \
  template Tensor<T> softmax_axis<T>(const Tensor<T>&, NormAxis);                        \
  template Tensor<T> l1_normalize_axis<T>(const Tensor<T>&, NormAxis);                   \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                      \
  template Tensor<T> relu<T>(const Tensor<T>&);                                          \
  template Tensor<T> sum<T>(const Tensor<T>&);                                           \
  template Tensor<T> mean<T>(const Tensor<T>&);                                          \
  template Tensor<T> weighted_sum<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> add_spatial_broadcast<T>(const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                               \
  template Tensor<T> concat_channels<T>(std::span<const Tensor<T>>);                     \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, std::int64_t, std::int64_t);    \
  template Tensor<T> concat_batch<T>(std::span<const Tensor<T>>);                        \
  template Tensor<T> slice_batch<T>(const Tensor<T>&, std::int64_t);                     \
  template Tensor<T> pixels_to_matrix<T>(const Tensor<T>&);                              \
  template Tensor<T> matrix_to_pixels<T>(const Tensor<T>&, std::int64_t, std::int64_t);

BDG_INSTANTIATE_OPS(float)
BDG_INSTANTIATE_OPS(double)

}  // namespace bdg
