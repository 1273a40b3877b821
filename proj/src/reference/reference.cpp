#include "bdg/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

#include "bdg/ops.hpp"

namespace bdg::ref {

std::vector<double> matmul(std::span<const double> a, std::span<const double> b, std::int64_t n, std::int64_t k,
                           std::int64_t m) {
  std::vector<double> out(static_cast<std::size_t>(n * m), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < m; ++j) {
      double acc = 0;
      for (std::int64_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * m + j];
      out[i * m + j] = acc;
    }
  }
  return out;
}

Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& weight, const std::optional<Tensor<double>>& bias,
                      std::int64_t stride, std::int64_t padding, std::int64_t dilation) {
  const Shape& s = x.shape();
  const Shape& ws = weight.shape();
  const std::int64_t k = ws.h;
  const std::int64_t oh = (s.h + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  const std::int64_t ow = (s.w + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  Tensor<double> out(Shape{s.n, ws.n, oh, ow});
  auto o = out.data_mut();
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t co = 0; co < ws.n; ++co) {
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = bias ? bias->data()[co] : 0.0;
          for (std::int64_t ci = 0; ci < s.c; ++ci) {
            for (std::int64_t ky = 0; ky < k; ++ky) {
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const std::int64_t iy = oy * stride - padding + ky * dilation;
                const std::int64_t ix = ox * stride - padding + kx * dilation;
                if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) continue;
                acc += x.at(n, ci, iy, ix) * weight.at(co, ci, ky, kx);
              }
            }
          }
          o[((n * ws.n + co) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
  return out;
}

Tensor<double> maxpool2(const Tensor<double>& x, std::vector<std::int64_t>* argmax) {
  const Shape& s = x.shape();
  Tensor<double> out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  auto o = out.data_mut();
  if (argmax != nullptr) argmax->assign(o.size(), -1);
  std::size_t idx = 0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      for (std::int64_t y = 0; y < s.h / 2; ++y) {
        for (std::int64_t xx = 0; xx < s.w / 2; ++xx, ++idx) {
          double best = -INFINITY;
          std::int64_t where = -1;
          for (std::int64_t dy = 0; dy < 2; ++dy) {
            for (std::int64_t dx = 0; dx < 2; ++dx) {
              const double v = x.at(n, c, 2 * y + dy, 2 * xx + dx);
              if (v > best) {
                best = v;
                where = ((n * s.c + c) * s.h + 2 * y + dy) * s.w + 2 * xx + dx;
              }
            }
          }
          o[idx] = best;
          if (argmax != nullptr) (*argmax)[idx] = where;
        }
      }
    }
  }
  return out;
}

Tensor<double> upsample_bilinear2(const Tensor<double>& x) {
  const Shape& s = x.shape();
  Tensor<double> out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  auto o = out.data_mut();
  auto src = [](std::int64_t d, std::int64_t size) {
    return std::clamp((static_cast<double>(d) + 0.5) / 2.0 - 0.5, 0.0, static_cast<double>(size - 1));
  };
  std::size_t idx = 0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      for (std::int64_t oy = 0; oy < 2 * s.h; ++oy) {
        for (std::int64_t ox = 0; ox < 2 * s.w; ++ox, ++idx) {
          const double sy = src(oy, s.h);
          const double sx = src(ox, s.w);
          const auto y0 = static_cast<std::int64_t>(std::floor(sy));
          const auto x0 = static_cast<std::int64_t>(std::floor(sx));
          const std::int64_t y1 = std::min(y0 + 1, s.h - 1);
          const std::int64_t x1 = std::min(x0 + 1, s.w - 1);
          const double fy = sy - static_cast<double>(y0);
          const double fx = sx - static_cast<double>(x0);
          o[idx] = (1 - fy) * ((1 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1)) +
                   fy * ((1 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1));
        }
      }
    }
  }
  return out;
}

std::vector<double> softmax_columns(std::span<const double> a, std::int64_t n, std::int64_t s) {
  std::vector<double> out(static_cast<std::size_t>(n * s));
  for (std::int64_t j = 0; j < s; ++j) {
    double mx = -INFINITY;
    for (std::int64_t i = 0; i < n; ++i) mx = std::max(mx, a[i * s + j]);
    double total = 0;
    for (std::int64_t i = 0; i < n; ++i) total += std::exp(a[i * s + j] - mx);
    for (std::int64_t i = 0; i < n; ++i) out[i * s + j] = std::exp(a[i * s + j] - mx) / total;
  }
  return out;
}

std::vector<double> double_norm(std::span<const double> a, std::int64_t n, std::int64_t s) {
  std::vector<double> out = softmax_columns(a, n, s);
  for (std::int64_t i = 0; i < n; ++i) {
    double total = 0;
    for (std::int64_t j = 0; j < s; ++j) total += out[i * s + j];
    for (std::int64_t j = 0; j < s; ++j) out[i * s + j] /= total;
  }
  return out;
}

std::vector<double> ga_direct(std::span<const double> f, std::span<const double> m_k, std::span<const double> m_v,
                              std::int64_t n, std::int64_t d, std::int64_t s, std::int64_t d_out,
                              std::vector<double>* attention) {
  // a_tilde[i][j] = <f_i, m_k_j>
  std::vector<double> a_tilde(static_cast<std::size_t>(n * s));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < s; ++j) {
      double acc = 0;
      for (std::int64_t t = 0; t < d; ++t) acc += f[i * d + t] * m_k[j * d + t];
      a_tilde[i * s + j] = acc;
    }
  }
  const std::vector<double> a = double_norm(a_tilde, n, s);
  std::vector<double> out(static_cast<std::size_t>(n * d_out), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t c = 0; c < d_out; ++c) {
      double acc = 0;
      for (std::int64_t j = 0; j < s; ++j) acc += a[i * s + j] * m_v[j * d_out + c];
      out[i * d_out + c] = acc;
    }
  }
  if (attention != nullptr) *attention = a;
  return out;
}

OhemOracle ohem_select(std::span<const double> logits, std::int64_t n, std::int64_t c, std::int64_t hw,
                       std::span<const std::uint8_t> labels, double thresh, double min_kept, int ignore_index) {
  struct Pixel {
    std::int64_t index;
    double loss;
    double prob;
  };
  std::vector<Pixel> valid;
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t p = 0; p < hw; ++p) {
      const std::int64_t pix = b * hw + p;
      const int y = labels[pix];
      if (y == ignore_index) continue;
      double total = 0;
      for (std::int64_t k = 0; k < c; ++k) total += std::exp(logits[(b * c + k) * hw + p]);
      const double prob = std::exp(logits[(b * c + y) * hw + p]) / total;
      valid.push_back({pix, -std::log(prob), prob});
    }
  }
  std::stable_sort(valid.begin(), valid.end(), [](const Pixel& a, const Pixel& b) { return a.loss > b.loss; });
  const auto quota = static_cast<std::size_t>(std::ceil(min_kept * static_cast<double>(valid.size())));
  std::size_t hard = 0;
  while (hard < valid.size() && valid[hard].prob < thresh) ++hard;
  const std::size_t take = std::max(hard, std::min(quota, valid.size()));
  OhemOracle r;
  double total = 0;
  for (std::size_t i = 0; i < take; ++i) {
    r.kept.push_back(valid[i].index);
    total += valid[i].loss;
  }
  std::sort(r.kept.begin(), r.kept.end());
  r.loss = take > 0 ? total / static_cast<double>(take) : 0.0;
  return r;
}

std::int64_t conv_params(std::int64_t c_in, std::int64_t c_out, std::int64_t k, bool bias) {
  return c_out * c_in * k * k + (bias ? c_out : 0);
}

std::int64_t conv_bn_params(std::int64_t c_in, std::int64_t c_out, std::int64_t k) {
  return conv_params(c_in, c_out, k, false) + 2 * c_out;
}

std::int64_t rsu_params(const rsu::RsuConfig& cfg) {
  const std::int64_t inner = cfg.l - 2;  // encoder stages 2..l-1 and decoder stages 2..l-1
  return conv_bn_params(cfg.c_in, cfg.c_out)            // entry
         + conv_bn_params(cfg.c_out, cfg.m)             // encoder stage 1
         + inner * conv_bn_params(cfg.m, cfg.m)         // encoder stages 2..l-1
         + conv_bn_params(cfg.m, cfg.m)                 // dilated bottom
         + inner * conv_bn_params(2 * cfg.m, cfg.m)     // decoder stages 2..l-1
         + conv_bn_params(2 * cfg.m, cfg.c_out);        // decoder stage 1
}

std::int64_t network_params(const net::NetworkConfig& cfg) {
  const std::int64_t ch = cfg.high_res_stage_channels[2].second;
  const std::int64_t cl = cfg.low_res_blocks[4].c_out;
  const bool high = cfg.fusion_mode != net::FusionMode::kLowOnly;
  const bool low = cfg.fusion_mode != net::FusionMode::kHighOnly;
  std::int64_t total = 0;
  if (high) {
    for (const auto& [ci, co] : cfg.high_res_stage_channels) total += conv_bn_params(ci, co);
  }
  if (low) {
    for (const auto& b : cfg.low_res_blocks) total += rsu_params(b);
    const std::int64_t c6 = cfg.low_res_blocks[5].c_out;
    total += conv_bn_params(c6, c6, 1) + conv_params(c6, c6, 3, true);
  }
  std::int64_t fused = ch + cl;
  switch (cfg.fusion_mode) {
    case net::FusionMode::kHighOnly:
      fused = ch;
      break;
    case net::FusionMode::kLowOnly:
      fused = cl;
      break;
    case net::FusionMode::kConcatOnly:
      break;
    case net::FusionMode::kSingleEA:
      total += cfg.ga_s * fused * 2;
      break;
    case net::FusionMode::kDGA:
      total += conv_bn_params(ch, ch) + cfg.ga_s * (fused + ch) + cfg.ga_s * (fused + cl);
      break;
  }
  total += conv_bn_params(fused, 64) + conv_params(64, cfg.num_classes, 1, true);
  return total;
}

GradCheckResult grad_check(const std::function<Tensor<double>()>& loss_fn,
                           const std::vector<std::pair<std::string, Tensor<double>>>& inputs,
                           const GradCheckOptions& opt) {
  std::vector<Tensor<double>> xs;
  for (const auto& [name, t] : inputs) {
    xs.push_back(t);
    xs.back().set_requires_grad(true);
    xs.back().zero_grad();
  }
  BranchTrace trace;
  BranchTrace* const saved = std::exchange(branch_trace(), &trace);
  // Loss value and the branch fingerprint of that evaluation.
  auto evaluate = [&]() {
    trace.hash = 0;
    const double v = loss_fn().item();
    return std::pair{v, trace.hash};
  };
  std::uint64_t base_hash = 0;
  {
    Tape<double> tape;
    trace.hash = 0;
    Tensor<double> loss = loss_fn();
    base_hash = trace.hash;
    tape.backward(loss);
  }
  struct Entry {
    std::string name;
    double analytic;
    double numeric;
  };
  std::vector<Entry> entries;
  std::int64_t straddled = 0;
  std::vector<std::string> unchecked;
  std::mt19937_64 rng(opt.seed);
  for (std::size_t t = 0; t < xs.size(); ++t) {
    Tensor<double>& x = xs[t];
    const std::vector<double> analytic =
        x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end()) : std::vector<double>(x.data().size(), 0.0);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(x.numel()));
    std::iota(idx.begin(), idx.end(), 0);
    const bool sampled = opt.max_entries_per_tensor > 0 && x.numel() > opt.max_entries_per_tensor;
    if (sampled) std::shuffle(idx.begin(), idx.end(), rng);
    const std::int64_t want = sampled ? opt.max_entries_per_tensor : x.numel();
    std::int64_t taken = 0;
    std::int64_t attempts = 0;
    auto data = x.data_mut();
    for (std::int64_t i : idx) {
      if (taken == want) break;
      if (opt.max_attempts_per_tensor > 0 && attempts++ == opt.max_attempts_per_tensor) break;
      const double orig = data[i];
      data[i] = orig + opt.eps;
      const auto [up, up_hash] = evaluate();
      data[i] = orig - opt.eps;
      const auto [down, down_hash] = evaluate();
      data[i] = orig;
      if (up_hash != base_hash || down_hash != base_hash) {
        ++straddled;
        continue;
      }
      entries.push_back({inputs[t].first + "[" + std::to_string(i) + "]", analytic[i], (up - down) / (2 * opt.eps)});
      ++taken;
    }
    if (taken == 0 && want > 0) unchecked.push_back(inputs[t].first);
  }
  branch_trace() = saved;
  double max_numeric = 0;
  for (const auto& e : entries) max_numeric = std::max(max_numeric, std::abs(e.numeric));
  GradCheckResult r;
  r.checked = static_cast<std::int64_t>(entries.size());
  r.tensors = static_cast<std::int64_t>(xs.size());
  r.straddled = straddled;
  r.unchecked = std::move(unchecked);
  for (const auto& e : entries) {
    const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), 1e-3 * max_numeric, 1e-300});
    const double rel = std::abs(e.analytic - e.numeric) / denom;
    if (rel >= r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst = e.name;
    }
  }
  for (auto& x : xs) x.set_requires_grad(false);
  return r;
}

Tensor<double> random_projection(const Tensor<double>& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> w(static_cast<std::size_t>(x.numel()));
  for (double& v : w) v = dist(rng);
  return weighted_sum(x, Tensor<double>(x.shape(), std::move(w)));
}

}  // namespace bdg::ref
