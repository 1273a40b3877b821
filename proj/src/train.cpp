#include "bdg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <future>
#include <numeric>
#include <ostream>
#include <random>

#include <json.hpp>

#include "bdg/metrics.hpp"
#include "bdg/ops.hpp"

namespace bdg::train {

void TrainConfig::validate() const {
  if (!(base_lr >= 0)) throw ConfigError("base_lr must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (total_iters < 0) throw ConfigError("total_iters must be >= 0");
  const std::int64_t warmup = effective_warmup();
  if (total_iters > 0 && warmup >= total_iters) {
    throw ConfigError("warmup_iters (" + std::to_string(warmup) + ") must be below total_iters (" +
                      std::to_string(total_iters) + ")");
  }
  if (!(poly_power > 0)) throw ConfigError("poly_power must be > 0");
  if (crop_h < 32 || crop_w < 32 || crop_h % 32 != 0 || crop_w % 32 != 0) {
    throw ConfigError("crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) + " must be divisible by 32");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(ohem_thresh > 0 && ohem_thresh < 1)) throw ConfigError("ohem_thresh must lie in (0, 1)");
  if (!(ohem_min_kept >= 0 && ohem_min_kept <= 1)) throw ConfigError("ohem_min_kept must lie in [0, 1]");
  if (ignore_index < 0 || ignore_index > 255) throw ConfigError("ignore_index must be a u8 label value");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (workers < 0) throw ConfigError("workers must be >= 0");
}

double lr_at(std::int64_t iter, const TrainConfig& cfg) {
  if (iter < 0 || iter > cfg.total_iters) {
    throw ConfigError("lr_at: iteration " + std::to_string(iter) + " outside [0, " + std::to_string(cfg.total_iters) +
                      "]");
  }
  const std::int64_t warmup = cfg.effective_warmup();
  if (iter < warmup) return cfg.base_lr * static_cast<double>(iter + 1) / static_cast<double>(warmup);
  if (cfg.total_iters == warmup) return 0.0;
  const double progress = static_cast<double>(iter - warmup) / static_cast<double>(cfg.total_iters - warmup);
  return cfg.base_lr * std::pow(1.0 - progress, cfg.poly_power);
}

template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr, double momentum,
                double weight_decay) {
  if (grad.size() != param.size() || velocity.size() != param.size()) {
    throw ShapeError("sgd_update: param/grad/velocity sizes " + std::to_string(param.size()) + "/" +
                     std::to_string(grad.size()) + "/" + std::to_string(velocity.size()) + " differ");
  }
  const T mu = static_cast<T>(momentum);
  const T wd = static_cast<T>(weight_decay);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = mu * velocity[i] + grad[i] + wd * param[i];
    param[i] = param[i] - rate * velocity[i];
  }
}

template <typename T>
void sgd_step(net::SegModel<T>& model, SgdState<T>& state, double lr, double momentum, double weight_decay) {
  std::size_t slot = 0;
  model.visit([&](const std::string&, Tensor<T>& t, ParamRole role) {
    if (!is_trainable(role)) return;
    if (state.velocity.size() <= slot) state.velocity.emplace_back(static_cast<std::size_t>(t.numel()), T{0});
    auto& v = state.velocity[slot++];
    if (!t.has_grad()) return;
    sgd_update<T>(t.data_mut(), t.grad(), v, lr, momentum, weight_decay);
  });
}

template <typename T>
void set_trainable(net::SegModel<T>& model, bool on) {
  model.visit([on](const std::string&, Tensor<T>& t, ParamRole role) {
    if (is_trainable(role)) t.set_requires_grad(on);
  });
}

template <typename T>
void zero_grads(net::SegModel<T>& model) {
  model.visit([](const std::string&, Tensor<T>& t, ParamRole) { t.zero_grad(); });
}

namespace {

struct PixelStats {
  std::vector<double> prob;  // softmax, (n, C, HW) layout
  std::vector<double> loss;  // per pixel, NaN for ignored
  std::int64_t valid = 0;
};

template <typename T>
PixelStats pixel_stats(const Tensor<T>& logits, std::span<const std::uint8_t> labels, int ignore_index) {
  const Shape& s = logits.shape();
  const std::int64_t hw = s.plane();
  if (static_cast<std::int64_t>(labels.size()) != s.n * hw) {
    throw ShapeError("cross-entropy: " + std::to_string(labels.size()) + " labels for logits " + s.str());
  }
  auto z = logits.data();
  PixelStats st;
  st.prob.resize(z.size());
  st.loss.assign(labels.size(), std::nan(""));
  for (std::int64_t b = 0; b < s.n; ++b) {
    const std::size_t base = static_cast<std::size_t>(b * s.c * hw);
    for (std::int64_t p = 0; p < hw; ++p) {
      const std::size_t pix = static_cast<std::size_t>(b * hw + p);
      double mx = -INFINITY;
      for (std::int64_t c = 0; c < s.c; ++c) mx = std::max(mx, static_cast<double>(z[base + c * hw + p]));
      double total = 0;
      for (std::int64_t c = 0; c < s.c; ++c) {
        const double e = std::exp(static_cast<double>(z[base + c * hw + p]) - mx);
        st.prob[base + c * hw + p] = e;
        total += e;
      }
      for (std::int64_t c = 0; c < s.c; ++c) st.prob[base + c * hw + p] /= total;
      const int y = labels[pix];
      if (y == ignore_index) continue;
      if (y >= s.c) {
        throw DataError("cross-entropy: label " + std::to_string(y) + " at pixel " + std::to_string(pix) +
                        " outside [0, " + std::to_string(s.c) + ")");
      }
      st.loss[pix] = -(static_cast<double>(z[base + y * hw + p]) - mx - std::log(total));
      ++st.valid;
    }
  }
  return st;
}

// Mean CE over `kept` pixels; the backward writes (softmax - onehot)/|kept|.
template <typename T>
Tensor<T> kept_mean_ce(const Tensor<T>& logits, std::span<const std::uint8_t> labels, PixelStats st,
                       std::vector<std::int64_t> kept) {
  double total = 0;
  for (std::int64_t pix : kept) total += st.loss[static_cast<std::size_t>(pix)];
  const double value = kept.empty() ? 0.0 : total / static_cast<double>(kept.size());
  Tape<T>* tape = recording_tape<T>({&logits});
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(value));
  if (tape == nullptr || kept.empty()) return out;
  out.mark_recorded(tape);
  std::vector<std::uint8_t> y(labels.begin(), labels.end());
  tape->record([logits, out, st = std::move(st), kept = std::move(kept), y = std::move(y)]() {
    if (!out.has_grad()) return;
    const double g = static_cast<double>(out.grad()[0]) / static_cast<double>(kept.size());
    const Shape& s = logits.shape();
    const std::int64_t hw = s.plane();
    auto gl = logits.grad_mut();
    for (std::int64_t pix : kept) {
      const std::int64_t b = pix / hw;
      const std::int64_t p = pix % hw;
      const std::size_t base = static_cast<std::size_t>(b * s.c * hw + p);
      const int label = y[static_cast<std::size_t>(pix)];
      for (std::int64_t c = 0; c < s.c; ++c) {
        const double onehot = c == label ? 1.0 : 0.0;
        gl[base + c * hw] += static_cast<T>(g * (st.prob[base + c * hw] - onehot));
      }
    }
  });
  return out;
}

}  // namespace

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels, int ignore_index) {
  PixelStats st = pixel_stats(logits, labels, ignore_index);
  std::vector<std::int64_t> kept;
  kept.reserve(static_cast<std::size_t>(st.valid));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != ignore_index) kept.push_back(static_cast<std::int64_t>(i));
  }
  return kept_mean_ce(logits, labels, std::move(st), std::move(kept));
}

template <typename T>
Tensor<T> ohem_ce(const Tensor<T>& logits, std::span<const std::uint8_t> labels, const OhemOptions& opt) {
  if (!opt.enabled) return cross_entropy(logits, labels, opt.ignore_index);
  if (!(opt.thresh > 0 && opt.thresh < 1)) throw ConfigError("ohem thresh must lie in (0, 1)");
  if (!(opt.min_kept >= 0 && opt.min_kept <= 1)) throw ConfigError("ohem min_kept must lie in [0, 1]");
  PixelStats st = pixel_stats(logits, labels, opt.ignore_index);
  const Shape& s = logits.shape();
  const std::int64_t hw = s.plane();
  std::vector<std::int64_t> valid;
  std::vector<std::int64_t> kept;
  valid.reserve(static_cast<std::size_t>(st.valid));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == opt.ignore_index) continue;
    valid.push_back(static_cast<std::int64_t>(i));
    const std::int64_t b = static_cast<std::int64_t>(i) / hw;
    const std::int64_t p = static_cast<std::int64_t>(i) % hw;
    const double pt = st.prob[static_cast<std::size_t>(b * s.c * hw + labels[i] * hw + p)];
    if (pt < opt.thresh) kept.push_back(static_cast<std::int64_t>(i));
  }
  const auto n_min = static_cast<std::int64_t>(std::ceil(opt.min_kept * static_cast<double>(valid.size())));
  if (static_cast<std::int64_t>(kept.size()) < n_min) {
    // Hardest n_min pixels; equal losses resolve to the lower pixel index.
    auto harder = [&st](std::int64_t a, std::int64_t b) {
      const double la = st.loss[static_cast<std::size_t>(a)];
      const double lb = st.loss[static_cast<std::size_t>(b)];
      return la != lb ? la > lb : a < b;
    };
    std::nth_element(valid.begin(), valid.begin() + (n_min - 1), valid.end(), harder);
    kept.assign(valid.begin(), valid.begin() + n_min);
    std::sort(kept.begin(), kept.end());
  }
  if (BranchTrace* trace = branch_trace()) {
    for (std::int64_t pix : kept) trace->fold(static_cast<std::uint64_t>(pix));
  }
  return kept_mean_ce(logits, labels, std::move(st), std::move(kept));
}

data::SegSample random_crop(const data::SegSample& sample, std::int64_t crop_h, std::int64_t crop_w,
                            std::uint64_t seed) {
  const Shape& s = sample.image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("random_crop: expected a (1,3,H,W) image, got " + s.str());
  if (sample.label.h != s.h || sample.label.w != s.w) throw ShapeError("random_crop: image/label size mismatch");
  if (crop_h > s.h || crop_w > s.w) {
    throw ShapeError("random_crop: crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                     " exceeds sample " + std::to_string(s.h) + "x" + std::to_string(s.w));
  }
  if (crop_h == s.h && crop_w == s.w) return sample;
  std::mt19937_64 rng(seed);
  const std::int64_t y0 = std::uniform_int_distribution<std::int64_t>(0, s.h - crop_h)(rng);
  const std::int64_t x0 = std::uniform_int_distribution<std::int64_t>(0, s.w - crop_w)(rng);
  data::SegSample out;
  out.id = sample.id;
  out.image = Tensor<float>(Shape{1, 3, crop_h, crop_w});
  auto src = sample.image.data();
  auto dst = out.image.data_mut();
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t y = 0; y < crop_h; ++y) {
      const auto from = src.begin() + static_cast<std::ptrdiff_t>((c * s.h + y0 + y) * s.w + x0);
      std::copy(from, from + crop_w, dst.begin() + static_cast<std::ptrdiff_t>((c * crop_h + y) * crop_w));
    }
  }
  out.label = data::LabelMap{crop_h, crop_w, std::vector<std::uint8_t>(static_cast<std::size_t>(crop_h * crop_w))};
  for (std::int64_t y = 0; y < crop_h; ++y) {
    const auto from = sample.label.values.begin() + static_cast<std::ptrdiff_t>((y0 + y) * s.w + x0);
    std::copy(from, from + crop_w, out.label.values.begin() + static_cast<std::ptrdiff_t>(y * crop_w));
  }
  return out;
}

Batch assemble_batch(const std::vector<data::SegSample>& dataset, const TrainConfig& cfg, std::int64_t iter) {
  if (dataset.empty()) throw DataError("training dataset is empty");
  const auto n = static_cast<std::int64_t>(dataset.size());
  const std::int64_t b = cfg.batch_size;
  const std::int64_t plane = cfg.crop_h * cfg.crop_w;
  Batch batch;
  batch.images = Tensor<float>(Shape{b, 3, cfg.crop_h, cfg.crop_w});
  batch.labels.resize(static_cast<std::size_t>(b * plane));
  auto dst = batch.images.data_mut();
  std::int64_t cached_epoch = -1;
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t j = 0; j < b; ++j) {
    const std::int64_t slot = iter * b + j;
    const std::int64_t epoch = slot / n;
    if (epoch != cached_epoch) {
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
      std::shuffle(order.begin(), order.end(), rng);
      cached_epoch = epoch;
    }
    const auto& sample = dataset[static_cast<std::size_t>(order[static_cast<std::size_t>(slot % n)])];
    const data::SegSample crop = random_crop(sample, cfg.crop_h, cfg.crop_w,
                                             mix_seed(mix_seed(cfg.seed, 0xC809), static_cast<std::uint64_t>(slot)));
    auto src = crop.image.data();
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(j * 3 * plane));
    std::copy(crop.label.values.begin(), crop.label.values.end(),
              batch.labels.begin() + static_cast<std::ptrdiff_t>(j * plane));
  }
  return batch;
}

TrainReport train_loop(net::SegModel<float>& model, const std::vector<data::SegSample>& dataset,
                       const TrainConfig& cfg, std::ostream* jsonl) {
  using Clock = std::chrono::steady_clock;
  cfg.validate();
  if (dataset.empty()) throw DataError("training dataset is empty");
  for (const auto& s : dataset) data::validate_labels(s.label, model.config.num_classes, s.id);

  const OhemOptions ohem{cfg.ohem, cfg.ohem_thresh, cfg.ohem_min_kept, cfg.ignore_index};
  set_trainable(model, true);
  SgdState<float> state;
  TrainReport report;
  const auto start = Clock::now();

  // Batches depend only on (seed, iter), so prefetching cannot change results.
  std::deque<std::future<Batch>> pending;
  std::int64_t next_prefetch = 0;
  auto next_batch = [&](std::int64_t iter) {
    if (cfg.workers == 0) return assemble_batch(dataset, cfg, iter);
    while (next_prefetch < cfg.total_iters && next_prefetch <= iter + cfg.workers) {
      const std::int64_t it = next_prefetch++;
      pending.push_back(std::async(std::launch::async, [&dataset, &cfg, it] { return assemble_batch(dataset, cfg, it); }));
    }
    Batch b = pending.front().get();
    pending.pop_front();
    return b;
  };

  auto save = [&](const std::string& name) {
    if (cfg.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(cfg.checkpoint_dir);
    const auto path = cfg.checkpoint_dir / name;
    net::save_checkpoint(path, model);
    report.checkpoints.push_back(path);
  };

  for (std::int64_t iter = 0; iter < cfg.total_iters; ++iter) {
    const Batch batch = next_batch(iter);
    zero_grads(model);
    double loss = 0;
    {
      Tape<float> tape;
      const Tensor<float> logits =
          net::forward(model, batch.images, ForwardContext{Mode::kTrain, mix_seed(cfg.seed, static_cast<std::uint64_t>(iter))});
      const Tensor<float> l = ohem_ce(logits, std::span<const std::uint8_t>(batch.labels), ohem);
      loss = l.item();
      if (!std::isfinite(loss)) {
        throw NumericError("training loss became non-finite at iteration " + std::to_string(iter));
      }
      tape.backward(l);
    }
    const double lr = lr_at(iter, cfg);
    sgd_step(model, state, lr, cfg.momentum, cfg.weight_decay);

    TrainRecord rec{iter, lr, loss, std::chrono::duration<double, std::milli>(Clock::now() - start).count()};
    report.records.push_back(rec);
    if (jsonl != nullptr && (iter % cfg.log_every == 0 || iter + 1 == cfg.total_iters)) {
      *jsonl << nlohmann::json{{"iter", rec.iter}, {"lr", rec.lr}, {"loss", rec.loss}, {"wall_ms", rec.wall_ms}}.dump()
             << '\n'
             << std::flush;
    }
    if (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 && iter + 1 < cfg.total_iters) {
      save("ckpt_iter" + std::to_string(iter + 1) + ".bdgn");
    }
  }
  save("model_final.bdgn");
  set_trainable(model, false);
  report.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  return report;
}

EvalResult evaluate(net::SegModel<float>& model, const std::vector<data::SegSample>& samples) {
  if (samples.empty()) throw DataError("evaluation set is empty");
  metrics::ConfusionMatrix cm(model.config.num_classes);
  double ce_total = 0;
  std::int64_t ce_pixels = 0;
  for (const auto& s : samples) {
    data::validate_labels(s.label, model.config.num_classes, s.id);
    const Tensor<float> logits = net::forward(model, s.image, ForwardContext{Mode::kInfer, 0});
    const auto valid = static_cast<std::int64_t>(
        std::count_if(s.label.values.begin(), s.label.values.end(), [](std::uint8_t v) { return v != data::kIgnoreLabel; }));
    if (valid > 0) {
      ce_total += static_cast<double>(cross_entropy(logits, std::span<const std::uint8_t>(s.label.values)).item()) *
                  static_cast<double>(valid);
      ce_pixels += valid;
    }
    cm.add(s.label, net::argmax_labels(logits));
  }
  return EvalResult{ce_pixels > 0 ? ce_total / static_cast<double>(ce_pixels) : 0.0, metrics::miou(cm).mean};
}

#define BDG_INSTANTIATE_TRAIN(T)                                                                                  \
  template void sgd_update<T>(std::span<T>, std::span<const T>, std::span<T>, double, double, double);            \
  template void sgd_step<T>(net::SegModel<T>&, SgdState<T>&, double, double, double);                             \
  template void set_trainable<T>(net::SegModel<T>&, bool);                                                        \
  template void zero_grads<T>(net::SegModel<T>&);                                                                 \
  template Tensor<T> ohem_ce<T>(const Tensor<T>&, std::span<const std::uint8_t>, const OhemOptions&);             \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const std::uint8_t>, int);

BDG_INSTANTIATE_TRAIN(float)
BDG_INSTANTIATE_TRAIN(double)

}  // namespace bdg::train
