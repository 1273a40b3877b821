#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bdg/data.hpp"
#include "bdg/network.hpp"
#include "bdg/tensor.hpp"

namespace bdg::train {

struct TrainConfig {
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::int64_t total_iters = 1000;
  std::int64_t warmup_iters = -1;  // -1: total_iters / 100
  double poly_power = 0.9;
  std::int64_t crop_h = 512;
  std::int64_t crop_w = 512;
  std::int64_t batch_size = 8;
  bool ohem = true;
  double ohem_thresh = 0.7;
  double ohem_min_kept = 1.0 / 16.0;
  int ignore_index = 255;
  std::uint64_t seed = 1;
  std::int64_t log_every = 10;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only (if a directory is set)
  std::filesystem::path checkpoint_dir;
  int workers = 0;  // 0: assemble batches on the training thread

  std::int64_t effective_warmup() const { return warmup_iters >= 0 ? warmup_iters : total_iters / 100; }
  void validate() const;
};

/// Warmup ramp base_lr*(iter+1)/warmup, then poly decay to zero at total_iters.
double lr_at(std::int64_t iter, const TrainConfig& cfg);

/// v <- momentum*v + grad + wd*param; param <- param - lr*v.
template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr, double momentum,
                double weight_decay);

/// Velocity buffers for every trainable tensor of a model, in visit order.
template <typename T>
struct SgdState {
  std::vector<std::vector<T>> velocity;
};

/// Applies sgd_update to every trainable parameter that received a gradient.
template <typename T>
void sgd_step(net::SegModel<T>& model, SgdState<T>& state, double lr, double momentum, double weight_decay);

template <typename T>
void set_trainable(net::SegModel<T>& model, bool on);

template <typename T>
void zero_grads(net::SegModel<T>& model);

struct OhemOptions {
  bool enabled = true;
  double thresh = 0.7;
  double min_kept = 1.0 / 16.0;  // fraction of valid pixels
  int ignore_index = 255;
};

/// Pixel-wise softmax cross-entropy over logits (n, C, H, W) against n*H*W labels.
/// With OHEM, keeps pixels whose true-class probability is below `thresh`, topped
/// up with the highest-loss pixels to ceil(min_kept * valid); mean over kept pixels.
template <typename T>
Tensor<T> ohem_ce(const Tensor<T>& logits, std::span<const std::uint8_t> labels, const OhemOptions& opt);

/// Plain mean cross-entropy over valid pixels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels, int ignore_index = 255);

/// Same crop offset for image and labels; throws if the crop exceeds the sample.
data::SegSample random_crop(const data::SegSample& sample, std::int64_t crop_h, std::int64_t crop_w,
                            std::uint64_t seed);

struct Batch {
  Tensor<float> images;              // (b, 3, crop_h, crop_w)
  std::vector<std::uint8_t> labels;  // b * crop_h * crop_w
};

/// Deterministic batch for iteration `iter`: an epoch-wise shuffled walk over the dataset.
Batch assemble_batch(const std::vector<data::SegSample>& dataset, const TrainConfig& cfg, std::int64_t iter);

struct TrainRecord {
  std::int64_t iter = 0;
  double lr = 0;
  double loss = 0;
  double wall_ms = 0;
};

struct TrainReport {
  std::vector<TrainRecord> records;  // one per iteration
  std::vector<std::filesystem::path> checkpoints;
  double wall_ms = 0;
};

/// Runs cfg.total_iters SGD steps. Records every `log_every`-th iteration (and the
/// last) to `jsonl` as {iter, lr, loss, wall_ms}. Throws NumericError naming the
/// iteration if the loss goes non-finite.
TrainReport train_loop(net::SegModel<float>& model, const std::vector<data::SegSample>& dataset,
                       const TrainConfig& cfg, std::ostream* jsonl = nullptr);

struct EvalResult {
  double mean_ce = 0;
  double miou = 0;
};

/// Infer-mode plain CE and mIoU over whole samples.
EvalResult evaluate(net::SegModel<float>& model, const std::vector<data::SegSample>& samples);

}  // namespace bdg::train
