#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bdg/data.hpp"

namespace bdg::metrics {

/// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::int64_t num_classes);

  std::int64_t num_classes() const { return k_; }
  std::int64_t at(std::int64_t truth, std::int64_t pred) const { return counts_[static_cast<std::size_t>(truth * k_ + pred)]; }
  void increment(std::int64_t truth, std::int64_t pred, std::int64_t count = 1);

  /// Scores one prediction; ignore-labelled pixels are skipped.
  void add(const data::LabelMap& truth, const std::vector<std::uint8_t>& pred);

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  std::int64_t total() const;
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::int64_t k_;
  std::vector<std::int64_t> counts_;
};

struct IouResult {
  std::vector<std::optional<double>> per_class;  // absent when the class never occurs
  double mean = 0.0;
};

IouResult miou(const ConfusionMatrix& cm);

enum class Palette { kCityscapes, kCamvid };
Palette parse_palette(const std::string& s);
std::size_t palette_size(Palette p);

/// Class colors; ignore label renders black.
data::Raster colorize(const data::LabelMap& pred, Palette palette);

/// Inverse of colorize: black maps back to the ignore label.
data::LabelMap palette_lookup(const data::Raster& rgb, Palette palette);

struct LatencyStats {
  double mean_ms = 0;
  double median_ms = 0;
  double p95_ms = 0;
  double fps = 0;  // 1000 / median
};

/// p95 uses the nearest-rank definition.
LatencyStats summarize_latency(std::vector<double> samples_ms);

}  // namespace bdg::metrics
