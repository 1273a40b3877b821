#include "bdg/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "bdg/error.hpp"

namespace bdg::metrics {

namespace {

using Rgb = std::array<std::uint8_t, 3>;

constexpr std::array<Rgb, 19> kCityscapesPalette{{{128, 64, 128},
                                                  {244, 35, 232},
                                                  {70, 70, 70},
                                                  {102, 102, 156},
                                                  {190, 153, 153},
                                                  {153, 153, 153},
                                                  {250, 170, 30},
                                                  {220, 220, 0},
                                                  {107, 142, 35},
                                                  {152, 251, 152},
                                                  {70, 130, 180},
                                                  {220, 20, 60},
                                                  {255, 0, 0},
                                                  {0, 0, 142},
                                                  {0, 0, 70},
                                                  {0, 60, 100},
                                                  {0, 80, 100},
                                                  {0, 0, 230},
                                                  {119, 11, 32}}};

constexpr std::array<Rgb, 11> kCamvidPalette{{{128, 128, 128},
                                              {128, 0, 0},
                                              {192, 192, 128},
                                              {128, 64, 128},
                                              {0, 0, 192},
                                              {128, 128, 0},
                                              {192, 128, 128},
                                              {64, 64, 128},
                                              {64, 0, 128},
                                              {64, 64, 0},
                                              {0, 128, 192}}};

std::span<const Rgb> palette_colors(Palette p) {
  if (p == Palette::kCityscapes) return kCityscapesPalette;
  return kCamvidPalette;
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::int64_t num_classes)
    : k_(num_classes), counts_(static_cast<std::size_t>(num_classes * num_classes), 0) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::increment(std::int64_t truth, std::int64_t pred, std::int64_t count) {
  if (truth < 0 || truth >= k_ || pred < 0 || pred >= k_) {
    throw DataError("confusion cell (" + std::to_string(truth) + ", " + std::to_string(pred) + ") out of range");
  }
  counts_[static_cast<std::size_t>(truth * k_ + pred)] += count;
}

void ConfusionMatrix::add(const data::LabelMap& truth, const std::vector<std::uint8_t>& pred) {
  if (truth.values.size() != pred.size()) {
    throw ShapeError("prediction has " + std::to_string(pred.size()) + " pixels, label map has " +
                     std::to_string(truth.values.size()));
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth.values[i] == data::kIgnoreLabel) continue;
    increment(truth.values[i], pred[i]);
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("cannot merge confusion matrices of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

IouResult miou(const ConfusionMatrix& cm) {
  const std::int64_t k = cm.num_classes();
  IouResult r;
  r.per_class.resize(static_cast<std::size_t>(k));
  double total = 0;
  int present = 0;
  for (std::int64_t c = 0; c < k; ++c) {
    const std::int64_t tp = cm.at(c, c);
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    for (std::int64_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const std::int64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class[static_cast<std::size_t>(c)] = iou;
    total += iou;
    ++present;
  }
  r.mean = present > 0 ? total / present : 0.0;
  return r;
}

Palette parse_palette(const std::string& s) {
  if (s == "cityscapes") return Palette::kCityscapes;
  if (s == "camvid") return Palette::kCamvid;
  throw ConfigError("unknown palette '" + s + "' (expected cityscapes or camvid)");
}

std::size_t palette_size(Palette p) { return palette_colors(p).size(); }

data::Raster colorize(const data::LabelMap& pred, Palette palette) {
  const auto colors = palette_colors(palette);
  data::Raster out{pred.h, pred.w, 3, std::vector<std::uint8_t>(pred.values.size() * 3, 0)};
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const std::uint8_t v = pred.values[i];
    if (v == data::kIgnoreLabel) continue;
    if (v >= colors.size()) {
      throw DataError("label " + std::to_string(v) + " outside the " + std::to_string(colors.size()) +
                      "-color palette");
    }
    std::copy(colors[v].begin(), colors[v].end(), out.pixels.begin() + static_cast<std::ptrdiff_t>(i * 3));
  }
  return out;
}

data::LabelMap palette_lookup(const data::Raster& rgb, Palette palette) {
  if (rgb.channels != 3) throw DataError("palette lookup needs a 3-channel raster");
  const auto colors = palette_colors(palette);
  data::LabelMap out{rgb.h, rgb.w, std::vector<std::uint8_t>(static_cast<std::size_t>(rgb.h * rgb.w))};
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const Rgb px{rgb.pixels[i * 3], rgb.pixels[i * 3 + 1], rgb.pixels[i * 3 + 2]};
    if (px == Rgb{0, 0, 0}) {
      out.values[i] = data::kIgnoreLabel;
      continue;
    }
    auto it = std::find(colors.begin(), colors.end(), px);
    if (it == colors.end()) throw DataError("pixel " + std::to_string(i) + " has a color outside the palette");
    out.values[i] = static_cast<std::uint8_t>(it - colors.begin());
  }
  return out;
}

LatencyStats summarize_latency(std::vector<double> samples_ms) {
  if (samples_ms.empty()) throw ConfigError("no latency samples");
  std::sort(samples_ms.begin(), samples_ms.end());
  const std::size_t n = samples_ms.size();
  LatencyStats s;
  s.mean_ms = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / static_cast<double>(n);
  s.median_ms = n % 2 == 1 ? samples_ms[n / 2] : 0.5 * (samples_ms[n / 2 - 1] + samples_ms[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ms = samples_ms[std::max<std::size_t>(rank, 1) - 1];
  s.fps = s.median_ms > 0 ? 1000.0 / s.median_ms : 0.0;
  return s;
}

}  // namespace bdg::metrics
