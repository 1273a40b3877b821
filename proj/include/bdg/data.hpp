#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bdg/tensor.hpp"

namespace bdg::data {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// 8-bit raster with interleaved channels (1 for PGM, 3 for PPM).
struct Raster {
  std::int64_t h = 0;
  std::int64_t w = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::int64_t y, std::int64_t x, int ch = 0) const {
    return pixels[static_cast<std::size_t>((y * w + x) * channels + ch)];
  }
};

struct LabelMap {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::uint8_t> values;  // row-major

  std::uint8_t at(std::int64_t y, std::int64_t x) const { return values[static_cast<std::size_t>(y * w + x)]; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

struct Normalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};
};

struct SegSample {
  Tensor<float> image;  // (1, 3, H, W), normalized
  LabelMap label;
  std::string id;
};

/// Binary PPM (P6) or PGM (P5) with maxval 255.
Raster read_raster(const std::filesystem::path& path);
Raster read_ppm(const std::filesystem::path& path);
LabelMap read_pgm(const std::filesystem::path& path);
void write_raster(const std::filesystem::path& path, const Raster& r);
void write_pgm(const std::filesystem::path& path, const LabelMap& m);

LabelMap to_label_map(const Raster& r);
Raster to_raster(const LabelMap& m);

enum class LabelScheme { kIdentity, kCityscapes19, kCamvid11 };
LabelScheme parse_label_scheme(const std::string& s);

/// Raw dataset IDs to train IDs; unmapped values become kIgnoreLabel.
LabelMap map_labels(const LabelMap& raw, LabelScheme scheme);
std::uint8_t map_label(std::uint8_t raw, LabelScheme scheme);

/// Scales u8 RGB to [0,1] then normalizes per channel; returns (1,3,H,W).
Tensor<float> image_to_tensor(const Raster& rgb, const Normalization& norm = {});

/// Throws DataError if any label is neither < num_classes nor kIgnoreLabel.
void validate_labels(const LabelMap& m, std::int64_t num_classes, const std::string& what);

struct SynthOptions {
  std::int64_t h = 64;
  std::int64_t w = 64;
  int classes = 3;
  double noise = 0.05;
  std::uint64_t seed = 1;
};

/// Unnormalized RGB in [0,1] as (1,3,H,W) plus the label map of one synthetic sample.
std::pair<Tensor<float>, LabelMap> synth_raw(const SynthOptions& opt, std::int64_t index);

SegSample synth_sample(const SynthOptions& opt, std::int64_t index, const Normalization& norm = {});

/// Samples index 0..n-1 of the synthetic family `opt`.
std::vector<SegSample> synth_dataset(std::int64_t n, const SynthOptions& opt, const Normalization& norm = {});

/// Flat class color used by the synthetic generator, in [0,1].
std::array<double, 3> synth_class_color(int cls);

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path label;
  std::string id;
};

/// JSON array of {"image", "label", "id"}; relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Cityscapes convention: <root>/leftImg8bit/<split>/<city>/<stem>_leftImg8bit.ppm paired with
/// <root>/gtFine/<split>/<city>/<stem>_gtFine_labelIds.pgm.
std::vector<ManifestEntry> cityscapes_entries(const std::filesystem::path& root, const std::string& split);

std::vector<SegSample> load_samples(const std::vector<ManifestEntry>& entries, LabelScheme scheme,
                                    std::int64_t num_classes, const Normalization& norm = {});

}  // namespace bdg::data
