#include "bdg/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "bdg/params.hpp"

namespace bdg::data {

namespace {

// Skips whitespace and '#' comments, then reads one unsigned decimal field.
std::int64_t read_header_int(std::istream& is, const std::string& where) {
  int ch = is.peek();
  while (ch != EOF) {
    if (ch == '#') {
      std::string discard;
      std::getline(is, discard);
    } else if (std::isspace(ch)) {
      is.get();
    } else {
      break;
    }
    ch = is.peek();
  }
  std::int64_t v = 0;
  int digits = 0;
  while (is.peek() != EOF && std::isdigit(is.peek())) {
    v = v * 10 + (is.get() - '0');
    if (++digits > 9) throw DataError(where + ": header field too large");
  }
  if (digits == 0) throw DataError(where + ": malformed header");
  return v;
}

// Cityscapes labelIds -> train IDs (the 19 evaluated classes).
constexpr std::array<std::pair<int, int>, 19> kCityscapesTrainIds{{{7, 0},
                                                                   {8, 1},
                                                                   {11, 2},
                                                                   {12, 3},
                                                                   {13, 4},
                                                                   {17, 5},
                                                                   {19, 6},
                                                                   {20, 7},
                                                                   {21, 8},
                                                                   {22, 9},
                                                                   {23, 10},
                                                                   {24, 11},
                                                                   {25, 12},
                                                                   {26, 13},
                                                                   {27, 14},
                                                                   {28, 15},
                                                                   {31, 16},
                                                                   {32, 17},
                                                                   {33, 18}}};

// CamVid 32-class IDs (alphabetical) -> the 11-class subset:
// Sky, Building, Pole, Road, Sidewalk, Tree, SignSymbol, Fence, Car, Pedestrian, Bicyclist.
constexpr std::array<std::pair<int, int>, 11> kCamvidTrainIds{
    {{21, 0}, {4, 1}, {8, 2}, {17, 3}, {19, 4}, {26, 5}, {20, 6}, {9, 7}, {5, 8}, {16, 9}, {2, 10}}};

template <std::size_t N>
std::array<std::uint8_t, 256> build_lut(const std::array<std::pair<int, int>, N>& table) {
  std::array<std::uint8_t, 256> lut{};
  lut.fill(kIgnoreLabel);
  for (const auto& [raw, train] : table) lut[static_cast<std::size_t>(raw)] = static_cast<std::uint8_t>(train);
  return lut;
}

const std::array<std::uint8_t, 256>& lut_for(LabelScheme scheme) {
  static const auto cityscapes = build_lut(kCityscapesTrainIds);
  static const auto camvid = build_lut(kCamvidTrainIds);
  return scheme == LabelScheme::kCityscapes19 ? cityscapes : camvid;
}

// Synthetic class colors: the Cityscapes palette entries, so renders match the class.
constexpr std::array<std::array<int, 3>, 19> kSynthColors{{{128, 64, 128},
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

}  // namespace

Raster read_raster(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open raster: " + path.string());
  const std::string where = path.string();
  char magic[2] = {0, 0};
  is.read(magic, 2);
  if (is.gcount() != 2 || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw DataError(where + ": wrong magic (expected P5 or P6)");
  }
  Raster r;
  r.channels = magic[1] == '6' ? 3 : 1;
  r.w = read_header_int(is, where);
  r.h = read_header_int(is, where);
  const std::int64_t maxval = read_header_int(is, where);
  if (maxval != 255) throw DataError(where + ": maxval " + std::to_string(maxval) + " is not 255");
  if (r.w < 1 || r.h < 1) throw DataError(where + ": empty raster");
  if (!std::isspace(is.get())) throw DataError(where + ": malformed header");
  r.pixels.resize(static_cast<std::size_t>(r.h * r.w * r.channels));
  is.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != r.pixels.size()) {
    throw DataError(where + ": truncated payload (" + std::to_string(is.gcount()) + " of " +
                    std::to_string(r.pixels.size()) + " bytes)");
  }
  return r;
}

Raster read_ppm(const std::filesystem::path& path) {
  Raster r = read_raster(path);
  if (r.channels != 3) throw DataError(path.string() + ": expected a P6 color image");
  return r;
}

LabelMap read_pgm(const std::filesystem::path& path) {
  Raster r = read_raster(path);
  if (r.channels != 1) throw DataError(path.string() + ": expected a P5 label map");
  return to_label_map(r);
}

void write_raster(const std::filesystem::path& path, const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw DataError("raster must have 1 or 3 channels");
  if (static_cast<std::int64_t>(r.pixels.size()) != r.h * r.w * r.channels) {
    throw DataError("raster payload does not match its dimensions");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << (r.channels == 3 ? "P6" : "P5") << '\n' << r.w << ' ' << r.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
  if (!os) throw DataError("failed writing " + path.string());
}

void write_pgm(const std::filesystem::path& path, const LabelMap& m) { write_raster(path, to_raster(m)); }

LabelMap to_label_map(const Raster& r) {
  if (r.channels != 1) throw DataError("label map must be single-channel");
  return LabelMap{r.h, r.w, r.pixels};
}

Raster to_raster(const LabelMap& m) { return Raster{m.h, m.w, 1, m.values}; }

LabelScheme parse_label_scheme(const std::string& s) {
  if (s == "identity") return LabelScheme::kIdentity;
  if (s == "cityscapes19") return LabelScheme::kCityscapes19;
  if (s == "camvid11") return LabelScheme::kCamvid11;
  throw ConfigError("unknown label scheme '" + s + "' (expected identity, cityscapes19 or camvid11)");
}

std::uint8_t map_label(std::uint8_t raw, LabelScheme scheme) {
  if (scheme == LabelScheme::kIdentity) return raw;
  return lut_for(scheme)[raw];
}

LabelMap map_labels(const LabelMap& raw, LabelScheme scheme) {
  LabelMap out = raw;
  if (scheme == LabelScheme::kIdentity) return out;
  const auto& lut = lut_for(scheme);
  for (auto& v : out.values) v = lut[v];
  return out;
}

Tensor<float> image_to_tensor(const Raster& rgb, const Normalization& norm) {
  if (rgb.channels != 3) throw DataError("image_to_tensor: expected a 3-channel raster");
  Tensor<float> t(Shape{1, 3, rgb.h, rgb.w});
  auto d = t.data_mut();
  const std::int64_t plane = rgb.h * rgb.w;
  for (int c = 0; c < 3; ++c) {
    for (std::int64_t p = 0; p < plane; ++p) {
      const double v = rgb.pixels[static_cast<std::size_t>(p * 3 + c)] / 255.0;
      d[static_cast<std::size_t>(c * plane + p)] = static_cast<float>((v - norm.mean[c]) / norm.std[c]);
    }
  }
  return t;
}

void validate_labels(const LabelMap& m, std::int64_t num_classes, const std::string& what) {
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const std::uint8_t v = m.values[i];
    if (v != kIgnoreLabel && v >= num_classes) {
      throw DataError(what + ": label " + std::to_string(v) + " at pixel " + std::to_string(i) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

std::array<double, 3> synth_class_color(int cls) {
  if (cls < 0 || cls >= static_cast<int>(kSynthColors.size())) {
    throw ConfigError("synthetic class " + std::to_string(cls) + " has no color");
  }
  const auto& c = kSynthColors[static_cast<std::size_t>(cls)];
  return {c[0] / 255.0, c[1] / 255.0, c[2] / 255.0};
}

std::pair<Tensor<float>, LabelMap> synth_raw(const SynthOptions& opt, std::int64_t index) {
  if (opt.classes < 2 || opt.classes > static_cast<int>(kSynthColors.size())) {
    throw ConfigError("synthetic classes must be in [2, " + std::to_string(kSynthColors.size()) + "]");
  }
  if (opt.h < 32 || opt.w < 32 || opt.h % 32 != 0 || opt.w % 32 != 0) {
    throw ShapeError("synthetic size " + std::to_string(opt.h) + "x" + std::to_string(opt.w) +
                     " cannot hold the shapes; need multiples of 32");
  }
  if (opt.noise < 0) throw ConfigError("synthetic noise must be >= 0");
  std::mt19937_64 rng(mix_seed(opt.seed, static_cast<std::uint64_t>(index)));
  auto uniform = [&rng](std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
  };

  LabelMap label{opt.h, opt.w, std::vector<std::uint8_t>(static_cast<std::size_t>(opt.h * opt.w), 0)};
  const std::int64_t side = std::min(opt.h, opt.w);
  const std::int64_t min_ext = side / 8;
  const std::int64_t max_ext = side / 2;
  for (int cls = 1; cls < opt.classes; ++cls) {
    const bool circle = uniform(0, 1) == 1;
    if (circle) {
      const std::int64_t r = uniform(min_ext / 2, max_ext / 2);
      const std::int64_t cy = uniform(r, opt.h - 1 - r);
      const std::int64_t cx = uniform(r, opt.w - 1 - r);
      for (std::int64_t y = cy - r; y <= cy + r; ++y) {
        for (std::int64_t x = cx - r; x <= cx + r; ++x) {
          if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) {
            label.values[static_cast<std::size_t>(y * opt.w + x)] = static_cast<std::uint8_t>(cls);
          }
        }
      }
    } else {
      const std::int64_t rh = uniform(min_ext, max_ext);
      const std::int64_t rw = uniform(min_ext, max_ext);
      const std::int64_t y0 = uniform(0, opt.h - rh);
      const std::int64_t x0 = uniform(0, opt.w - rw);
      for (std::int64_t y = y0; y < y0 + rh; ++y) {
        for (std::int64_t x = x0; x < x0 + rw; ++x) {
          label.values[static_cast<std::size_t>(y * opt.w + x)] = static_cast<std::uint8_t>(cls);
        }
      }
    }
  }

  Tensor<float> rgb(Shape{1, 3, opt.h, opt.w});
  auto d = rgb.data_mut();
  const std::int64_t plane = opt.h * opt.w;
  std::normal_distribution<double> noise(0.0, opt.noise > 0 ? opt.noise : 1.0);
  for (std::int64_t p = 0; p < plane; ++p) {
    const auto color = synth_class_color(label.values[static_cast<std::size_t>(p)]);
    for (int c = 0; c < 3; ++c) {
      double v = color[c];
      if (opt.noise > 0) v += noise(rng);
      d[static_cast<std::size_t>(c * plane + p)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return {rgb, label};
}

SegSample synth_sample(const SynthOptions& opt, std::int64_t index, const Normalization& norm) {
  auto [rgb, label] = synth_raw(opt, index);
  auto d = rgb.data_mut();
  const std::int64_t plane = opt.h * opt.w;
  for (int c = 0; c < 3; ++c) {
    for (std::int64_t p = 0; p < plane; ++p) {
      float& v = d[static_cast<std::size_t>(c * plane + p)];
      v = static_cast<float>((v - norm.mean[c]) / norm.std[c]);
    }
  }
  return SegSample{rgb, std::move(label), "synth_" + std::to_string(opt.seed) + "_" + std::to_string(index)};
}

std::vector<SegSample> synth_dataset(std::int64_t n, const SynthOptions& opt, const Normalization& norm) {
  if (n < 1) throw ConfigError("synthetic dataset needs at least one sample");
  std::vector<SegSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out.push_back(synth_sample(opt, i, norm));
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_array()) throw DataError("manifest must be a JSON array");
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("image") || !e.contains("label")) {
      throw DataError("manifest entries need \"image\" and \"label\"");
    }
    ManifestEntry m;
    m.image = e.at("image").get<std::string>();
    m.label = e.at("label").get<std::string>();
    if (m.image.is_relative()) m.image = base / m.image;
    if (m.label.is_relative()) m.label = base / m.label;
    m.id = e.contains("id") ? e.at("id").get<std::string>() : m.image.stem().string();
    out.push_back(std::move(m));
  }
  if (out.empty()) throw DataError("manifest " + path.string() + " lists no samples");
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries) j.push_back({{"image", e.image.string()}, {"label", e.label.string()}, {"id", e.id}});
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << j.dump(1) << '\n';
}

std::vector<ManifestEntry> cityscapes_entries(const std::filesystem::path& root, const std::string& split) {
  namespace fs = std::filesystem;
  const fs::path img_root = root / "leftImg8bit" / split;
  if (!fs::is_directory(img_root)) throw DataError("missing directory " + img_root.string());
  const std::string img_suffix = "_leftImg8bit.ppm";
  std::vector<ManifestEntry> out;
  for (const auto& entry : fs::recursive_directory_iterator(img_root)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_regular_file() || name.size() <= img_suffix.size() ||
        name.compare(name.size() - img_suffix.size(), img_suffix.size(), img_suffix) != 0) {
      continue;
    }
    const std::string stem = name.substr(0, name.size() - img_suffix.size());
    const fs::path city = fs::relative(entry.path().parent_path(), img_root);
    ManifestEntry m{entry.path(), root / "gtFine" / split / city / (stem + "_gtFine_labelIds.pgm"), stem};
    if (!fs::exists(m.label)) throw DataError("missing label map " + m.label.string());
    out.push_back(std::move(m));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  if (out.empty()) throw DataError("no *" + img_suffix + " images under " + img_root.string());
  return out;
}

std::vector<SegSample> load_samples(const std::vector<ManifestEntry>& entries, LabelScheme scheme,
                                    std::int64_t num_classes, const Normalization& norm) {
  std::vector<SegSample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    const Raster img = read_ppm(e.image);
    LabelMap label = map_labels(read_pgm(e.label), scheme);
    if (label.h != img.h || label.w != img.w) {
      throw DataError(e.id + ": label " + std::to_string(label.w) + "x" + std::to_string(label.h) +
                      " does not match image " + std::to_string(img.w) + "x" + std::to_string(img.h));
    }
    validate_labels(label, num_classes, e.id);
    out.push_back(SegSample{image_to_tensor(img, norm), std::move(label), e.id});
  }
  return out;
}

}  // namespace bdg::data
