#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "bdg/data.hpp"
#include "bdg/metrics.hpp"
#include "support.hpp"

using namespace bdg;
using data::LabelMap;
using data::LabelScheme;
using data::Raster;
using test::values;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("bdg_data_test_" + name);
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST(Raster, ReadsSmallExamples) {
  const auto p6 = temp_path("a.ppm");
  write_bytes(p6, std::string("P6\n2 1\n255\n") + std::string("\x01\x02\x03\xff\x00\x80", 6));
  const Raster r = data::read_ppm(p6);
  EXPECT_EQ(r.h, 1);
  EXPECT_EQ(r.w, 2);
  EXPECT_EQ(r.pixels, (std::vector<std::uint8_t>{1, 2, 3, 255, 0, 128}));

  const auto p5 = temp_path("a.pgm");
  write_bytes(p5, "P5\n# comment\n1 1\n255\n\x07");
  const LabelMap m = data::read_pgm(p5);
  EXPECT_EQ(m, (LabelMap{1, 1, {7}}));
  EXPECT_THROW(data::read_ppm(p5), DataError);
  EXPECT_THROW(data::read_pgm(p6), DataError);
  std::filesystem::remove(p6);
  std::filesystem::remove(p5);
}

TEST(Raster, RoundTrip) {
  const auto p = temp_path("rt.ppm");
  Raster r{3, 5, 3, {}};
  for (int i = 0; i < 45; ++i) r.pixels.push_back(static_cast<std::uint8_t>(i * 5));
  data::write_raster(p, r);
  const Raster back = data::read_ppm(p);
  EXPECT_EQ(back.pixels, r.pixels);
  EXPECT_EQ(back.h, 3);
  LabelMap m{2, 2, {0, 1, 255, 3}};
  data::write_pgm(p, m);
  EXPECT_EQ(data::read_pgm(p), m);
  std::filesystem::remove(p);
}

TEST(Raster, RejectsMalformedFiles) {
  const auto p = temp_path("bad.pgm");
  write_bytes(p, "P2\n1 1\n255\n7");
  EXPECT_THROW(data::read_raster(p), DataError);
  write_bytes(p, "P5\n2 2\n255\n\x01\x02");
  EXPECT_THROW(data::read_raster(p), DataError);
  write_bytes(p, "P5\n1 1\n65535\n\x01\x02");
  EXPECT_THROW(data::read_raster(p), DataError);
  std::filesystem::remove(p);
  EXPECT_THROW(data::read_raster(p), DataError);
}

TEST(Labels, CityscapesMapping) {
  EXPECT_EQ(data::map_label(7, LabelScheme::kCityscapes19), 0);    // road
  EXPECT_EQ(data::map_label(26, LabelScheme::kCityscapes19), 13);  // car
  EXPECT_EQ(data::map_label(33, LabelScheme::kCityscapes19), 18);  // bicycle
  EXPECT_EQ(data::map_label(0, LabelScheme::kCityscapes19), 255);
  EXPECT_EQ(data::map_label(255, LabelScheme::kCityscapes19), 255);
  std::set<int> train;
  for (int raw = 0; raw < 256; ++raw) train.insert(data::map_label(static_cast<std::uint8_t>(raw), LabelScheme::kCityscapes19));
  EXPECT_EQ(train.size(), 20u);  // 19 classes + ignore
}

TEST(Labels, CamvidMapping) {
  EXPECT_EQ(data::map_label(21, LabelScheme::kCamvid11), 0);  // Sky
  EXPECT_EQ(data::map_label(2, LabelScheme::kCamvid11), 10);  // Bicyclist
  EXPECT_EQ(data::map_label(30, LabelScheme::kCamvid11), 255);  // Void
  EXPECT_THROW(data::parse_label_scheme("ade20k"), ConfigError);
}

TEST(Labels, IdentityIsIdempotent) {
  LabelMap m{1, 4, {0, 5, 255, 18}};
  EXPECT_EQ(data::map_labels(data::map_labels(m, LabelScheme::kIdentity), LabelScheme::kIdentity), m);
  EXPECT_NO_THROW(data::validate_labels(m, 19, "m"));
  EXPECT_THROW(data::validate_labels(m, 18, "m"), DataError);
}

TEST(Manifest, RoundTripResolvesRelativePaths) {
  const auto dir = temp_path("manifest");
  std::filesystem::create_directories(dir);
  data::write_manifest(dir / "m.json", {{"img/a.ppm", "lbl/a.pgm", "a"}, {"img/b.ppm", "lbl/b.pgm", "b"}});
  const auto entries = data::read_manifest(dir / "m.json");
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[1].id, "b");
  EXPECT_EQ(entries[0].image, dir / "img/a.ppm");
  write_bytes(dir / "bad.json", "{\"image\": 1}");
  EXPECT_THROW(data::read_manifest(dir / "bad.json"), DataError);
  std::filesystem::remove_all(dir);
}

TEST(Synthetic, Deterministic) {
  data::SynthOptions o;
  const auto a = data::synth_sample(o, 4);
  const auto b = data::synth_sample(o, 4);
  EXPECT_EQ(values(a.image), values(b.image));
  EXPECT_EQ(a.label, b.label);
  EXPECT_NE(data::synth_sample(o, 5).label, a.label);
}

TEST(Synthetic, NoiselessColorsFollowLabels) {
  data::SynthOptions o;
  o.classes = 2;
  o.noise = 0;
  for (int i = 0; i < 5; ++i) {
    auto [rgb, label] = data::synth_raw(o, i);
    const auto d = values(rgb);
    const std::int64_t plane = o.h * o.w;
    std::set<std::array<float, 3>> colors;
    for (std::int64_t p = 0; p < plane; ++p) {
      const std::array<float, 3> c{d[p], d[plane + p], d[2 * plane + p]};
      const auto want = data::synth_class_color(label.values[p]);
      for (int k = 0; k < 3; ++k) EXPECT_EQ(c[k], static_cast<float>(want[k]));
      colors.insert(c);
    }
    EXPECT_EQ(colors.size(), 2u);
  }
}

TEST(Synthetic, EveryClassAppears) {
  data::SynthOptions o;
  o.classes = 5;
  std::set<int> seen;
  for (int i = 0; i < 100; ++i) {
    for (auto v : data::synth_raw(o, i).second.values) seen.insert(v);
  }
  EXPECT_EQ(seen, (std::set<int>{0, 1, 2, 3, 4}));
  o.classes = 20;
  EXPECT_THROW(data::synth_raw(o, 0), ConfigError);
}

TEST(Confusion, PerfectAndSwapped) {
  LabelMap truth{1, 4, {0, 1, 1, 0}};
  metrics::ConfusionMatrix good(2);
  good.add(truth, {0, 1, 1, 0});
  EXPECT_DOUBLE_EQ(metrics::miou(good).mean, 1.0);
  metrics::ConfusionMatrix swapped(2);
  swapped.add(truth, {1, 0, 0, 1});
  EXPECT_DOUBLE_EQ(metrics::miou(swapped).mean, 0.0);
}

TEST(Confusion, WorkedExample) {
  metrics::ConfusionMatrix cm(2);
  cm.increment(0, 0, 3);
  cm.increment(0, 1, 1);
  cm.increment(1, 0, 2);
  cm.increment(1, 1, 4);
  const auto r = metrics::miou(cm);
  EXPECT_DOUBLE_EQ(*r.per_class[0], 0.5);
  EXPECT_DOUBLE_EQ(*r.per_class[1], 4.0 / 7.0);
  EXPECT_NEAR(r.mean, 0.5357, 1e-4);
}

TEST(Confusion, AdditiveAndOrderIndependent) {
  LabelMap t1{1, 3, {0, 1, 2}}, t2{1, 3, {2, 2, 255}};
  const std::vector<std::uint8_t> p1{0, 2, 2}, p2{2, 1, 0};
  metrics::ConfusionMatrix a(3), b(3), c(3), d(3);
  a.add(t1, p1);
  a.add(t2, p2);
  b.add(t2, p2);
  b.add(t1, p1);
  c.add(t1, p1);
  d.add(t2, p2);
  c += d;
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  EXPECT_EQ(a.total(), 5);  // ignore pixel skipped
}

TEST(Confusion, AbsentClassesAreExcluded) {
  metrics::ConfusionMatrix cm(3);
  cm.add(LabelMap{1, 2, {0, 1}}, {0, 1});
  const auto r = metrics::miou(cm);
  EXPECT_FALSE(r.per_class[2].has_value());
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
}

TEST(Colorize, IgnoreIsBlackAndLookupInverts) {
  const auto black = metrics::colorize(LabelMap{2, 2, {255, 255, 255, 255}}, metrics::Palette::kCityscapes);
  for (auto v : black.pixels) EXPECT_EQ(v, 0);
  for (auto pal : {metrics::Palette::kCityscapes, metrics::Palette::kCamvid}) {
    LabelMap m{1, static_cast<std::int64_t>(metrics::palette_size(pal)) + 1, {}};
    for (std::size_t i = 0; i < metrics::palette_size(pal); ++i) m.values.push_back(static_cast<std::uint8_t>(i));
    m.values.push_back(255);
    EXPECT_EQ(metrics::palette_lookup(metrics::colorize(m, pal), pal), m);
  }
  EXPECT_THROW(metrics::parse_palette("rainbow"), ConfigError);
}

TEST(Latency, NearestRankSummary) {
  std::vector<double> ms;
  for (int i = 20; i >= 1; --i) ms.push_back(i);
  const auto s = metrics::summarize_latency(ms);
  EXPECT_DOUBLE_EQ(s.mean_ms, 10.5);
  EXPECT_DOUBLE_EQ(s.p95_ms, 19.0);
  const auto odd = metrics::summarize_latency({5, 1, 3});
  EXPECT_DOUBLE_EQ(odd.median_ms, 3.0);
  EXPECT_DOUBLE_EQ(odd.fps, 1000.0 / 3.0);
}
