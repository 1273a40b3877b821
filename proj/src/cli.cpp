#include "bdg/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "bdg/checks.hpp"
#include "bdg/data.hpp"
#include "bdg/error.hpp"
#include "bdg/metrics.hpp"

namespace bdg::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Reads keys out of one config section and rejects whatever is left over.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <typename V>
  void get(const char* key, V& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<V>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + name_ + "." + key + "' has the wrong type");
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + name_ + "." + key + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void parse_network(const json& j, net::NetworkConfig& cfg) {
  Section s(j, "network");
  std::string version = net::to_string(cfg.version);
  std::string fusion = net::to_string(cfg.fusion_mode);
  std::int64_t classes = cfg.num_classes;
  s.get("version", version);
  s.get("fusion_mode", fusion);
  s.get("num_classes", classes);
  cfg = net::NetworkConfig::for_version(net::parse_version(version), classes, net::parse_fusion_mode(fusion));
  s.get("ohem", cfg.ohem);
  s.get("ga_s", cfg.ga_s);
  s.get("ga_dropout", cfg.ga_dropout);
  s.get("init_seed", cfg.init_seed);
  s.finish();
  cfg.validate();
}

void parse_train(const json& j, train::TrainConfig& cfg) {
  Section s(j, "train");
  s.get("base_lr", cfg.base_lr);
  s.get("momentum", cfg.momentum);
  s.get("weight_decay", cfg.weight_decay);
  s.get("total_iters", cfg.total_iters);
  s.get("warmup_iters", cfg.warmup_iters);
  s.get("poly_power", cfg.poly_power);
  s.get("crop_h", cfg.crop_h);
  s.get("crop_w", cfg.crop_w);
  s.get("batch_size", cfg.batch_size);
  s.get("ohem_thresh", cfg.ohem_thresh);
  s.get("ohem_min_kept", cfg.ohem_min_kept);
  s.get("ignore_index", cfg.ignore_index);
  s.get("seed", cfg.seed);
  s.get("log_every", cfg.log_every);
  s.get("checkpoint_every", cfg.checkpoint_every);
  std::string dir = cfg.checkpoint_dir.string();
  s.get("checkpoint_dir", dir);
  cfg.checkpoint_dir = dir;
  s.get("workers", cfg.workers);
  s.finish();
}

void parse_data(const json& j, DataSection& d, const fs::path& base_dir) {
  Section s(j, "data");
  std::string manifest;
  s.get("manifest", manifest);
  if (!manifest.empty()) {
    d.manifest = manifest;
    if (d.manifest.is_relative() && !base_dir.empty()) d.manifest = base_dir / d.manifest;
  }
  s.get("label_scheme", d.label_scheme);
  data::parse_label_scheme(d.label_scheme);
  if (const json* syn = s.sub("synthetic")) {
    Section t(*syn, "data.synthetic");
    t.get("count", d.synthetic.count);
    t.get("h", d.synthetic.h);
    t.get("w", d.synthetic.w);
    t.get("noise", d.synthetic.noise);
    t.get("seed", d.synthetic.seed);
    t.finish();
    if (d.synthetic.count < 1) throw ConfigError("data.synthetic.count must be >= 1");
  }
  s.finish();
}

void parse_bench(const json& j, BenchSection& b) {
  Section s(j, "bench");
  s.get("warmup_runs", b.warmup_runs);
  s.get("timed_runs", b.timed_runs);
  if (const json* res = s.sub("resolutions")) {
    b.resolutions.clear();
    if (!res->is_array()) throw ConfigError("bench.resolutions must be a list of [h, w] pairs");
    for (const auto& r : *res) {
      if (!r.is_array() || r.size() != 2 || !r[0].is_number_integer() || !r[1].is_number_integer()) {
        throw ConfigError("bench.resolutions must be a list of [h, w] pairs");
      }
      b.resolutions.emplace_back(r[0].get<std::int64_t>(), r[1].get<std::int64_t>());
    }
  }
  s.finish();
  if (b.warmup_runs < 0 || b.timed_runs < 1) throw ConfigError("bench needs warmup_runs >= 0 and timed_runs >= 1");
  for (auto [h, w] : b.resolutions) {
    if (h < 32 || w < 32 || h % 32 != 0 || w % 32 != 0) {
      throw ConfigError("bench resolution " + std::to_string(h) + "x" + std::to_string(w) +
                        " must be a positive multiple of 32");
    }
  }
}

std::vector<data::SegSample> load_dataset(const CliConfig& cfg) {
  const auto classes = cfg.network.num_classes;
  if (!cfg.data.manifest.empty()) {
    return data::load_samples(data::read_manifest(cfg.data.manifest), data::parse_label_scheme(cfg.data.label_scheme),
                              classes);
  }
  data::SynthOptions o;
  o.h = cfg.data.synthetic.h;
  o.w = cfg.data.synthetic.w;
  o.classes = static_cast<int>(classes);
  o.noise = cfg.data.synthetic.noise;
  o.seed = cfg.data.synthetic.seed;
  return data::synth_dataset(cfg.data.synthetic.count, o);
}

data::Raster tensor_to_raster(const Tensor<float>& rgb) {
  const Shape& s = rgb.shape();
  data::Raster r{s.h, s.w, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(s.h * s.w * 3))};
  auto d = rgb.data();
  const std::int64_t plane = s.h * s.w;
  for (std::int64_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(d[static_cast<std::size_t>(c * plane + p)]), 0.0, 1.0);
      r.pixels[static_cast<std::size_t>(p * 3 + c)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return r;
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

double median_of(std::vector<double> v) { return metrics::summarize_latency(std::move(v)).median_ms; }

json latency_json(const metrics::LatencyStats& st) {
  return {{"mean_ms", st.mean_ms}, {"median_ms", st.median_ms}, {"p95_ms", st.p95_ms}, {"fps", st.fps}};
}

// ---- subcommands ----

struct TrainArgs {
  std::string config;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool eval_train = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  CliConfig cfg = load_config(a.config);
  if (a.seed_set) cfg.train.seed = a.seed;
  if (!a.out_dir.empty()) cfg.train.checkpoint_dir = a.out_dir;
  cfg.train.ohem = cfg.network.ohem;
  cfg.train.workers = bounded_workers(cfg.train.workers);
  cfg.train.validate();
  const auto dataset = load_dataset(cfg);
  auto model = net::build_model<float>(cfg.network);
  const auto report = train::train_loop(model, dataset, cfg.train, &out);
  json done{{"event", "done"},
            {"iters", cfg.train.total_iters},
            {"final_loss", report.records.empty() ? 0.0 : report.records.back().loss},
            {"wall_ms", report.wall_ms}};
  if (!report.checkpoints.empty()) done["checkpoint"] = report.checkpoints.back().string();
  if (a.eval_train) {
    const auto ev = train::evaluate(model, dataset);
    done["train_ce"] = ev.mean_ce;
    done["train_miou"] = ev.miou;
  }
  out << done.dump() << '\n';
  return kOk;
}

struct InferArgs {
  std::string ckpt, in, out, color;
  std::string palette = "cityscapes";
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const metrics::Palette palette = metrics::parse_palette(a.palette);
  auto model = net::load_checkpoint<float>(a.ckpt);
  const data::Raster img = data::read_ppm(a.in);
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor<float> logits = net::forward(model, data::image_to_tensor(img), ForwardContext{Mode::kInfer, 0});
  const double ms = ms_since(t0);
  data::LabelMap pred{img.h, img.w, net::argmax_labels(logits)};
  data::write_pgm(a.out, pred);
  if (!a.color.empty()) data::write_raster(a.color, metrics::colorize(pred, palette));
  std::set<int> present(pred.values.begin(), pred.values.end());
  out << json{{"event", "infer"},
              {"h", img.h},
              {"w", img.w},
              {"classes_present", std::vector<int>(present.begin(), present.end())},
              {"forward_ms", ms}}
             .dump()
      << '\n';
  return kOk;
}

struct EvalArgs {
  std::string ckpt, manifest;
  std::string label_scheme = "identity";
  bool json_only = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  auto model = net::load_checkpoint<float>(a.ckpt);
  const auto k = model.config.num_classes;
  const auto samples =
      data::load_samples(data::read_manifest(a.manifest), data::parse_label_scheme(a.label_scheme), k);
  metrics::ConfusionMatrix cm(k);
  for (const auto& s : samples) {
    const auto logits = net::forward(model, s.image, ForwardContext{Mode::kInfer, 0});
    cm.add(s.label, net::argmax_labels(logits));
  }
  const auto iou = metrics::miou(cm);
  json per_class = json::array();
  for (const auto& v : iou.per_class) per_class.push_back(v ? json(*v) : json(nullptr));
  const json result{{"event", "eval"},
                    {"samples", samples.size()},
                    {"pixels", cm.total()},
                    {"per_class_iou", per_class},
                    {"miou", iou.mean}};
  if (!a.json_only) {
    out << "class    IoU\n";
    for (std::size_t c = 0; c < iou.per_class.size(); ++c) {
      out << std::setw(5) << c << "  ";
      if (iou.per_class[c]) {
        out << std::fixed << std::setprecision(4) << *iou.per_class[c] << '\n';
      } else {
        out << "  -\n";
      }
    }
    out << "mIoU   " << std::fixed << std::setprecision(4) << iou.mean << "  (" << samples.size() << " samples)\n";
    out.unsetf(std::ios::floatfield);
  }
  out << result.dump() << '\n';
  return kOk;
}

struct BenchArgs {
  std::string config, ckpt;
  std::uint64_t seed = 1;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  const CliConfig cfg = load_config(a.config);
  auto model = a.ckpt.empty() ? net::build_model<float>(cfg.network) : net::load_checkpoint<float>(a.ckpt);
  const auto& b = cfg.bench;
  std::vector<double> fusion_medians;
  for (auto [h, w] : b.resolutions) {
    // Input is built before timing starts; only forward() is inside the clock.
    Tensor<float> image(Shape{1, 3, h, w});
    std::mt19937_64 rng(mix_seed(a.seed, static_cast<std::uint64_t>(h * 100003 + w)));
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (float& v : image.data_mut()) v = dist(rng);
    std::vector<double> total, high, low, fusion, head, null_model;
    for (int r = 0; r < b.warmup_runs + b.timed_runs; ++r) {
      net::StageTimes st;
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor<float> logits = net::forward(model, image, ForwardContext{Mode::kInfer, 0}, &st);
      const double ms = ms_since(t0);
      // Identity head under the same harness: what the clock costs without a network.
      const auto t1 = std::chrono::steady_clock::now();
      const Tensor<float> copy(image.shape(), std::vector<float>(image.data().begin(), image.data().end()));
      const double null_ms = ms_since(t1);
      if (r < b.warmup_runs) continue;
      total.push_back(ms);
      high.push_back(st.high_ms);
      low.push_back(st.low_ms);
      fusion.push_back(st.fusion_ms);
      head.push_back(st.head_ms);
      null_model.push_back(null_ms);
      (void)logits;
      (void)copy;
    }
    fusion_medians.push_back(median_of(fusion));
    json line = latency_json(metrics::summarize_latency(total));
    line["event"] = "bench";
    line["h"] = h;
    line["w"] = w;
    line["batch"] = 1;
    line["timed_runs"] = b.timed_runs;
    line["stage_median_ms"] = {{"high", median_of(high)},
                               {"low", median_of(low)},
                               {"fusion", median_of(fusion)},
                               {"head", median_of(head)}};
    line["null_model_median_ms"] = median_of(null_model);
    out << line.dump() << '\n';
  }
  for (std::size_t i = 1; i < b.resolutions.size(); ++i) {
    const auto [h0, w0] = b.resolutions[i - 1];
    const auto [h1, w1] = b.resolutions[i];
    out << json{{"event", "ga_scaling"},
                {"from", {h0, w0}},
                {"to", {h1, w1}},
                {"pixel_ratio", static_cast<double>(h1 * w1) / static_cast<double>(h0 * w0)},
                {"fusion_time_ratio", fusion_medians[i] / fusion_medians[i - 1]}}
               .dump()
        << '\n';
  }
  return kOk;
}

struct CheckArgs {
  std::string only;
  bool no_full_res = false;
  bool skip_large = false;
  std::uint64_t seed = 2024;
};

std::vector<int> parse_ids(const std::string& s) {
  std::vector<int> ids;
  if (s.empty()) {
    for (int i = 1; i <= checks::kCheckCount; ++i) ids.push_back(i);
    return ids;
  }
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    int id = 0;
    try {
      id = std::stoi(tok);
    } catch (const std::exception&) {
      throw ConfigError("--only expects comma-separated criterion numbers, got '" + s + "'");
    }
    if (id < 1 || id > checks::kCheckCount) throw ConfigError("no check numbered " + tok);
    ids.push_back(id);
  }
  return ids;
}

int cmd_check(const CheckArgs& a, std::ostream& out) {
  checks::CheckOptions o;
  o.seed = a.seed;
  o.full_resolution = !a.no_full_res;
  o.skip_large_full_res = a.skip_large;
  const auto results = checks::run_checks(parse_ids(a.only), o, [&out](const checks::CheckResult& r) {
    out << checks::format_result(r) << std::endl;
  });
  const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.passed; });
  out << results.size() << " checks, " << failed << " failed\n";
  return failed == 0 ? kOk : kNumericAbort;
}

struct ParamsArgs {
  std::string version;
  std::int64_t classes = 19;
  std::string fusion = "dga";
  bool text = false;
};

int cmd_params(const ParamsArgs& a, std::ostream& out) {
  const auto cfg =
      net::NetworkConfig::for_version(net::parse_version(a.version), a.classes, net::parse_fusion_mode(a.fusion));
  auto model = net::build_model<float>(cfg);
  const auto parts = net::param_breakdown(model);
  const auto total = net::count_params(model);
  if (a.text) {
    for (const auto& [name, n] : parts) out << std::left << std::setw(14) << name << std::right << std::setw(12) << n << '\n';
    out << std::left << std::setw(14) << "total" << std::right << std::setw(12) << total << '\n';
  }
  json breakdown = json::object();
  for (const auto& [name, n] : parts) breakdown[name] = n;
  out << json{{"event", "params"},
              {"version", a.version},
              {"num_classes", a.classes},
              {"fusion_mode", a.fusion},
              {"total", total},
              {"breakdown", breakdown}}
             .dump()
      << '\n';
  return kOk;
}

struct SynthArgs {
  std::string out_dir;
  std::int64_t count = 8;
  std::int64_t h = 64;
  std::int64_t w = 64;
  int classes = 3;
  double noise = 0.05;
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  data::SynthOptions o{a.h, a.w, a.classes, a.noise, a.seed};
  fs::create_directories(a.out_dir);
  std::vector<data::ManifestEntry> entries;
  for (std::int64_t i = 0; i < a.count; ++i) {
    auto [rgb, label] = data::synth_raw(o, i);
    const std::string stem = "synth_" + std::to_string(i);
    data::write_raster(fs::path(a.out_dir) / (stem + ".ppm"), tensor_to_raster(rgb));
    data::write_pgm(fs::path(a.out_dir) / (stem + ".pgm"), label);
    entries.push_back({stem + ".ppm", stem + ".pgm", stem});
  }
  const fs::path manifest = fs::path(a.out_dir) / "manifest.json";
  data::write_manifest(manifest, entries);
  out << json{{"event", "synth"}, {"count", a.count}, {"manifest", manifest.string()}}.dump() << '\n';
  return kOk;
}

}  // namespace

CliConfig parse_config(const json& doc, const fs::path& base_dir) {
  Section top(doc, "<root>");
  CliConfig cfg;
  if (const json* j = top.sub("network")) parse_network(*j, cfg.network);
  if (const json* j = top.sub("train")) parse_train(*j, cfg.train);
  if (const json* j = top.sub("data")) parse_data(*j, cfg.data, base_dir);
  if (const json* j = top.sub("bench")) parse_bench(*j, cfg.bench);
  top.finish();
  cfg.train.ohem = cfg.network.ohem;
  cfg.train.validate();
  return cfg;
}

CliConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config: " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

int bounded_workers(int requested) {
  if (const char* env = std::getenv("BDG_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) return std::min(requested, cap);
  }
  return requested;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-branch segmentation network: train, infer, evaluate, benchmark"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("--config", ta.config, "Config JSON")->required();
  train->add_option("--out-dir", ta.out_dir, "Checkpoint directory (overrides train.checkpoint_dir)");
  train->add_option("--seed", ta.seed, "Training seed (overrides train.seed)");
  train->add_flag("--eval-train", ta.eval_train, "Report infer-mode CE and mIoU on the training set");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Predict labels for one PPM image");
  infer->add_option("--ckpt", ia.ckpt, "Checkpoint")->required();
  infer->add_option("--in", ia.in, "Input PPM")->required();
  infer->add_option("--out", ia.out, "Output label PGM")->required();
  infer->add_option("--color", ia.color, "Also write a colorized PPM");
  infer->add_option("--palette", ia.palette, "cityscapes or camvid");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Per-class IoU and mIoU over a manifest");
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  eval->add_option("--manifest", ea.manifest, "Manifest JSON")->required();
  eval->add_option("--label-scheme", ea.label_scheme, "identity, cityscapes19 or camvid11");
  eval->add_flag("--json", ea.json_only, "Only the JSON line");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Batch-1 forward latency per resolution");
  bench->add_option("--config", ba.config, "Config JSON")->required();
  bench->add_option("--ckpt", ba.ckpt, "Checkpoint (default: freshly initialized model)");
  bench->add_option("--seed", ba.seed, "Seed of the random input images");

  CheckArgs ca;
  auto* check = app.add_subcommand("check", "Run the invariant and oracle suite");
  check->add_option("--only", ca.only, "Comma-separated check numbers");
  check->add_flag("--no-full-res", ca.no_full_res, "Skip 1024x2048 forwards");
  check->add_flag("--skip-large-full-res", ca.skip_large, "Skip the 1024x2048 forward of the large version");
  check->add_option("--seed", ca.seed, "Seed");

  ParamsArgs pa;
  auto* params = app.add_subcommand("params", "Parameter counts and per-module breakdown");
  params->add_option("--version", pa.version, "light, base or large")->required();
  params->add_option("--classes", pa.classes, "Number of classes");
  params->add_option("--fusion", pa.fusion, "high_only, low_only, concat, single_ea or dga");
  params->add_flag("--text", pa.text, "Also print a table");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with a manifest");
  synth->add_option("--out", sa.out_dir, "Output directory")->required();
  synth->add_option("--count", sa.count, "Number of samples");
  synth->add_option("--height", sa.h, "Image height (multiple of 32)");
  synth->add_option("--width", sa.w, "Image width (multiple of 32)");
  synth->add_option("--classes", sa.classes, "Number of classes");
  synth->add_option("--noise", sa.noise, "Pixel noise standard deviation");
  synth->add_option("--seed", sa.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  }
  ta.seed_set = train->count("--seed") > 0;

  try {
    if (*train) return cmd_train(ta, out);
    if (*infer) return cmd_infer(ia, out);
    if (*eval) return cmd_eval(ea, out);
    if (*bench) return cmd_bench(ba, out);
    if (*check) return cmd_check(ca, out);
    if (*params) return cmd_params(pa, out);
    if (*synth) return cmd_synth(sa, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << '\n';
    return kNumericAbort;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << '\n';
    return kDataError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace bdg::cli
