#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bdg/network.hpp"
#include "bdg/train.hpp"

namespace bdg::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericAbort = 3 };

struct SynthSection {
  std::int64_t count = 8;
  std::int64_t h = 64;
  std::int64_t w = 64;
  double noise = 0.05;
  std::uint64_t seed = 1;
};

struct DataSection {
  std::filesystem::path manifest;  // empty: synthetic
  std::string label_scheme = "identity";
  SynthSection synthetic;
};

struct BenchSection {
  int warmup_runs = 3;
  int timed_runs = 20;
  std::vector<std::pair<std::int64_t, std::int64_t>> resolutions{{256, 512}, {512, 1024}, {1024, 2048}};
};

/// Merged config document: {"network": {...}, "train": {...}, "data": {...}, "bench": {...}}.
/// Every section is optional; unknown keys anywhere are a ConfigError.
struct CliConfig {
  net::NetworkConfig network;
  train::TrainConfig train;
  DataSection data;
  BenchSection bench;
};

/// `base_dir` resolves a relative data.manifest.
CliConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
CliConfig load_config(const std::filesystem::path& path);

/// Worker count after the BDG_THREADS bound.
int bounded_workers(int requested);

/// Entry point of the `bidganet` tool. Returns an ExitCode.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bdg::cli
