// Serial reference oracles against the OpenMP kernels, per thread count.
// Usage: kernel_bench [--runs N] [--threads 1,2,4]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <omp.h>

#include "bdg/checks.hpp"
#include "bdg/kernels.hpp"
#include "bdg/nn.hpp"
#include "bdg/reference.hpp"

using namespace bdg;

namespace {

Tensor<double> randn(Shape s, std::mt19937_64& rng) {
  Tensor<double> t(s);
  std::normal_distribution<double> d(0.0, 1.0);
  for (double& v : t.data_mut()) v = d(rng);
  return t;
}

struct Case {
  std::string name;
  std::function<void()> reference;
  std::function<void()> kernel;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference vs OpenMP kernel timings"};
  int runs = 5;
  std::string thread_list;
  app.add_option("--runs", runs, "Timed runs per measurement");
  app.add_option("--threads", thread_list, "Comma-separated thread counts (default 1..max)");
  CLI11_PARSE(app, argc, argv);

  std::vector<int> threads;
  if (thread_list.empty()) {
    for (int t = 1; t <= omp_get_max_threads(); t *= 2) threads.push_back(t);
  } else {
    std::stringstream ss(thread_list);
    for (std::string tok; std::getline(ss, tok, ',');) threads.push_back(std::stoi(tok));
  }

  std::mt19937_64 rng(7);
  const std::int64_t n = 256;
  std::vector<double> a(n * n), b(n * n), c(n * n);
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto& v : a) v = d(rng);
  for (auto& v : b) v = d(rng);

  const auto x = randn(Shape{1, 32, 64, 64}, rng);
  auto conv = nn::Conv2dParams<double>::make(32, 32, 3, 1, 1, 1, false);
  conv.weight = randn(conv.weight.shape(), rng);
  const auto big = randn(Shape{1, 64, 128, 128}, rng);

  std::vector<Case> cases{
      {"gemm 256^3",
       [&] { ref::matmul(a, b, n, n, n); },
       [&] { kernels::gemm<double>(false, false, n, n, n, 1.0, a.data(), n, b.data(), n, 0.0, c.data(), n); }},
      {"conv3x3 32->32 64x64",
       [&] { ref::conv2d(x, conv.weight, std::nullopt, 1, 1, 1); },
       [&] { nn::conv2d(x, conv); }},
      {"maxpool2 64x128x128", [&] { ref::maxpool2(big); }, [&] { nn::maxpool2(big); }},
      {"upsample2 64x128x128", [&] { ref::upsample_bilinear2(big); }, [&] { nn::upsample_bilinear2(big); }},
  };

  std::printf("%-24s %12s", "kernel", "serial ref");
  for (int t : threads) std::printf("  %8s%-3d", "omp x", t);
  std::printf("\n");
  for (const auto& cs : cases) {
    std::printf("%-24s %10.2fms", cs.name.c_str(), checks::median_ms(cs.reference, runs, 1));
    for (int t : threads) {
      kernels::set_thread_count(t);
      std::printf("  %9.2fms", checks::median_ms(cs.kernel, runs, 1));
    }
    std::printf("\n");
  }
  return 0;
}
