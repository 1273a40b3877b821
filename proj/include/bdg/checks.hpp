#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace bdg::checks {

struct CheckOptions {
  std::uint64_t seed = 2024;
  bool full_resolution = true;     // 1024x2048 forwards in the shape check
  bool skip_large_full_res = false;
  std::int64_t toy_iters = 300;    // training checks
  double toy_lr = 0.05;
  std::int64_t ablation_iters = 300;
};

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

CheckResult check_attention(const CheckOptions& opt);         // 1
CheckResult check_conv_oracle(const CheckOptions& opt);       // 2
CheckResult check_gradients(const CheckOptions& opt);         // 3
CheckResult check_shapes(const CheckOptions& opt);            // 4
CheckResult check_fusion_algebra(const CheckOptions& opt);    // 5
CheckResult check_linear_complexity(const CheckOptions& opt); // 6
CheckResult check_toy_training(const CheckOptions& opt);      // 7
CheckResult check_ablation(const CheckOptions& opt);          // 8
CheckResult check_param_accounting(const CheckOptions& opt);  // 9
CheckResult check_schedule_loss(const CheckOptions& opt);     // 10

inline constexpr int kCheckCount = 10;

/// Runs the listed checks in order; exceptions become failures.
std::vector<CheckResult> run_checks(const std::vector<int>& ids, const CheckOptions& opt,
                                    const std::function<void(const CheckResult&)>& on_result = {});

std::string format_result(const CheckResult& r);

/// Median wall time (ms) of `runs` calls after `warmup` discarded calls.
double median_ms(const std::function<void()>& fn, int runs, int warmup = 2);

}  // namespace bdg::checks
