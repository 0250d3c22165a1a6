#pragma once

#include <cstdint>
#include <vector>

#include "fir/errors.hpp"

namespace fir {

/// Training schedule: linear warmup ramp, then the base rate with optional
/// halvings at fixed iterations.
struct ScheduleConfig {
  std::int64_t warmup_iters = 50;
  std::int64_t total_iters = 500;
  std::int64_t eval_interval = 50;
  std::vector<std::int64_t> half_at;  // empty = constant after warmup

  void validate() const {
    if (warmup_iters < 0 || total_iters < 0) {
      throw ConfigError("schedule: warmup_iters and total_iters must be >= 0");
    }
    if (warmup_iters > total_iters) {
      throw ConfigError("schedule: warmup_iters " + std::to_string(warmup_iters) +
                        " exceeds total_iters " + std::to_string(total_iters));
    }
    if (eval_interval < 1) throw ConfigError("schedule: eval_interval must be >= 1");
  }
};

/// Learning rate at iteration `iter` (0-based): base_lr * (iter+1) / warmup
/// during warmup, then base_lr halved once for each configured milestone
/// that has been reached. Continuous at the warmup boundary.
inline double warmup_lr(std::int64_t iter, double base_lr, const ScheduleConfig& schedule) {
  if (iter < 0) throw UsageError("warmup_lr: negative iteration");
  if (iter < schedule.warmup_iters) {
    return base_lr * static_cast<double>(iter + 1) /
           static_cast<double>(schedule.warmup_iters);
  }
  double lr = base_lr;
  for (std::int64_t h : schedule.half_at) {
    if (iter >= h) lr *= 0.5;
  }
  return lr;
}

}  // namespace fir
