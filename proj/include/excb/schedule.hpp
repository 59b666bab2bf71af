#pragma once

// Hyperparameter schedules, all functions of the global step:
//   lr          linear 0 -> base over warmup, then cosine base -> floor
//   ema         cosine base -> 1 over the whole run
//   centroid wd cosine start -> end over the whole run

#include <cstdint>
#include <stdexcept>

namespace excb {

struct ScheduleConfig {
  int64_t total_steps = 0;
  int64_t warmup_steps = 0;
  double base_lr = 0.15;
  double final_lr = 0.0;
  double ema_base = 0.996;
  double centroid_wd_start = 1e-3;
  double centroid_wd_end = 1e-4;

  void validate() const {
    if (total_steps < 1) throw std::invalid_argument("schedule: total_steps must be positive");
    if (warmup_steps < 0 || warmup_steps > total_steps)
      throw std::invalid_argument("schedule: warmup outside [0, total]");
    if (!(base_lr >= 0.0) || !(final_lr >= 0.0))
      throw std::invalid_argument("schedule: negative learning rate");
    if (!(ema_base >= 0.0 && ema_base <= 1.0))
      throw std::invalid_argument("schedule: ema base outside [0, 1]");
  }
};

struct ScheduleValues {
  double lr = 0.0;
  double ema_momentum = 0.0;
  double centroid_wd = 0.0;
};

ScheduleValues schedules(const ScheduleConfig& cfg, int64_t step);

}  // namespace excb
