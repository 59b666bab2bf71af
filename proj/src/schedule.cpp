#include <excb/schedule.hpp>

#include <cmath>

namespace excb {

namespace {

constexpr double kPi = 3.14159265358979323846;

double cosine(double start, double end, int64_t step, int64_t span) {
  if (span <= 0) return end;
  const double t = static_cast<double>(step) / static_cast<double>(span);
  return end + (start - end) * 0.5 * (1.0 + std::cos(kPi * t));
}

}  // namespace

ScheduleValues schedules(const ScheduleConfig& cfg, int64_t step) {
  cfg.validate();
  if (step < 0 || step > cfg.total_steps)
    throw std::invalid_argument("schedule: step outside [0, total]");
  ScheduleValues out;
  if (step < cfg.warmup_steps) {
    out.lr = cfg.base_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  } else {
    out.lr = cosine(cfg.base_lr, cfg.final_lr, step - cfg.warmup_steps,
                    cfg.total_steps - cfg.warmup_steps);
  }
  out.ema_momentum = cosine(cfg.ema_base, 1.0, step, cfg.total_steps);
  out.centroid_wd = cosine(cfg.centroid_wd_start, cfg.centroid_wd_end, step, cfg.total_steps);
  return out;
}

}  // namespace excb
