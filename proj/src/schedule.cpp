#include "cbn/schedule.hpp"

#include <cmath>
#include <numbers>

#include "cbn/errors.hpp"

namespace cbn {

LrSchedule parse_lr_schedule(const std::string& name) {
  if (name == "cosine") return LrSchedule::cosine;
  if (name == "step") return LrSchedule::step;
  throw ArgumentError("unknown lr schedule '" + name + "'");
}

double scaled_lr(double base_lr, std::size_t batch_size) { return base_lr * static_cast<double>(batch_size) / 32.0; }

double lr_at(LrSchedule schedule, double base_lr, std::size_t batch_size, std::uint64_t step, std::uint64_t total_steps,
             const std::vector<std::uint64_t>& milestone_steps) {
  const double base = scaled_lr(base_lr, batch_size);
  if (schedule == LrSchedule::cosine) {
    if (total_steps == 0) return base;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  }
  double lr = base;
  for (std::uint64_t m : milestone_steps) {
    if (step >= m) lr *= 0.1;
  }
  return lr;
}

}  // namespace cbn
