#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cbn {

enum class LrSchedule { cosine, step };

LrSchedule parse_lr_schedule(const std::string& name);

/// Base rate scaled linearly by batch_size / 32.
double scaled_lr(double base_lr, std::size_t batch_size);

/// Learning rate at optimizer step `step` of `total_steps`.
/// cosine: scaled * 0.5 * (1 + cos(pi * step / total_steps)).
/// step:   scaled * 0.1^(number of milestones <= step); milestones are in steps.
double lr_at(LrSchedule schedule, double base_lr, std::size_t batch_size, std::uint64_t step, std::uint64_t total_steps,
             const std::vector<std::uint64_t>& milestone_steps = {});

}  // namespace cbn
