#pragma once

#include <cmath>
#include <string>

#include "srl/core/error.hpp"

namespace srl {

/// EMA momentum schedule: lambda(step) = 1 - (1 - base) * (1 + cos(pi *
/// step / total)) / 2. Rises from `base` at step 0 to exactly 1 at
/// step = total; non-decreasing.
inline double lambda_schedule(std::int64_t step, std::int64_t total_steps,
                              double base = 0.996) {
  if (step < 0 || step > total_steps)
    throw ValueError("lambda_schedule: step " + std::to_string(step) +
                     " outside [0, " + std::to_string(total_steps) + "]");
  const double w =
      (1.0 + std::cos(M_PI * static_cast<double>(step) /
                      static_cast<double>(total_steps))) / 2.0;
  return 1.0 - (1.0 - base) * w;
}

/// Linear warmup over the first warmup_frac of steps to `peak`, then cosine
/// decay to `floor`. Warmup end hits peak exactly; the last step hits floor
/// exactly.
inline double lr_schedule(std::int64_t step, std::int64_t total_steps,
                          double peak, double floor,
                          double warmup_frac = 0.05) {
  if (step < 0 || step >= total_steps)
    throw ValueError("lr_schedule: step " + std::to_string(step) +
                     " outside [0, " + std::to_string(total_steps) + ")");
  const std::int64_t warmup = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::llround(warmup_frac * static_cast<double>(total_steps))));
  if (step < warmup)
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  const std::int64_t last = total_steps - 1;
  if (last <= warmup) return peak;
  const double t = static_cast<double>(step - warmup) / static_cast<double>(last - warmup);
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(M_PI * t));
}

}  // namespace srl
