#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

namespace drsfi {

// zero_outside: f(x) = x on [0, T], 0 elsewhere.
// clamp:        f(x) = 0 below 0, x on [0, T], T above T.
enum class ClipMode { zero_outside, clamp };

struct ClipRule {
  ClipMode mode = ClipMode::clamp;
  float threshold = 6.0f;
  // Symmetric pre-clamp to [-range, range], applied before the one-sided rule.
  std::optional<float> range = 6.0f;
};

// NaN compares out of range under both rules and maps to 0.
inline float clip_value(float x, const ClipRule& rule) noexcept {
  if (std::isnan(x)) return 0.0f;
  if (rule.range) x = std::clamp(x, -*rule.range, *rule.range);
  switch (rule.mode) {
    case ClipMode::zero_outside:
      return (x >= 0.0f && x <= rule.threshold) ? x : 0.0f;
    case ClipMode::clamp:
      if (x < 0.0f) return 0.0f;
      return x > rule.threshold ? rule.threshold : x;
  }
  return 0.0f;
}

}  // namespace drsfi
