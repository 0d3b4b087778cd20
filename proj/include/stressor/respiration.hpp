#pragma once

#include <vector>

#include "stressor/signal.hpp"

namespace stressor {

// One breath: inhale onset (trough), peak, and the next onset.
struct BreathCycle {
  double onset_s = 0.0;
  double peak_s = 0.0;
  double end_s = 0.0;
  double depth = 0.0;  // peak value minus onset trough value

  double period_s() const { return end_s - onset_s; }
};

struct BreathCycleSeries {
  std::vector<BreathCycle> cycles;  // ordered by onset, gated to [1, 20] s

  std::size_t size() const { return cycles.size(); }
};

inline constexpr double kMinBreathPeriodS = 1.0;
inline constexpr double kMaxBreathPeriodS = 20.0;
inline constexpr double kBreathSmoothingS = 0.5;

// Trough/peak detection on a fused, band-passed respiration trace.
BreathCycleSeries detect_breath_cycles(const SignalTrace& rsp);

struct RspFeatures {
  double period_s = kMissing;
  double depth = kMissing;
  double rvt = kMissing;  // mean depth / mean period
};

// Aggregates the cycles lying wholly inside `window`.
RspFeatures rsp_features(const BreathCycleSeries& cycles, const TimeInterval& window);

}  // namespace stressor
