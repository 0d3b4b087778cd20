#pragma once

#include <vector>

#include "stressor/respiration.hpp"
#include "stressor/signal.hpp"

namespace stressor {

struct RPeakSeries {
  std::vector<double> peak_times_s;  // strictly increasing
  double source_rate_hz = 0.0;

  std::size_t size() const { return peak_times_s.size(); }
};

struct IbiSeries {
  std::vector<double> onset_times_s;
  std::vector<double> ibi_s;

  std::size_t size() const { return ibi_s.size(); }
};

inline constexpr double kMinIbiS = 0.3;
inline constexpr double kMaxIbiS = 2.0;
inline constexpr double kRefractoryS = 0.25;

// Pan-Tompkins style detector: 5-15 Hz band-pass, derivative, squaring,
// 150 ms moving integration and an adaptive threshold of half the running
// median of the last 8 accepted integrated peak heights.
RPeakSeries detect_r_peaks(const SignalTrace& ecg);

// Successive differences, keeping only intervals inside [0.3, 2.0] s.
IbiSeries ibi_series(const RPeakSeries& peaks);

// Peaks in [start, end) per minute; missing when fewer than two peaks.
double heart_rate(const RPeakSeries& peaks, const TimeInterval& window);

// Peak-to-trough RSA: mean over breath cycles inside `window` of
// (longest - shortest) IBI whose onset falls in the cycle.
double rsa_p2t(const IbiSeries& ibis, const BreathCycleSeries& cycles, const TimeInterval& window);

}  // namespace stressor
