#include "stressor/respiration.hpp"

#include <algorithm>
#include <cmath>

#include "stressor/error.hpp"

namespace stressor {

namespace {

struct Extremum {
  std::size_t index;
  bool is_peak;
  double value;
};

std::vector<double> moving_average(std::span<const double> x, std::size_t width) {
  const std::size_t half = width / 2;
  std::vector<double> prefix(x.size() + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) prefix[i + 1] = prefix[i] + x[i];
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t b = i >= half ? i - half : 0;
    const std::size_t e = std::min(x.size(), i + half + 1);
    out[i] = (prefix[e] - prefix[b]) / static_cast<double>(e - b);
  }
  return out;
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Collapses runs of same-type extrema, keeping the most extreme one.
std::vector<Extremum> enforce_alternation(const std::vector<Extremum>& in) {
  std::vector<Extremum> out;
  for (const Extremum& e : in) {
    if (!out.empty() && out.back().is_peak == e.is_peak) {
      const bool better = e.is_peak ? e.value > out.back().value : e.value < out.back().value;
      if (better) out.back() = e;
    } else {
      out.push_back(e);
    }
  }
  return out;
}

}  // namespace

BreathCycleSeries detect_breath_cycles(const SignalTrace& rsp) {
  const auto x = rsp.samples();
  const double fs = rsp.sample_rate_hz();
  if (x.size() < 3) throw Error(ErrorKind::kNoSignal, "respiration trace is empty");
  const double mean = mean_of(x);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  if (var <= 1e-18 * std::max(1.0, mean * mean)) {
    throw Error(ErrorKind::kNoSignal, "respiration trace is flat");
  }

  const auto width =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(kBreathSmoothingS * fs)) | 1);
  const std::vector<double> smooth = moving_average(x, width);

  std::vector<Extremum> ext;
  int prev_sign = 0;
  for (std::size_t i = 1; i < smooth.size(); ++i) {
    const double d = smooth[i] - smooth[i - 1];
    const int sign = d > 0 ? 1 : (d < 0 ? -1 : 0);
    if (sign == 0) continue;
    if (prev_sign != 0 && sign != prev_sign) {
      ext.push_back({i - 1, prev_sign > 0, smooth[i - 1]});
    }
    prev_sign = sign;
  }
  ext = enforce_alternation(ext);

  // Drop the weakest adjacent trough/peak pairs until every swing is large
  // relative to the overall breathing excursion.
  const double spread = percentile(std::vector<double>(smooth.begin(), smooth.end()), 0.95) -
                        percentile(std::vector<double>(smooth.begin(), smooth.end()), 0.05);
  const double min_swing = 0.15 * spread;
  while (ext.size() >= 2) {
    std::size_t weakest = 0;
    double weakest_swing = std::abs(ext[1].value - ext[0].value);
    for (std::size_t i = 1; i + 1 < ext.size(); ++i) {
      const double swing = std::abs(ext[i + 1].value - ext[i].value);
      if (swing < weakest_swing) {
        weakest_swing = swing;
        weakest = i;
      }
    }
    if (weakest_swing >= min_swing) break;
    ext.erase(ext.begin() + static_cast<std::ptrdiff_t>(weakest),
              ext.begin() + static_cast<std::ptrdiff_t>(weakest + 2));
    ext = enforce_alternation(ext);
  }

  // Re-locate each extremum on the unsmoothed trace.
  const auto reach = static_cast<std::size_t>(std::lround(0.25 * fs));
  for (Extremum& e : ext) {
    const std::size_t b = e.index >= reach ? e.index - reach : 0;
    const std::size_t end = std::min(x.size(), e.index + reach + 1);
    std::size_t best = e.index;
    for (std::size_t i = b; i < end; ++i) {
      if (e.is_peak ? x[i] > x[best] : x[i] < x[best]) best = i;
    }
    e.index = best;
    e.value = x[best];
  }

  BreathCycleSeries out;
  for (std::size_t i = 0; i + 2 < ext.size(); ++i) {
    if (ext[i].is_peak) continue;
    const Extremum& onset = ext[i];
    const Extremum& peak = ext[i + 1];
    const Extremum& next = ext[i + 2];
    BreathCycle c;
    c.onset_s = rsp.time_at(onset.index);
    c.peak_s = rsp.time_at(peak.index);
    c.end_s = rsp.time_at(next.index);
    c.depth = peak.value - onset.value;
    const double period = c.period_s();
    if (period < kMinBreathPeriodS || period > kMaxBreathPeriodS || !(c.depth > 0.0)) continue;
    out.cycles.push_back(c);
  }
  return out;
}

RspFeatures rsp_features(const BreathCycleSeries& cycles, const TimeInterval& window) {
  double period_sum = 0.0, depth_sum = 0.0;
  int count = 0;
  for (const BreathCycle& c : cycles.cycles) {
    if (c.onset_s < window.start_s || c.end_s > window.end_s) continue;
    period_sum += c.period_s();
    depth_sum += c.depth;
    ++count;
  }
  RspFeatures f;
  if (count == 0) return f;
  f.period_s = period_sum / count;
  f.depth = depth_sum / count;
  f.rvt = f.depth / f.period_s;
  return f;
}

}  // namespace stressor
