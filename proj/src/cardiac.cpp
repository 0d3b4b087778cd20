#include "stressor/cardiac.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "stressor/error.hpp"

namespace stressor {

namespace {

struct Candidate {
  std::size_t index;
  double height;
};

double median_of(std::deque<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> centered_moving_sum(const std::vector<double>& x, std::size_t width) {
  const std::size_t half = width / 2;
  std::vector<double> prefix(x.size() + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) prefix[i + 1] = prefix[i] + x[i];
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t b = i >= half ? i - half : 0;
    const std::size_t e = std::min(x.size(), i + half + 1);
    out[i] = (prefix[e] - prefix[b]) / static_cast<double>(width);
  }
  return out;
}

}  // namespace

RPeakSeries detect_r_peaks(const SignalTrace& ecg) {
  const double fs = ecg.sample_rate_hz();
  if (ecg.duration_s() < 5.0) {
    throw Error(ErrorKind::kSignalTooShort, "R-peak detection needs at least 5 s of ECG");
  }
  const auto x = ecg.samples();
  const double mu = mean_of(x);
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  if (var < 1e-12) throw Error(ErrorKind::kNoSignal, "ECG trace is flat");

  const std::vector<double> bp =
      filtfilt(x, design_butterworth(IirFilterSpec::bandpass(2, 5.0, 15.0), fs));
  const std::size_t n = bp.size();
  std::vector<double> energy(n, 0.0);
  for (std::size_t i = 2; i + 2 < n; ++i) {
    const double d = (2.0 * bp[i + 2] + bp[i + 1] - bp[i - 1] - 2.0 * bp[i - 2]) * fs / 8.0;
    energy[i] = d * d;
  }
  const auto width = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.15 * fs)));
  const std::vector<double> mwi = centered_moving_sum(energy, width);

  // Dominant local maxima of the integrated energy, one per refractory span.
  const auto refractory = static_cast<std::size_t>(std::lround(kRefractoryS * fs));
  std::vector<Candidate> cands;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (!(mwi[i] > mwi[i - 1] && mwi[i] >= mwi[i + 1])) continue;
    if (!cands.empty() && i - cands.back().index < refractory) {
      if (mwi[i] > cands.back().height) cands.back() = {i, mwi[i]};
      continue;
    }
    cands.push_back({i, mwi[i]});
  }

  const auto seed_end = std::min(n, static_cast<std::size_t>(2.0 * fs));
  const double seed = *std::max_element(mwi.begin(), mwi.begin() + static_cast<std::ptrdiff_t>(seed_end));
  std::deque<double> heights{seed};
  std::deque<double> recent_rr;
  std::vector<std::size_t> accepted;

  auto push_height = [&](double h) {
    heights.push_back(h);
    if (heights.size() > 8) heights.pop_front();
  };
  auto push_rr = [&](double rr) {
    recent_rr.push_back(rr);
    if (recent_rr.size() > 8) recent_rr.pop_front();
  };

  std::size_t ci_last = 0;  // candidates before this index have been examined
  for (std::size_t ci = 0; ci < cands.size(); ++ci) {
    const Candidate& c = cands[ci];
    const double threshold = 0.5 * median_of(heights);
    if (c.height < threshold) continue;
    if (!accepted.empty() && c.index - accepted.back() < refractory) continue;

    // Search back for a missed beat when the gap is unusually long.
    if (!accepted.empty()) {
      double expected = kMaxIbiS;
      if (!recent_rr.empty()) {
        double s = 0.0;
        for (double r : recent_rr) s += r;
        expected = 1.66 * s / static_cast<double>(recent_rr.size());
      }
      const double gap = static_cast<double>(c.index - accepted.back()) / fs;
      if (gap > expected) {
        std::size_t best = cands.size();
        for (std::size_t j = ci_last; j < ci; ++j) {
          const Candidate& m = cands[j];
          if (m.index <= accepted.back() + refractory || m.index + refractory >= c.index) continue;
          if (m.height < 0.5 * threshold) continue;
          if (best == cands.size() || m.height > cands[best].height) best = j;
        }
        if (best != cands.size()) {
          push_rr(static_cast<double>(cands[best].index - accepted.back()) / fs);
          accepted.push_back(cands[best].index);
          push_height(cands[best].height);
        }
      }
      push_rr(static_cast<double>(c.index - accepted.back()) / fs);
    }
    accepted.push_back(c.index);
    push_height(c.height);
    ci_last = ci + 1;
  }

  // Place each beat on the ECG maximum near the integrated-energy peak.
  const auto reach = static_cast<std::size_t>(std::lround(0.075 * fs));
  std::vector<std::size_t> refined;
  refined.reserve(accepted.size());
  for (std::size_t idx : accepted) {
    const std::size_t b = idx >= reach ? idx - reach : 0;
    const std::size_t e = std::min(n, idx + reach + 1);
    std::size_t best = b;
    for (std::size_t i = b; i < e; ++i) {
      if (x[i] > x[best]) best = i;
    }
    refined.push_back(best);
  }
  std::sort(refined.begin(), refined.end());

  // Beats closer than the shortest plausible interval: keep the taller one.
  const auto min_gap = static_cast<std::size_t>(std::ceil(kMinIbiS * fs));
  std::vector<std::size_t> kept;
  for (std::size_t idx : refined) {
    if (!kept.empty() && idx - kept.back() < min_gap) {
      if (x[idx] > x[kept.back()]) kept.back() = idx;
      continue;
    }
    kept.push_back(idx);
  }

  RPeakSeries out;
  out.source_rate_hz = fs;
  out.peak_times_s.reserve(kept.size());
  for (std::size_t idx : kept) out.peak_times_s.push_back(ecg.time_at(idx));
  return out;
}

IbiSeries ibi_series(const RPeakSeries& peaks) {
  IbiSeries out;
  for (std::size_t i = 0; i + 1 < peaks.peak_times_s.size(); ++i) {
    const double ibi = peaks.peak_times_s[i + 1] - peaks.peak_times_s[i];
    if (ibi < kMinIbiS || ibi > kMaxIbiS) continue;
    out.onset_times_s.push_back(peaks.peak_times_s[i]);
    out.ibi_s.push_back(ibi);
  }
  return out;
}

double heart_rate(const RPeakSeries& peaks, const TimeInterval& window) {
  const double dur = window.duration();
  if (!(dur > 0.0)) throw Error(ErrorKind::kInvalidInterval, "heart-rate window is empty");
  const auto& t = peaks.peak_times_s;
  const auto lo = std::lower_bound(t.begin(), t.end(), window.start_s);
  const auto hi = std::lower_bound(t.begin(), t.end(), window.end_s);
  const auto count = std::distance(lo, hi);
  if (count < 2) return kMissing;
  return static_cast<double>(count) / (dur / 60.0);
}

double rsa_p2t(const IbiSeries& ibis, const BreathCycleSeries& cycles, const TimeInterval& window) {
  const auto& onset = ibis.onset_times_s;
  double sum = 0.0;
  int used = 0;
  for (const BreathCycle& c : cycles.cycles) {
    if (c.onset_s < window.start_s || c.end_s > window.end_s) continue;
    const auto lo = std::lower_bound(onset.begin(), onset.end(), c.onset_s) - onset.begin();
    const auto hi = std::lower_bound(onset.begin(), onset.end(), c.end_s) - onset.begin();
    if (hi - lo < 3) continue;
    const auto [mn, mx] = std::minmax_element(ibis.ibi_s.begin() + lo, ibis.ibi_s.begin() + hi);
    sum += *mx - *mn;
    ++used;
  }
  return used == 0 ? kMissing : sum / used;
}

}  // namespace stressor
