#pragma once

#include <complex>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace stressor {

// Canonical channel names used in session files and trace labels.
namespace channel {
inline constexpr const char* kEcg = "ECG";
inline constexpr const char* kEda = "EDA";
inline constexpr const char* kRspThoracic = "RSP_THORACIC";
inline constexpr const char* kRspAbdominal = "RSP_ABDOMINAL";
inline constexpr const char* kRspFused = "RSP_FUSED";
inline constexpr const char* kSkt = "SKT";
}  // namespace channel

// Missing feature values are NaN throughout the pipeline.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return v != v; }

// Half-open time interval [start_s, end_s) on the session clock.
struct TimeInterval {
  double start_s = 0.0;
  double end_s = 0.0;

  double duration() const { return end_s - start_s; }
  bool contains(double t) const { return t >= start_s && t < end_s; }
  bool operator==(const TimeInterval&) const = default;
};

// Uniformly sampled single-channel time series. Immutable once built.
class SignalTrace {
 public:
  SignalTrace() = default;
  SignalTrace(std::vector<double> samples, double sample_rate_hz, double start_time_s,
              std::string label);

  std::span<const double> samples() const { return samples_; }
  const std::vector<double>& values() const { return samples_; }
  double sample_rate_hz() const { return sample_rate_hz_; }
  double start_time_s() const { return start_time_s_; }
  const std::string& label() const { return label_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  double duration_s() const { return static_cast<double>(samples_.size()) / sample_rate_hz_; }
  double end_time_s() const { return start_time_s_ + duration_s(); }
  double time_at(std::size_t i) const {
    return start_time_s_ + static_cast<double>(i) / sample_rate_hz_;
  }

  // First sample index whose timestamp is >= t, clamped to [0, size()].
  std::size_t index_at(double t) const;
  // Samples whose timestamps fall in `window`.
  std::span<const double> window(const TimeInterval& window) const;

  // Optional validity mask (empty means every sample is valid). Nothing in the
  // library sets it automatically; callers mark artifact spans by hand.
  const std::vector<bool>& validity() const { return validity_; }
  SignalTrace with_validity(std::vector<bool> mask) const;
  bool window_valid(const TimeInterval& window) const;

  SignalTrace with_samples(std::vector<double> samples) const;
  SignalTrace relabeled(std::string label) const;

 private:
  std::vector<double> samples_;
  double sample_rate_hz_ = 1.0;
  double start_time_s_ = 0.0;
  std::string label_;
  std::vector<bool> validity_;
};

enum class FilterKind { kLowpass, kHighpass, kBandpass, kNotch };

struct IirFilterSpec {
  FilterKind kind = FilterKind::kLowpass;
  int order = 1;
  double cutoff_hz = 1.0;       // lowpass/highpass cutoff, bandpass low edge, notch center
  double cutoff_high_hz = 0.0;  // bandpass high edge
  double quality = 30.0;        // notch only

  static IirFilterSpec lowpass(int order, double cutoff_hz);
  static IirFilterSpec highpass(int order, double cutoff_hz);
  static IirFilterSpec bandpass(int order, double low_hz, double high_hz);
  static IirFilterSpec notch(double center_hz, double quality);
};

// Second-order section, a0 normalised to 1. First-order sections keep b2 = a2 = 0.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;

  std::complex<double> response(double omega) const;
};

struct BiquadCascade {
  std::vector<Biquad> sections;
  int order = 0;  // total number of poles

  std::complex<double> response(double freq_hz, double sample_rate_hz) const;
  double magnitude(double freq_hz, double sample_rate_hz) const;
  // Largest pole radius; < 1 for a stable design.
  double max_pole_radius() const;
};

// Bilinear-transform Butterworth design (prewarped cutoffs). Bandpass designs
// double the prototype order, as is conventional.
BiquadCascade design_butterworth(const IirFilterSpec& spec, double sample_rate_hz);
BiquadCascade design_notch(double center_hz, double quality, double sample_rate_hz);
BiquadCascade design_filter(const IirFilterSpec& spec, double sample_rate_hz);

// Single forward pass with steady-state initial conditions scaled by x[0].
std::vector<double> sosfilt(std::span<const double> x, const BiquadCascade& cascade,
                            bool steady_state_init = true);

// Number of reflected samples padded on each side by filtfilt.
std::size_t filtfilt_pad_length(const BiquadCascade& cascade);

std::vector<double> filtfilt(std::span<const double> x, const BiquadCascade& cascade);
SignalTrace filtfilt(const SignalTrace& trace, const BiquadCascade& cascade);

inline constexpr double kDefaultMainsHz = 60.0;
inline constexpr double kNotchQuality = 30.0;

SignalTrace remove_powerline(const SignalTrace& trace, double mains_hz = kDefaultMainsHz);

// Zero-phase 8th-order Butterworth anti-alias at 0.45 * target, then decimation.
SignalTrace downsample(const SignalTrace& trace, double target_hz);

// Ordinary-least-squares slope of values against time (units per second).
double linear_slope(std::span<const double> values, double dt_s);

SignalTrace fuse_respiration(const SignalTrace& thoracic, const SignalTrace& abdominal);

double mean_of(std::span<const double> values);

}  // namespace stressor
