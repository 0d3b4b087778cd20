#include "stressor/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "stressor/error.hpp"

namespace stressor {

namespace {

using cplx = std::complex<double>;

// Representative poles (one per conjugate pair) and real poles after the
// bilinear transform, so sections can be assembled without re-pairing.
struct DigitalPoles {
  std::vector<cplx> pairs;
  std::vector<double> reals;
};

DigitalPoles split_poles(const std::vector<cplx>& poles) {
  DigitalPoles out;
  for (const cplx& p : poles) {
    const double tol = 1e-12 * std::max(1.0, std::abs(p));
    if (std::abs(p.imag()) <= tol) {
      out.reals.push_back(p.real());
    } else if (p.imag() > 0) {
      out.pairs.push_back(p);
    }
  }
  std::sort(out.reals.begin(), out.reals.end());
  return out;
}

cplx bilinear(cplx s, double fs2) { return (fs2 + s) / (fs2 - s); }

void check_cutoff(double f, double fs) {
  if (!(f > 0.0) || !(f < fs / 2.0)) {
    std::ostringstream os;
    os << "cutoff " << f << " Hz must lie in (0, " << fs / 2.0 << ") Hz";
    throw Error(ErrorKind::kInvalidSpec, os.str());
  }
}

// Normalises a section to unit magnitude at `omega`.
void normalise(Biquad& bq, double omega) {
  const double mag = std::abs(bq.response(omega));
  bq.b0 /= mag;
  bq.b1 /= mag;
  bq.b2 /= mag;
}

}  // namespace

SignalTrace::SignalTrace(std::vector<double> samples, double sample_rate_hz, double start_time_s,
                         std::string label)
    : samples_(std::move(samples)),
      sample_rate_hz_(sample_rate_hz),
      start_time_s_(start_time_s),
      label_(std::move(label)) {
  if (!(sample_rate_hz_ > 0.0) || !std::isfinite(sample_rate_hz_)) {
    throw Error(ErrorKind::kValidation, "sample rate must be positive and finite");
  }
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (!std::isfinite(samples_[i])) {
      std::ostringstream os;
      os << "trace '" << label_ << "' has a non-finite sample at index " << i;
      throw Error(ErrorKind::kValidation, os.str());
    }
  }
}

std::size_t SignalTrace::index_at(double t) const {
  const double pos = (t - start_time_s_) * sample_rate_hz_;
  if (pos <= 0.0) return 0;
  const double idx = std::ceil(pos - 1e-9);
  return std::min(samples_.size(), static_cast<std::size_t>(idx));
}

std::span<const double> SignalTrace::window(const TimeInterval& w) const {
  const std::size_t b = index_at(w.start_s);
  const std::size_t e = std::max(b, index_at(w.end_s));
  return std::span<const double>(samples_).subspan(b, e - b);
}

SignalTrace SignalTrace::with_validity(std::vector<bool> mask) const {
  if (!mask.empty() && mask.size() != samples_.size()) {
    throw Error(ErrorKind::kShape, "validity mask length differs from trace length");
  }
  SignalTrace out = *this;
  out.validity_ = std::move(mask);
  return out;
}

bool SignalTrace::window_valid(const TimeInterval& w) const {
  if (validity_.empty()) return true;
  const std::size_t b = index_at(w.start_s);
  const std::size_t e = std::max(b, index_at(w.end_s));
  for (std::size_t i = b; i < e; ++i) {
    if (!validity_[i]) return false;
  }
  return true;
}

SignalTrace SignalTrace::with_samples(std::vector<double> samples) const {
  return SignalTrace(std::move(samples), sample_rate_hz_, start_time_s_, label_);
}

SignalTrace SignalTrace::relabeled(std::string label) const {
  SignalTrace out = *this;
  out.label_ = std::move(label);
  return out;
}

IirFilterSpec IirFilterSpec::lowpass(int order, double cutoff_hz) {
  return {FilterKind::kLowpass, order, cutoff_hz, 0.0, 0.0};
}
IirFilterSpec IirFilterSpec::highpass(int order, double cutoff_hz) {
  return {FilterKind::kHighpass, order, cutoff_hz, 0.0, 0.0};
}
IirFilterSpec IirFilterSpec::bandpass(int order, double low_hz, double high_hz) {
  return {FilterKind::kBandpass, order, low_hz, high_hz, 0.0};
}
IirFilterSpec IirFilterSpec::notch(double center_hz, double quality) {
  return {FilterKind::kNotch, 2, center_hz, 0.0, quality};
}

cplx Biquad::response(double omega) const {
  const cplx z1 = std::polar(1.0, -omega);
  const cplx z2 = z1 * z1;
  return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
}

cplx BiquadCascade::response(double freq_hz, double sample_rate_hz) const {
  const double omega = 2.0 * std::numbers::pi * freq_hz / sample_rate_hz;
  cplx h = 1.0;
  for (const Biquad& s : sections) h *= s.response(omega);
  return h;
}

double BiquadCascade::magnitude(double freq_hz, double sample_rate_hz) const {
  return std::abs(response(freq_hz, sample_rate_hz));
}

double BiquadCascade::max_pole_radius() const {
  double r = 0.0;
  for (const Biquad& s : sections) {
    const cplx disc = std::sqrt(cplx(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
    r = std::max({r, std::abs((-s.a1 + disc) / 2.0), std::abs((-s.a1 - disc) / 2.0)});
  }
  return r;
}

BiquadCascade design_butterworth(const IirFilterSpec& spec, double fs) {
  if (spec.kind == FilterKind::kNotch) {
    throw Error(ErrorKind::kInvalidSpec, "notch is not a Butterworth design");
  }
  if (spec.order < 1) throw Error(ErrorKind::kInvalidSpec, "filter order must be positive");
  check_cutoff(spec.cutoff_hz, fs);
  if (spec.kind == FilterKind::kBandpass) {
    check_cutoff(spec.cutoff_high_hz, fs);
    if (!(spec.cutoff_hz < spec.cutoff_high_hz)) {
      throw Error(ErrorKind::kInvalidSpec, "bandpass low cutoff must be below high cutoff");
    }
  }

  const int n = spec.order;
  const double fs2 = 2.0 * fs;
  auto warp = [&](double f) { return fs2 * std::tan(std::numbers::pi * f / fs); };

  // Unit-cutoff analog prototype.
  std::vector<cplx> proto;
  for (int m = -n + 1; m <= n - 1; m += 2) {
    proto.push_back(-std::exp(cplx(0.0, std::numbers::pi * m / (2.0 * n))));
  }

  std::vector<cplx> analog;
  double ref_omega = 0.0;
  double zero_a = -1.0, zero_b = -1.0;  // digital zeros shared by every 2nd-order section
  switch (spec.kind) {
    case FilterKind::kLowpass: {
      const double wc = warp(spec.cutoff_hz);
      for (const cplx& p : proto) analog.push_back(wc * p);
      ref_omega = 0.0;
      break;
    }
    case FilterKind::kHighpass: {
      const double wc = warp(spec.cutoff_hz);
      for (const cplx& p : proto) analog.push_back(wc / p);
      ref_omega = std::numbers::pi;
      zero_a = zero_b = 1.0;
      break;
    }
    case FilterKind::kBandpass: {
      const double w1 = warp(spec.cutoff_hz);
      const double w2 = warp(spec.cutoff_high_hz);
      const double bw = w2 - w1;
      const double w0 = std::sqrt(w1 * w2);
      for (const cplx& p : proto) {
        const cplx half = p * bw / 2.0;
        const cplx root = std::sqrt(half * half - w0 * w0);
        analog.push_back(half + root);
        analog.push_back(half - root);
      }
      ref_omega = 2.0 * std::atan(w0 / fs2);
      zero_a = 1.0;
      zero_b = -1.0;
      break;
    }
    case FilterKind::kNotch:
      break;
  }

  std::vector<cplx> digital;
  digital.reserve(analog.size());
  for (const cplx& s : analog) digital.push_back(bilinear(s, fs2));
  const DigitalPoles poles = split_poles(digital);

  BiquadCascade out;
  out.order = static_cast<int>(digital.size());
  auto zeros_poly = [&](Biquad& bq) {
    bq.b0 = 1.0;
    bq.b1 = -(zero_a + zero_b);
    bq.b2 = zero_a * zero_b;
  };
  for (const cplx& p : poles.pairs) {
    Biquad bq;
    zeros_poly(bq);
    bq.a1 = -2.0 * p.real();
    bq.a2 = std::norm(p);
    normalise(bq, ref_omega);
    out.sections.push_back(bq);
  }
  std::size_t i = 0;
  for (; i + 1 < poles.reals.size(); i += 2) {
    Biquad bq;
    zeros_poly(bq);
    bq.a1 = -(poles.reals[i] + poles.reals[i + 1]);
    bq.a2 = poles.reals[i] * poles.reals[i + 1];
    normalise(bq, ref_omega);
    out.sections.push_back(bq);
  }
  if (i < poles.reals.size()) {
    // Odd lowpass/highpass: a single real pole with one zero.
    const double z = spec.kind == FilterKind::kHighpass ? 1.0 : -1.0;
    Biquad bq;
    bq.b0 = 1.0;
    bq.b1 = -z;
    bq.a1 = -poles.reals[i];
    normalise(bq, ref_omega);
    out.sections.push_back(bq);
  }
  return out;
}

BiquadCascade design_notch(double center_hz, double quality, double fs) {
  check_cutoff(center_hz, fs);
  if (!(quality > 0.0)) throw Error(ErrorKind::kInvalidSpec, "notch quality must be positive");
  const double w0 = 2.0 * std::numbers::pi * center_hz / fs;
  const double beta = std::tan(w0 / quality / 2.0);
  const double gain = 1.0 / (1.0 + beta);
  Biquad bq;
  bq.b0 = gain;
  bq.b1 = -2.0 * gain * std::cos(w0);
  bq.b2 = gain;
  bq.a1 = -2.0 * gain * std::cos(w0);
  bq.a2 = 2.0 * gain - 1.0;
  return BiquadCascade{{bq}, 2};
}

BiquadCascade design_filter(const IirFilterSpec& spec, double fs) {
  if (spec.kind == FilterKind::kNotch) return design_notch(spec.cutoff_hz, spec.quality, fs);
  return design_butterworth(spec, fs);
}

std::vector<double> sosfilt(std::span<const double> x, const BiquadCascade& cascade,
                            bool steady_state_init) {
  std::vector<double> y(x.begin(), x.end());
  if (y.empty()) return y;
  double level = steady_state_init ? x[0] : 0.0;
  for (const Biquad& s : cascade.sections) {
    const double dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    double z1 = (dc - s.b0) * level;
    double z2 = (s.b2 - s.a2 * dc) * level;
    for (double& v : y) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
    level *= dc;
  }
  return y;
}

std::size_t filtfilt_pad_length(const BiquadCascade& cascade) {
  return 3 * static_cast<std::size_t>(std::max(cascade.order, 12));
}

std::vector<double> filtfilt(std::span<const double> x, const BiquadCascade& cascade) {
  const std::size_t pad = filtfilt_pad_length(cascade);
  const std::size_t n = x.size();
  if (n <= pad) {
    std::ostringstream os;
    os << "trace of " << n << " samples is too short for zero-phase filtering (needs > " << pad
       << ")";
    throw Error(ErrorKind::kSignalTooShort, os.str());
  }
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  std::vector<double> fwd = sosfilt(ext, cascade);
  std::reverse(fwd.begin(), fwd.end());
  std::vector<double> bwd = sosfilt(fwd, cascade);
  std::reverse(bwd.begin(), bwd.end());
  return std::vector<double>(bwd.begin() + static_cast<std::ptrdiff_t>(pad),
                             bwd.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

SignalTrace filtfilt(const SignalTrace& trace, const BiquadCascade& cascade) {
  return trace.with_samples(filtfilt(trace.samples(), cascade)).with_validity(trace.validity());
}

SignalTrace remove_powerline(const SignalTrace& trace, double mains_hz) {
  return filtfilt(trace, design_notch(mains_hz, kNotchQuality, trace.sample_rate_hz()));
}

SignalTrace downsample(const SignalTrace& trace, double target_hz) {
  const double fs = trace.sample_rate_hz();
  if (!(target_hz > 0.0) || target_hz > fs) {
    throw Error(ErrorKind::kUnsupportedRatio, "target rate must lie in (0, source rate]");
  }
  const double ratio = fs / target_hz;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * ratio) {
    std::ostringstream os;
    os << "cannot decimate " << fs << " Hz to " << target_hz << " Hz: non-integer ratio";
    throw Error(ErrorKind::kUnsupportedRatio, os.str());
  }
  const auto factor = static_cast<std::size_t>(rounded);
  if (factor == 1) return trace;

  const BiquadCascade aa = design_butterworth(IirFilterSpec::lowpass(8, 0.45 * target_hz), fs);
  const std::vector<double> smooth = filtfilt(trace.samples(), aa);
  std::vector<double> out;
  out.reserve(smooth.size() / factor + 1);
  for (std::size_t i = 0; i < smooth.size(); i += factor) out.push_back(smooth[i]);

  std::vector<bool> mask;
  if (!trace.validity().empty()) {
    for (std::size_t i = 0; i < smooth.size(); i += factor) mask.push_back(trace.validity()[i]);
  }
  return SignalTrace(std::move(out), target_hz, trace.start_time_s(), trace.label())
      .with_validity(std::move(mask));
}

double linear_slope(std::span<const double> values, double dt_s) {
  if (values.size() < 2) {
    throw Error(ErrorKind::kInsufficientData, "slope needs at least two values");
  }
  if (!(dt_s > 0.0)) throw Error(ErrorKind::kValidation, "sample spacing must be positive");
  const double n = static_cast<double>(values.size());
  const double t_mean = (n - 1.0) / 2.0;
  double y_mean = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::kInsufficientData, "non-finite slope input");
    y_mean += v;
  }
  y_mean /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double dt = static_cast<double>(i) - t_mean;
    sxy += dt * (values[i] - y_mean);
    sxx += dt * dt;
  }
  return sxy / sxx / dt_s;
}

SignalTrace fuse_respiration(const SignalTrace& thoracic, const SignalTrace& abdominal) {
  if (thoracic.size() != abdominal.size() ||
      thoracic.sample_rate_hz() != abdominal.sample_rate_hz()) {
    throw Error(ErrorKind::kShape, "thoracic and abdominal traces differ in length or rate");
  }
  std::vector<double> fused(thoracic.size());
  for (std::size_t i = 0; i < fused.size(); ++i) {
    fused[i] = 0.5 * (thoracic.samples()[i] + abdominal.samples()[i]);
  }
  return SignalTrace(std::move(fused), thoracic.sample_rate_hz(), thoracic.start_time_s(),
                     channel::kRspFused);
}

double mean_of(std::span<const double> values) {
  if (values.empty()) return kMissing;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidSpec: return "invalid-spec";
    case ErrorKind::kSignalTooShort: return "signal-too-short";
    case ErrorKind::kUnsupportedRatio: return "unsupported-ratio";
    case ErrorKind::kInsufficientData: return "insufficient-data";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kNoSignal: return "no-signal";
    case ErrorKind::kInvalidInterval: return "invalid-interval";
    case ErrorKind::kConvergence: return "convergence";
    case ErrorKind::kMissingChannel: return "missing-channel";
    case ErrorKind::kInvalidBaseline: return "invalid-baseline";
    case ErrorKind::kUnimputableColumn: return "unimputable-column";
    case ErrorKind::kDegenerateLabels: return "degenerate-labels";
    case ErrorKind::kUndefinedMetric: return "undefined-metric";
    case ErrorKind::kUndefinedTest: return "undefined-test";
    case ErrorKind::kRankDeficiency: return "rank-deficiency";
    case ErrorKind::kInsufficientRecovery: return "insufficient-recovery";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace stressor
