#include "stressor/session.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stressor/error.hpp"

namespace stressor {

std::string_view to_string(SessionKind kind) {
  switch (kind) {
    case SessionKind::kImpatience: return "Impatience";
    case SessionKind::kSurprise: return "Surprise";
    case SessionKind::kIrritation: return "Irritation";
  }
  return "?";
}

char session_letter(SessionKind kind) {
  switch (kind) {
    case SessionKind::kImpatience: return 'M';
    case SessionKind::kSurprise: return 'S';
    case SessionKind::kIrritation: return 'I';
  }
  return '?';
}

SessionKind parse_session_kind(std::string_view text) {
  if (text == "Impatience" || text == "M") return SessionKind::kImpatience;
  if (text == "Surprise" || text == "S") return SessionKind::kSurprise;
  if (text == "Irritation" || text == "I") return SessionKind::kIrritation;
  throw Error(ErrorKind::kParse, "unknown session kind '" + std::string(text) + "'");
}

void VehicleTelemetry::validate() const {
  const double fs = speed.sample_rate_hz();
  for (const SignalTrace* t : {&speed, &steering_angle, &throttle, &brake}) {
    if (t->sample_rate_hz() != fs || t->size() != speed.size()) {
      throw Error(ErrorKind::kShape, "vehicle channels must share one rate and length");
    }
  }
  for (const SignalTrace* t : {&throttle, &brake}) {
    for (double v : t->samples()) {
      if (v < 0.0 || v > 1.0) {
        throw Error(ErrorKind::kValidation, "pedal values must lie in [0, 1]");
      }
    }
  }
}

std::vector<std::pair<std::string, TimeInterval>> Phases::named() const {
  std::vector<std::pair<std::string, TimeInterval>> out;
  if (baseline_video) out.emplace_back("baseline_video", *baseline_video);
  if (practice) out.emplace_back("practice", *practice);
  if (free_driving) out.emplace_back("free_driving", *free_driving);
  if (stressor_driving) out.emplace_back("stressor_driving", *stressor_driving);
  if (recovery) out.emplace_back("recovery", *recovery);
  return out;
}

void Phases::set(const std::string& name, const TimeInterval& interval) {
  if (name == "baseline_video") baseline_video = interval;
  else if (name == "practice") practice = interval;
  else if (name == "free_driving") free_driving = interval;
  else if (name == "stressor_driving") stressor_driving = interval;
  else if (name == "recovery") recovery = interval;
  else throw Error(ErrorKind::kValidation, "unknown phase '" + name + "'");
}

std::string Session::key() const { return subject_id + "/" + session_letter(kind); }

const SignalTrace& Session::trace(const std::string& channel) const {
  const auto it = traces.find(channel);
  if (it == traces.end()) {
    throw Error(ErrorKind::kMissingChannel,
                "session " + key() + " has no " + channel + " channel");
  }
  return it->second;
}

double Session::duration_s() const {
  double end = std::numeric_limits<double>::infinity();
  for (const auto& [name, t] : traces) end = std::min(end, t.end_time_s());
  if (std::isinf(end) && vehicle) end = vehicle->speed.end_time_s();
  return std::isinf(end) ? 0.0 : end;
}

void Session::validate() const {
  const auto phases_named = phases.named();
  for (std::size_t i = 0; i < phases_named.size(); ++i) {
    const auto& [name, iv] = phases_named[i];
    if (!(iv.end_s > iv.start_s)) {
      throw Error(ErrorKind::kValidation, "phase " + name + " of " + key() + " is empty");
    }
    if (i > 0 && iv.start_s < phases_named[i - 1].second.end_s) {
      throw Error(ErrorKind::kValidation,
                  "phases of " + key() + " overlap or are out of order at " + name);
    }
  }
  for (const StressorEvent& e : events) {
    const bool in_stress = phases.stressor_driving && phases.stressor_driving->contains(e.onset_s);
    const bool in_recovery = phases.recovery && phases.recovery->contains(e.onset_s);
    if (!in_stress && !in_recovery) {
      throw Error(ErrorKind::kValidation,
                  "event " + e.name + " of " + key() + " lies outside the stressor and recovery phases");
    }
  }
  if (vehicle) vehicle->validate();
}

namespace {

SignalTrace to_target_rate(const SignalTrace& t, double target_hz) {
  if (std::abs(t.sample_rate_hz() - target_hz) < 1e-9) return t;
  return downsample(t, target_hz);
}

// Plain decimation without an anti-alias stage, for channels that must stay
// unfiltered.
SignalTrace pick_every(const SignalTrace& t, double target_hz) {
  const double ratio = t.sample_rate_hz() / target_hz;
  const double r = std::round(ratio);
  if (std::abs(ratio - r) > 1e-9 || r < 1.0) {
    throw Error(ErrorKind::kUnsupportedRatio, "sample rate is not an integer multiple of the target");
  }
  const auto step = static_cast<std::size_t>(r);
  std::vector<double> out;
  out.reserve(t.size() / step + 1);
  for (std::size_t i = 0; i < t.size(); i += step) out.push_back(t.samples()[i]);
  return SignalTrace(std::move(out), target_hz, t.start_time_s(), t.label());
}

}  // namespace

Session preprocess_session(const Session& raw, const PreprocessOptions& options) {
  Session out;
  out.subject_id = raw.subject_id;
  out.kind = raw.kind;
  out.vehicle = raw.vehicle;
  out.phases = raw.phases;
  out.events = raw.events;

  const SignalTrace& ecg = raw.trace(channel::kEcg);
  const SignalTrace& eda = raw.trace(channel::kEda);
  const SignalTrace& thor = raw.trace(channel::kRspThoracic);
  const SignalTrace& abdo = raw.trace(channel::kRspAbdominal);
  const SignalTrace& skt = raw.trace(channel::kSkt);

  {
    const double fs = ecg.sample_rate_hz();
    SignalTrace f = filtfilt(ecg, design_butterworth(IirFilterSpec::highpass(5, 0.5), fs));
    f = remove_powerline(f, options.mains_hz);
    out.traces.emplace(channel::kEcg, to_target_rate(f, options.target_hz));
  }
  {
    const double fs = eda.sample_rate_hz();
    SignalTrace f = filtfilt(eda, design_butterworth(IirFilterSpec::lowpass(4, 3.0), fs));
    f = remove_powerline(f, options.mains_hz);
    out.traces.emplace(channel::kEda, to_target_rate(f, options.target_hz));
  }
  {
    auto belt = [&](const SignalTrace& t) {
      const double fs = t.sample_rate_hz();
      SignalTrace f = filtfilt(t, design_butterworth(IirFilterSpec::bandpass(2, 0.05, 3.0), fs));
      return remove_powerline(f, options.mains_hz);
    };
    const SignalTrace fused = fuse_respiration(belt(thor), belt(abdo));
    out.traces.emplace(channel::kRspFused, to_target_rate(fused, options.target_hz));
  }
  out.traces.emplace(channel::kSkt, pick_every(skt, options.target_hz));
  return out;
}

}  // namespace stressor
