#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stressor/signal.hpp"

namespace stressor {

enum class SessionKind { kImpatience, kSurprise, kIrritation };

std::string_view to_string(SessionKind kind);
// Single-letter code used in session keys: M (impatience), S, I.
char session_letter(SessionKind kind);
SessionKind parse_session_kind(std::string_view text);

struct VehicleTelemetry {
  SignalTrace speed;           // km/h
  SignalTrace steering_angle;  // degrees
  SignalTrace throttle;        // 0..1
  SignalTrace brake;           // 0..1

  void validate() const;
};

struct Phases {
  std::optional<TimeInterval> baseline_video;
  std::optional<TimeInterval> practice;
  std::optional<TimeInterval> free_driving;
  std::optional<TimeInterval> stressor_driving;
  std::optional<TimeInterval> recovery;

  // Named, present phases in chronological field order.
  std::vector<std::pair<std::string, TimeInterval>> named() const;
  void set(const std::string& name, const TimeInterval& interval);
};

struct StressorEvent {
  std::string name;
  double onset_s = 0.0;
};

struct Session {
  std::string subject_id;
  SessionKind kind = SessionKind::kImpatience;
  std::map<std::string, SignalTrace> traces;
  std::optional<VehicleTelemetry> vehicle;
  Phases phases;
  std::vector<StressorEvent> events;

  // "<subject>/<letter>", unique within a dataset.
  std::string key() const;
  const SignalTrace& trace(const std::string& channel) const;
  bool has_trace(const std::string& channel) const { return traces.count(channel) > 0; }
  // Shortest physiological trace duration (the session clock starts at 0).
  double duration_s() const;
  void validate() const;
};

struct PreprocessOptions {
  double mains_hz = kDefaultMainsHz;
  double target_hz = 250.0;
};

// Raw acquisition-rate session -> filtered, fused, 250 Hz session:
//   ECG: 5th-order 0.5 Hz high-pass, notch, decimate
//   EDA: 4th-order 3 Hz low-pass, notch, decimate
//   RSP: 2nd-order 0.05-3 Hz band-pass per belt, notch, fuse, decimate
//   SKT: decimation only (no filtering in the acquisition band)
Session preprocess_session(const Session& raw, const PreprocessOptions& options = {});

}  // namespace stressor
