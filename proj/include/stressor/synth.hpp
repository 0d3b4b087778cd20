#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "stressor/session.hpp"

namespace stressor {

enum class RecoveryMode { kDecrease, kIncrease, kStable };
std::string_view to_string(RecoveryMode mode);

struct PhaseDurations {
  double baseline_video_s = 60.0;
  double practice_s = 60.0;
  double free_driving_s = 300.0;
  double stressor_driving_s = 240.0;
  double recovery_s = 120.0;

  double total() const {
    return baseline_video_s + practice_s + free_driving_s + stressor_driving_s + recovery_s;
  }
};

// Physiological responses at latent stress 1 relative to stress 0.
struct EffectSizes {
  double hr_bpm = 18.0;
  double scr_rate_per_min = 10.0;
  double scl_us = 1.5;
  double skt_slope_c_per_s = -0.004;
  double rsp_period_s = -1.6;
  double rsp_depth_frac = -0.3;
  double rsa_damping = 0.6;  // fraction of RSA amplitude removed

  EffectSizes scaled(double k) const;
};

struct BehaviorCouplings {
  double speed = -0.372;          // km/h per unit stress
  double steering_std = 0.686;    // degrees per unit stress
  double throttle_rate = 0.0;     // change in press probability
  double brake_rate = 0.1;
};

struct NoiseLevels {
  double ecg_mv = 0.03;
  double eda_us = 0.005;
  double rsp = 0.02;
  double skt_c = 0.01;
  double mains_amplitude = 0.05;
  double speed_kmh = 2.0;
};

struct SynthConfig {
  int n_subjects = 31;
  std::vector<SessionKind> session_kinds{SessionKind::kImpatience, SessionKind::kSurprise,
                                         SessionKind::kIrritation};
  PhaseDurations phases;
  EffectSizes effects;
  // Multiplier on every physiological effect, per session kind (M, S, I order).
  std::array<double, 3> session_effect_scale{1.0, 1.0, 1.0};
  BehaviorCouplings couplings;
  NoiseLevels noise;
  double subject_sigma = 1.0;  // scales between-subject baseline offsets
  double stress_margin = 0.45;  // stressor-phase rise of the latent level
  double raw_rate_hz = 2000.0;
  double vehicle_rate_hz = 50.0;
  double mains_hz = 60.0;
  double bateman_tau0_s = 2.0;
  double bateman_tau1_s = 0.7;
  bool include_vehicle = true;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SynthConfig& config);
// Keys absent from `j` keep their defaults; unknown keys are rejected.
SynthConfig synth_config_from_json(const nlohmann::json& j);

struct BreathTruth {
  double onset_s = 0.0;
  double peak_s = 0.0;
  double end_s = 0.0;
};

struct GroundTruth {
  std::string session_key;
  std::vector<double> stress;  // latent level at 1 Hz, sample k covers [k, k+1)
  std::vector<double> beat_times_s;
  std::vector<double> scr_times_s;
  std::vector<double> scr_amplitudes_us;
  std::vector<BreathTruth> breaths;
  RecoveryMode recovery_mode = RecoveryMode::kStable;

  // Mean latent stress over [start, end).
  double mean_stress(double start_s, double end_s) const;
};

nlohmann::json to_json(const GroundTruth& truth);
GroundTruth ground_truth_from_json(const nlohmann::json& j);

// Peak-normalised biexponential impulse response at time t >= 0.
double bateman_kernel(double t_s, double tau0_s, double tau1_s);

// Stressor scenarios by session kind, in presentation order.
const std::vector<std::string>& stressor_event_names(SessionKind kind);

struct SynthSession {
  Session session;
  GroundTruth truth;
};

std::string synth_subject_id(int subject_index);
SynthSession generate_session(const SynthConfig& config, int subject_index, SessionKind kind);
std::vector<SynthSession> generate_cohort(const SynthConfig& config, int jobs = 1);

// Deterministic seed mixing (splitmix64 over the inputs).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

}  // namespace stressor
