#include "stressor/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "stressor/error.hpp"
#include "stressor/parallel.hpp"

namespace stressor {

namespace {

constexpr double kSlowRateHz = 10.0;  // grid for the latent and slowly varying processes
constexpr double kBaselineStress = 0.1;
constexpr double kEventBump = 0.25;
constexpr double kEventRiseS = 15.0;
constexpr double kEventDecayS = 25.0;
constexpr double kEventCumulative = 0.05;
constexpr double kStressRampS = 20.0;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

int kind_index(SessionKind k) {
  switch (k) {
    case SessionKind::kImpatience: return 0;
    case SessionKind::kSurprise: return 1;
    case SessionKind::kIrritation: return 2;
  }
  return 0;
}

// Ornstein-Uhlenbeck process sampled on a fixed step with stationary sd `sigma`.
class OuProcess {
 public:
  OuProcess(double tau_s, double dt_s) : a_(std::exp(-dt_s / tau_s)), b_(std::sqrt(1.0 - a_ * a_)) {}
  double step(std::mt19937_64& rng, double sigma) {
    x_ = a_ * x_ + b_ * norm_(rng);
    return sigma * x_;
  }
  void start(std::mt19937_64& rng) { x_ = norm_(rng); }

 private:
  double a_, b_;
  double x_ = 0.0;
  std::normal_distribution<double> norm_;
};

std::vector<double> ou_series(std::size_t n, double tau_s, double dt_s, double sigma, std::mt19937_64& rng) {
  OuProcess p(tau_s, dt_s);
  p.start(rng);
  std::vector<double> out(n);
  for (auto& v : out) v = p.step(rng, sigma);
  return out;
}

// Linear interpolation of a slow-grid series at time t.
double slow_at(const std::vector<double>& s, double t) {
  const double pos = t * kSlowRateHz;
  if (pos <= 0.0) return s.front();
  const auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= s.size()) return s.back();
  const double f = pos - static_cast<double>(i);
  return s[i] + f * (s[i + 1] - s[i]);
}

struct Timeline {
  TimeInterval video, practice, free, stressor, recovery;
};

Timeline make_timeline(const PhaseDurations& d) {
  Timeline tl;
  double t = 0.0;
  auto next = [&](double dur) {
    TimeInterval iv{t, t + dur};
    t += dur;
    return iv;
  };
  tl.video = next(d.baseline_video_s);
  tl.practice = next(d.practice_s);
  tl.free = next(d.free_driving_s);
  tl.stressor = next(d.stressor_driving_s);
  tl.recovery = next(d.recovery_s);
  return tl;
}

double event_bump(double dt) {
  if (dt < 0.0) return 0.0;
  if (dt < kEventRiseS) return kEventBump * dt / kEventRiseS;
  return kEventBump * std::exp(-(dt - kEventRiseS) / kEventDecayS);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
}

std::string_view to_string(RecoveryMode mode) {
  switch (mode) {
    case RecoveryMode::kDecrease: return "Decrease";
    case RecoveryMode::kIncrease: return "Increase";
    case RecoveryMode::kStable: return "Stable";
  }
  return "?";
}

EffectSizes EffectSizes::scaled(double k) const {
  EffectSizes e = *this;
  e.hr_bpm *= k;
  e.scr_rate_per_min *= k;
  e.scl_us *= k;
  e.skt_slope_c_per_s *= k;
  e.rsp_period_s *= k;
  e.rsp_depth_frac *= k;
  e.rsa_damping *= k;
  return e;
}

void SynthConfig::validate() const {
  std::vector<std::string> bad;
  if (n_subjects < 1) bad.push_back("n_subjects");
  if (session_kinds.empty()) bad.push_back("session_kinds");
  for (double d : {phases.baseline_video_s, phases.practice_s, phases.free_driving_s,
                   phases.stressor_driving_s, phases.recovery_s}) {
    if (!(d > 0.0) || !std::isfinite(d)) {
      bad.push_back("phases");
      break;
    }
  }
  for (double e : {effects.hr_bpm, effects.scr_rate_per_min, effects.scl_us, effects.skt_slope_c_per_s,
                   effects.rsp_period_s, effects.rsp_depth_frac, effects.rsa_damping}) {
    if (!std::isfinite(e)) {
      bad.push_back("effects");
      break;
    }
  }
  if (!(effects.rsa_damping >= 0.0 && effects.rsa_damping <= 1.0)) bad.push_back("effects.rsa_damping");
  if (!(effects.rsp_depth_frac > -1.0)) bad.push_back("effects.rsp_depth_frac");
  for (double s : session_effect_scale) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      bad.push_back("session_effect_scale");
      break;
    }
  }
  if (!(subject_sigma >= 0.0)) bad.push_back("subject_sigma");
  if (!(stress_margin >= 0.0 && stress_margin <= 0.9)) bad.push_back("stress_margin");
  if (!(raw_rate_hz >= 250.0)) bad.push_back("raw_rate_hz");
  if (!(vehicle_rate_hz >= 10.0)) bad.push_back("vehicle_rate_hz");
  if (!(mains_hz > 0.0 && mains_hz < raw_rate_hz / 2.0)) bad.push_back("mains_hz");
  if (!(bateman_tau0_s > bateman_tau1_s && bateman_tau1_s > 0.0)) bad.push_back("bateman_tau");
  if (!(noise.ecg_mv >= 0 && noise.eda_us >= 0 && noise.rsp >= 0 && noise.skt_c >= 0 &&
        noise.mains_amplitude >= 0 && noise.speed_kmh >= 0)) {
    bad.push_back("noise");
  }
  if (!bad.empty()) {
    std::string msg = "invalid synth config fields:";
    for (const auto& b : bad) msg += " " + b;
    throw Error(ErrorKind::kValidation, msg);
  }
}

nlohmann::json to_json(const SynthConfig& c) {
  nlohmann::json kinds = nlohmann::json::array();
  for (SessionKind k : c.session_kinds) kinds.push_back(std::string(1, session_letter(k)));
  return {
      {"n_subjects", c.n_subjects},
      {"session_kinds", kinds},
      {"phases",
       {{"baseline_video_s", c.phases.baseline_video_s},
        {"practice_s", c.phases.practice_s},
        {"free_driving_s", c.phases.free_driving_s},
        {"stressor_driving_s", c.phases.stressor_driving_s},
        {"recovery_s", c.phases.recovery_s}}},
      {"effects",
       {{"hr_bpm", c.effects.hr_bpm},
        {"scr_rate_per_min", c.effects.scr_rate_per_min},
        {"scl_us", c.effects.scl_us},
        {"skt_slope_c_per_s", c.effects.skt_slope_c_per_s},
        {"rsp_period_s", c.effects.rsp_period_s},
        {"rsp_depth_frac", c.effects.rsp_depth_frac},
        {"rsa_damping", c.effects.rsa_damping}}},
      {"session_effect_scale", c.session_effect_scale},
      {"couplings",
       {{"speed", c.couplings.speed},
        {"steering_std", c.couplings.steering_std},
        {"throttle_rate", c.couplings.throttle_rate},
        {"brake_rate", c.couplings.brake_rate}}},
      {"noise",
       {{"ecg_mv", c.noise.ecg_mv},
        {"eda_us", c.noise.eda_us},
        {"rsp", c.noise.rsp},
        {"skt_c", c.noise.skt_c},
        {"mains_amplitude", c.noise.mains_amplitude},
        {"speed_kmh", c.noise.speed_kmh}}},
      {"subject_sigma", c.subject_sigma},
      {"stress_margin", c.stress_margin},
      {"raw_rate_hz", c.raw_rate_hz},
      {"vehicle_rate_hz", c.vehicle_rate_hz},
      {"mains_hz", c.mains_hz},
      {"bateman_tau0_s", c.bateman_tau0_s},
      {"bateman_tau1_s", c.bateman_tau1_s},
      {"include_vehicle", c.include_vehicle},
      {"seed", c.seed},
  };
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, std::vector<std::string>& bad,
                const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    bad.push_back(prefix + key);
  }
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& prefix,
                    std::vector<std::string>& bad) {
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) bad.push_back(prefix + k);
  }
}

}  // namespace

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kValidation, "synth config must be a JSON object");
  SynthConfig c;
  std::vector<std::string> bad;
  reject_unknown(j,
                 {"n_subjects", "session_kinds", "phases", "effects", "effect_scale", "session_effect_scale",
                  "couplings", "noise", "subject_sigma", "stress_margin", "raw_rate_hz", "vehicle_rate_hz",
                  "mains_hz", "bateman_tau0_s", "bateman_tau1_s", "include_vehicle", "seed"},
                 "", bad);
  read_field(j, "n_subjects", c.n_subjects, bad, "");
  if (j.contains("session_kinds")) {
    try {
      c.session_kinds.clear();
      for (const auto& k : j.at("session_kinds")) c.session_kinds.push_back(parse_session_kind(k.get<std::string>()));
    } catch (const std::exception&) {
      bad.push_back("session_kinds");
    }
  }
  if (j.contains("phases")) {
    const auto& p = j.at("phases");
    reject_unknown(p, {"baseline_video_s", "practice_s", "free_driving_s", "stressor_driving_s", "recovery_s"},
                   "phases.", bad);
    read_field(p, "baseline_video_s", c.phases.baseline_video_s, bad, "phases.");
    read_field(p, "practice_s", c.phases.practice_s, bad, "phases.");
    read_field(p, "free_driving_s", c.phases.free_driving_s, bad, "phases.");
    read_field(p, "stressor_driving_s", c.phases.stressor_driving_s, bad, "phases.");
    read_field(p, "recovery_s", c.phases.recovery_s, bad, "phases.");
  }
  if (j.contains("effects")) {
    const auto& e = j.at("effects");
    reject_unknown(e,
                   {"hr_bpm", "scr_rate_per_min", "scl_us", "skt_slope_c_per_s", "rsp_period_s",
                    "rsp_depth_frac", "rsa_damping"},
                   "effects.", bad);
    read_field(e, "hr_bpm", c.effects.hr_bpm, bad, "effects.");
    read_field(e, "scr_rate_per_min", c.effects.scr_rate_per_min, bad, "effects.");
    read_field(e, "scl_us", c.effects.scl_us, bad, "effects.");
    read_field(e, "skt_slope_c_per_s", c.effects.skt_slope_c_per_s, bad, "effects.");
    read_field(e, "rsp_period_s", c.effects.rsp_period_s, bad, "effects.");
    read_field(e, "rsp_depth_frac", c.effects.rsp_depth_frac, bad, "effects.");
    read_field(e, "rsa_damping", c.effects.rsa_damping, bad, "effects.");
  }
  // Convenience knob: multiply all physiological effects.
  if (j.contains("effect_scale")) {
    double k = 1.0;
    read_field(j, "effect_scale", k, bad, "");
    c.effects = c.effects.scaled(k);
  }
  read_field(j, "session_effect_scale", c.session_effect_scale, bad, "");
  if (j.contains("couplings")) {
    const auto& b = j.at("couplings");
    reject_unknown(b, {"speed", "steering_std", "throttle_rate", "brake_rate"}, "couplings.", bad);
    read_field(b, "speed", c.couplings.speed, bad, "couplings.");
    read_field(b, "steering_std", c.couplings.steering_std, bad, "couplings.");
    read_field(b, "throttle_rate", c.couplings.throttle_rate, bad, "couplings.");
    read_field(b, "brake_rate", c.couplings.brake_rate, bad, "couplings.");
  }
  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    reject_unknown(n, {"ecg_mv", "eda_us", "rsp", "skt_c", "mains_amplitude", "speed_kmh"}, "noise.", bad);
    read_field(n, "ecg_mv", c.noise.ecg_mv, bad, "noise.");
    read_field(n, "eda_us", c.noise.eda_us, bad, "noise.");
    read_field(n, "rsp", c.noise.rsp, bad, "noise.");
    read_field(n, "skt_c", c.noise.skt_c, bad, "noise.");
    read_field(n, "mains_amplitude", c.noise.mains_amplitude, bad, "noise.");
    read_field(n, "speed_kmh", c.noise.speed_kmh, bad, "noise.");
  }
  read_field(j, "subject_sigma", c.subject_sigma, bad, "");
  read_field(j, "stress_margin", c.stress_margin, bad, "");
  read_field(j, "raw_rate_hz", c.raw_rate_hz, bad, "");
  read_field(j, "vehicle_rate_hz", c.vehicle_rate_hz, bad, "");
  read_field(j, "mains_hz", c.mains_hz, bad, "");
  read_field(j, "bateman_tau0_s", c.bateman_tau0_s, bad, "");
  read_field(j, "bateman_tau1_s", c.bateman_tau1_s, bad, "");
  read_field(j, "include_vehicle", c.include_vehicle, bad, "");
  read_field(j, "seed", c.seed, bad, "");
  if (!bad.empty()) {
    std::string msg = "invalid synth config fields:";
    for (const auto& b : bad) msg += " " + b;
    throw Error(ErrorKind::kValidation, msg);
  }
  c.validate();
  return c;
}

double GroundTruth::mean_stress(double start_s, double end_s) const {
  const auto a = static_cast<std::size_t>(std::clamp(std::floor(start_s), 0.0, static_cast<double>(stress.size())));
  const auto b = static_cast<std::size_t>(std::clamp(std::ceil(end_s), 0.0, static_cast<double>(stress.size())));
  if (b <= a) return kMissing;
  double s = 0.0;
  for (std::size_t i = a; i < b; ++i) s += stress[i];
  return s / static_cast<double>(b - a);
}

nlohmann::json to_json(const GroundTruth& t) {
  nlohmann::json breaths = nlohmann::json::array();
  for (const auto& b : t.breaths) breaths.push_back({b.onset_s, b.peak_s, b.end_s});
  return {{"session", t.session_key},
          {"stress", t.stress},
          {"beat_times_s", t.beat_times_s},
          {"scr_times_s", t.scr_times_s},
          {"scr_amplitudes_us", t.scr_amplitudes_us},
          {"breaths", breaths},
          {"recovery_mode", std::string(to_string(t.recovery_mode))}};
}

GroundTruth ground_truth_from_json(const nlohmann::json& j) {
  GroundTruth t;
  try {
    t.session_key = j.at("session").get<std::string>();
    t.stress = j.at("stress").get<std::vector<double>>();
    t.beat_times_s = j.at("beat_times_s").get<std::vector<double>>();
    t.scr_times_s = j.at("scr_times_s").get<std::vector<double>>();
    t.scr_amplitudes_us = j.at("scr_amplitudes_us").get<std::vector<double>>();
    for (const auto& b : j.at("breaths")) t.breaths.push_back({b.at(0), b.at(1), b.at(2)});
    const auto mode = j.at("recovery_mode").get<std::string>();
    if (mode == "Decrease") t.recovery_mode = RecoveryMode::kDecrease;
    else if (mode == "Increase") t.recovery_mode = RecoveryMode::kIncrease;
    else t.recovery_mode = RecoveryMode::kStable;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("ground truth: ") + e.what());
  }
  return t;
}

double bateman_kernel(double t, double tau0, double tau1) {
  if (t < 0.0) return 0.0;
  const double t_peak = std::log(tau0 / tau1) * tau0 * tau1 / (tau0 - tau1);
  const double peak = std::exp(-t_peak / tau0) - std::exp(-t_peak / tau1);
  return (std::exp(-t / tau0) - std::exp(-t / tau1)) / peak;
}

const std::vector<std::string>& stressor_event_names(SessionKind kind) {
  static const std::vector<std::string> impatience{"Timer, Pace Car", "Delivery Van", "Construction"};
  static const std::vector<std::string> surprise{"Car Crash", "Barrel Explosion"};
  static const std::vector<std::string> irritation{"Dense Fog", "Slow Parallel Cars", "Sudden Braking"};
  switch (kind) {
    case SessionKind::kImpatience: return impatience;
    case SessionKind::kSurprise: return surprise;
    case SessionKind::kIrritation: return irritation;
  }
  return impatience;
}

std::string synth_subject_id(int subject_index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%03d", subject_index + 1);
  return buf;
}

SynthSession generate_session(const SynthConfig& config, int subject_index, SessionKind kind) {
  config.validate();
  const Timeline tl = make_timeline(config.phases);
  const double total = config.phases.total();
  const double dt_slow = 1.0 / kSlowRateHz;
  const auto n_slow = static_cast<std::size_t>(std::ceil(total * kSlowRateHz)) + 1;

  // Subject traits are shared across that subject's sessions.
  std::mt19937_64 subj_rng(mix_seed(config.seed, static_cast<std::uint64_t>(subject_index), 0x5B1ECu));
  std::normal_distribution<double> z;
  const double sg = config.subject_sigma;
  const double hr0 = 70.0 + 8.0 * sg * z(subj_rng);
  const double scl0 = std::max(1.0, 5.0 + 1.5 * sg * z(subj_rng));
  const double skt0 = 33.0 + 0.7 * sg * z(subj_rng);
  const double period0 = std::clamp(4.0 + 0.5 * sg * z(subj_rng), 2.8, 6.0);
  const double depth0 = std::max(0.4, 1.0 + 0.2 * sg * z(subj_rng));
  const double rsa0 = std::clamp(0.05 + 0.015 * sg * z(subj_rng), 0.01, 0.1);
  const double scr_rate0 = std::max(0.5, 3.0 + 1.0 * sg * z(subj_rng));
  const double speed0 = 30.0 + 3.0 * sg * z(subj_rng);
  const double responder = std::clamp(1.0 + 0.25 * sg * z(subj_rng), 0.4, 1.8);

  std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(subject_index),
                               static_cast<std::uint64_t>(kind_index(kind) + 1)));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const EffectSizes eff = config.effects.scaled(responder * config.session_effect_scale[kind_index(kind)]);

  SynthSession out;
  Session& s = out.session;
  GroundTruth& gt = out.truth;
  s.subject_id = synth_subject_id(subject_index);
  s.kind = kind;
  s.phases.baseline_video = tl.video;
  s.phases.practice = tl.practice;
  s.phases.free_driving = tl.free;
  s.phases.stressor_driving = tl.stressor;
  s.phases.recovery = tl.recovery;
  gt.session_key = s.key();

  const auto& names = stressor_event_names(kind);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double onset = tl.stressor.start_s +
                         tl.stressor.duration() * (static_cast<double>(i) + 0.5) / static_cast<double>(names.size());
    s.events.push_back({names[i], std::round(onset)});
  }

  const double u = unif(rng);
  gt.recovery_mode = u < 0.6 ? RecoveryMode::kDecrease : (u < 0.8 ? RecoveryMode::kStable : RecoveryMode::kIncrease);

  // Latent stress on the slow grid.
  std::vector<double> stress(n_slow);
  const std::vector<double> wobble = ou_series(n_slow, 20.0, dt_slow, 0.03, rng);
  auto stressor_level = [&](double t) {
    double v = config.stress_margin * std::min(1.0, (t - tl.stressor.start_s) / kStressRampS);
    for (const auto& e : s.events) {
      if (t >= e.onset_s) v += kEventCumulative + event_bump(t - e.onset_s);
    }
    return v;
  };
  const double end_level = stressor_level(tl.stressor.end_s);
  for (std::size_t i = 0; i < n_slow; ++i) {
    const double t = static_cast<double>(i) * dt_slow;
    double v = 0.0;
    if (tl.stressor.contains(t)) {
      v = stressor_level(t);
    } else if (t >= tl.recovery.start_s) {
      const double r = t - tl.recovery.start_s;
      switch (gt.recovery_mode) {
        case RecoveryMode::kDecrease: v = end_level * std::exp(-r / 40.0); break;
        case RecoveryMode::kIncrease: v = end_level + 0.15 * r / tl.recovery.duration(); break;
        case RecoveryMode::kStable: v = end_level; break;
      }
    }
    stress[i] = std::clamp(kBaselineStress + v + wobble[i], 0.0, 1.0);
  }
  const auto n_sec = static_cast<std::size_t>(std::floor(total));
  gt.stress.resize(n_sec);
  for (std::size_t k = 0; k < n_sec; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < 10; ++j) acc += stress[k * 10 + j];
    gt.stress[k] = acc / 10.0;
  }

  // Slowly varying physiological drivers.
  const std::vector<double> hr_noise = ou_series(n_slow, 3.0, dt_slow, 1.5, rng);
  const std::vector<double> period_noise = ou_series(n_slow, 3.0, dt_slow, 0.15, rng);
  // SCL wander is low-passed so its spectrum stays inside what the tonic
  // spline can follow; rough wander would surface as spurious SCRs.
  std::vector<double> scl_noise = ou_series(n_slow, 20.0, dt_slow, 0.1, rng);
  {
    const double a = std::exp(-dt_slow / 8.0);
    for (int pass = 0; pass < 2; ++pass) {
      double acc = scl_noise[0];
      for (double& v : scl_noise) v = acc = a * acc + (1.0 - a) * v;
    }
  }
  const std::vector<double> skt_noise = ou_series(n_slow, 5.0, dt_slow, 0.05, rng);
  std::vector<double> hr(n_slow), period(n_slow), depth(n_slow), rsa(n_slow), tonic(n_slow), skt(n_slow),
      scr_rate(n_slow);
  double stress_lp = stress[0];
  double skt_acc = 0.0;
  const double lp_a = std::exp(-dt_slow / 20.0);
  for (std::size_t i = 0; i < n_slow; ++i) {
    const double st = stress[i];
    stress_lp = lp_a * stress_lp + (1.0 - lp_a) * st;
    hr[i] = std::clamp(hr0 + eff.hr_bpm * st + hr_noise[i], 40.0, 170.0);
    period[i] = std::max(1.5, period0 + eff.rsp_period_s * st + period_noise[i]);
    depth[i] = depth0 * (1.0 + eff.rsp_depth_frac * st);
    rsa[i] = rsa0 * (1.0 - eff.rsa_damping * st);
    tonic[i] = scl0 + eff.scl_us * stress_lp + scl_noise[i];
    skt_acc += eff.skt_slope_c_per_s * (st - kBaselineStress) * dt_slow;
    skt[i] = skt0 + skt_acc + skt_noise[i];
    scr_rate[i] = (scr_rate0 + eff.scr_rate_per_min * st) / 60.0;
  }

  const double fs = config.raw_rate_hz;
  const auto n_raw = static_cast<std::size_t>(std::llround(total * fs));
  const double dt = 1.0 / fs;
  const double two_pi = 2.0 * std::numbers::pi;
  auto mains = [&](std::size_t i, double amp) { return amp * std::sin(two_pi * config.mains_hz * i * dt); };

  // Respiration phase; troughs at multiples of 2 pi.
  std::vector<double> phase(n_raw);
  {
    double ph = two_pi * unif(rng);
    double last_trough = -1.0, last_peak = -1.0;
    for (std::size_t i = 0; i < n_raw; ++i) {
      const double t = static_cast<double>(i) * dt;
      const double prev = ph;
      ph += two_pi * dt / slow_at(period, t);
      const double k_prev = std::floor(prev / two_pi), k_now = std::floor(ph / two_pi);
      const double h_prev = std::floor((prev - std::numbers::pi) / two_pi);
      const double h_now = std::floor((ph - std::numbers::pi) / two_pi);
      if (h_now > h_prev) last_peak = t;
      if (k_now > k_prev) {
        if (last_trough >= 0.0 && last_peak > last_trough) gt.breaths.push_back({last_trough, last_peak, t});
        last_trough = t;
      }
      phase[i] = ph;
    }
  }
  std::normal_distribution<double> wn;
  {
    std::vector<double> thor(n_raw), abdo(n_raw);
    for (std::size_t i = 0; i < n_raw; ++i) {
      const double t = static_cast<double>(i) * dt;
      const double r = -slow_at(depth, t) * std::cos(phase[i]);
      thor[i] = 0.6 * r + config.noise.rsp * wn(rng) + mains(i, config.noise.mains_amplitude);
      abdo[i] = 0.4 * r + config.noise.rsp * wn(rng) + mains(i, config.noise.mains_amplitude);
    }
    s.traces.emplace(channel::kRspThoracic, SignalTrace(std::move(thor), fs, 0.0, channel::kRspThoracic));
    s.traces.emplace(channel::kRspAbdominal, SignalTrace(std::move(abdo), fs, 0.0, channel::kRspAbdominal));
  }

  // ECG: R-wave plus a small S-wave per beat; RR follows HR with respiratory modulation.
  {
    std::vector<double> ecg(n_raw);
    for (std::size_t i = 0; i < n_raw; ++i) {
      const double t = static_cast<double>(i) * dt;
      ecg[i] = 0.1 * std::sin(two_pi * 0.2 * t) + config.noise.ecg_mv * wn(rng) +
               mains(i, config.noise.mains_amplitude);
    }
    double t = 0.3 + 0.5 * unif(rng);
    while (t < total - 0.1) {
      gt.beat_times_s.push_back(t);
      const auto c = static_cast<long>(std::llround(t * fs));
      const long half = static_cast<long>(0.08 * fs);
      for (long k = std::max(0L, c - half); k < std::min(static_cast<long>(n_raw), c + half); ++k) {
        const double d = static_cast<double>(k) * dt - t;
        ecg[static_cast<std::size_t>(k)] += std::exp(-0.5 * d * d / (0.012 * 0.012)) -
                                            0.2 * std::exp(-0.5 * (d - 0.03) * (d - 0.03) / (0.01 * 0.01));
      }
      const auto pi = std::min(n_raw - 1, static_cast<std::size_t>(t * fs));
      const double rr = 60.0 / slow_at(hr, t) * (1.0 + slow_at(rsa, t) * std::cos(phase[pi])) +
                        0.005 * wn(rng);
      t += std::max(0.32, rr);
    }
    s.traces.emplace(channel::kEcg, SignalTrace(std::move(ecg), fs, 0.0, channel::kEcg));
  }

  // EDA: tonic level plus Bateman responses at an inhomogeneous Poisson rate.
  {
    const double max_rate = *std::max_element(scr_rate.begin(), scr_rate.end());
    std::exponential_distribution<double> gap(max_rate);
    std::lognormal_distribution<double> amp(std::log(0.25), 0.5);
    for (double t = gap(rng); t < total - 5.0; t += gap(rng)) {
      if (unif(rng) * max_rate <= slow_at(scr_rate, t)) {  // thinning
        gt.scr_times_s.push_back(t);
        gt.scr_amplitudes_us.push_back(std::max(0.05, amp(rng)));
      }
    }
    std::vector<double> eda(n_raw);
    for (std::size_t i = 0; i < n_raw; ++i) {
      eda[i] = slow_at(tonic, static_cast<double>(i) * dt) + config.noise.eda_us * wn(rng) +
               mains(i, config.noise.mains_amplitude * 0.2);
    }
    const double support = 12.0 * config.bateman_tau0_s;
    for (std::size_t e = 0; e < gt.scr_times_s.size(); ++e) {
      const double t0 = gt.scr_times_s[e];
      const auto first = static_cast<std::size_t>(std::ceil(t0 * fs));
      const auto last = std::min(n_raw, static_cast<std::size_t>((t0 + support) * fs));
      for (std::size_t i = first; i < last; ++i) {
        eda[i] += gt.scr_amplitudes_us[e] *
                  bateman_kernel(static_cast<double>(i) * dt - t0, config.bateman_tau0_s, config.bateman_tau1_s);
      }
    }
    s.traces.emplace(channel::kEda, SignalTrace(std::move(eda), fs, 0.0, channel::kEda));
  }

  {
    std::vector<double> temp(n_raw);
    for (std::size_t i = 0; i < n_raw; ++i) {
      temp[i] = slow_at(skt, static_cast<double>(i) * dt) + config.noise.skt_c * wn(rng);
    }
    s.traces.emplace(channel::kSkt, SignalTrace(std::move(temp), fs, 0.0, channel::kSkt));
  }

  if (config.include_vehicle) {
    const double vfs = config.vehicle_rate_hz;
    const double vdt = 1.0 / vfs;
    const auto nv = static_cast<std::size_t>(std::llround(total * vfs));
    std::vector<double> speed(nv), steer(nv), throttle(nv), brake(nv);
    OuProcess speed_ou(5.0, vdt), steer_ou(1.0, vdt), thr_level(3.0, vdt), brk_level(2.0, vdt);
    speed_ou.start(rng);
    steer_ou.start(rng);
    thr_level.start(rng);
    brk_level.start(rng);
    bool thr_on = unif(rng) < 0.6, brk_on = false;
    for (std::size_t i = 0; i < nv; ++i) {
      const double t = static_cast<double>(i) * vdt;
      const double st = slow_at(stress, t);
      speed[i] = speed0 + config.couplings.speed * st + speed_ou.step(rng, config.noise.speed_kmh);
      steer[i] = steer_ou.step(rng, std::max(0.1, 3.0 + config.couplings.steering_std * st));
      const double thr_press = std::max(0.0, 0.5 + config.couplings.throttle_rate * st) * vdt;
      const double brk_press = std::max(0.0, 0.05 + config.couplings.brake_rate * st) * vdt;
      if (thr_on) thr_on = unif(rng) >= 0.3 * vdt;
      else thr_on = unif(rng) < thr_press;
      if (brk_on) brk_on = unif(rng) >= 0.8 * vdt;
      else brk_on = unif(rng) < brk_press;
      const double tl_v = std::clamp(0.35 + thr_level.step(rng, 0.1), 0.06, 1.0);
      const double bl_v = std::clamp(0.4 + brk_level.step(rng, 0.1), 0.06, 1.0);
      throttle[i] = thr_on && !brk_on ? tl_v : 0.0;
      brake[i] = brk_on ? bl_v : 0.0;
    }
    VehicleTelemetry v{SignalTrace(std::move(speed), vfs, 0.0, "speed"),
                       SignalTrace(std::move(steer), vfs, 0.0, "steering_angle"),
                       SignalTrace(std::move(throttle), vfs, 0.0, "throttle"),
                       SignalTrace(std::move(brake), vfs, 0.0, "brake")};
    s.vehicle = std::move(v);
  }
  return out;
}

std::vector<SynthSession> generate_cohort(const SynthConfig& config, int jobs) {
  config.validate();
  const std::size_t n_kinds = config.session_kinds.size();
  std::vector<SynthSession> out(static_cast<std::size_t>(config.n_subjects) * n_kinds);
  parallel_for(out.size(), jobs, [&](std::size_t i) {
    out[i] = generate_session(config, static_cast<int>(i / n_kinds), config.session_kinds[i % n_kinds]);
  });
  return out;
}

}  // namespace stressor
