#include "stressor/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "stressor/cardiac.hpp"
#include "stressor/eda.hpp"
#include "stressor/error.hpp"
#include "stressor/parallel.hpp"
#include "stressor/respiration.hpp"

namespace stressor {

std::string_view to_string(RowLabel label) {
  switch (label) {
    case RowLabel::kFree: return "free";
    case RowLabel::kStress: return "stress";
    case RowLabel::kExcluded: return "excluded";
  }
  return "?";
}

RowLabel parse_row_label(std::string_view text) {
  if (text == "free") return RowLabel::kFree;
  if (text == "stress") return RowLabel::kStress;
  if (text == "excluded") return RowLabel::kExcluded;
  throw Error(ErrorKind::kParse, "unknown row label '" + std::string(text) + "'");
}

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::kEcg: return "ECG";
    case Modality::kEda: return "EDA";
    case Modality::kRsp: return "RSP";
    case Modality::kSkt: return "SKT";
    case Modality::kVehicle: return "VEHICLE";
  }
  return "?";
}

Modality parse_modality(std::string_view text) {
  for (Modality m : {Modality::kEcg, Modality::kEda, Modality::kRsp, Modality::kSkt, Modality::kVehicle}) {
    if (text == to_string(m)) return m;
  }
  throw Error(ErrorKind::kValidation, "unknown modality '" + std::string(text) + "'");
}

const std::vector<std::string>& physiological_columns() {
  static const std::vector<std::string> cols{
      column::kHr,        column::kRsa,       column::kSclMean,     column::kSclSlope,
      column::kScrFrequency, column::kScrAmplitude, column::kScrRiseTime, column::kRspPeriod,
      column::kRspDepth,  column::kRvt,       column::kTMean,       column::kTSlope};
  return cols;
}

const std::vector<std::string>& vehicle_model_columns() {
  static const std::vector<std::string> cols{column::kSpeedMean,        column::kSteeringStd,
                                             column::kThrottleMagnitude, column::kThrottleEntropy,
                                             column::kBrakeMagnitude,    column::kBrakeEntropy};
  return cols;
}

const std::vector<std::string>& vehicle_metric_columns() {
  static const std::vector<std::string> cols{
      column::kSpeedMean,       column::kSteeringStd,    column::kThrottleRate,
      column::kThrottleMagnitude, column::kThrottleEntropy, column::kBrakeRate,
      column::kBrakeMagnitude,  column::kBrakeEntropy};
  return cols;
}

Modality column_modality(const std::string& c) {
  if (c == column::kHr || c == column::kRsa) return Modality::kEcg;
  if (c == column::kSclMean || c == column::kSclSlope || c == column::kScrFrequency ||
      c == column::kScrAmplitude || c == column::kScrRiseTime) {
    return Modality::kEda;
  }
  if (c == column::kRspPeriod || c == column::kRspDepth || c == column::kRvt) return Modality::kRsp;
  if (c == column::kTMean || c == column::kTSlope) return Modality::kSkt;
  for (const auto& v : vehicle_metric_columns()) {
    if (c == v) return Modality::kVehicle;
  }
  throw Error(ErrorKind::kValidation, "unknown feature column '" + c + "'");
}

int FeatureFrame::column_index(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  return it == columns.end() ? -1 : static_cast<int>(it - columns.begin());
}

std::size_t FeatureFrame::missing_count() const {
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) n += is_missing(values.data()[i]) ? 1 : 0;
  return n;
}

FeatureFrame FeatureFrame::select_columns(const std::vector<std::string>& names) const {
  FeatureFrame out = *this;
  out.columns = names;
  out.values.resize(static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(names.size()));
  out.constant_columns.assign(names.size(), false);
  for (std::size_t j = 0; j < names.size(); ++j) {
    const int src = column_index(names[j]);
    if (src < 0) throw Error(ErrorKind::kMissingChannel, "frame has no column " + names[j]);
    out.values.col(static_cast<Eigen::Index>(j)) = values.col(src);
    if (static_cast<std::size_t>(src) < constant_columns.size()) {
      out.constant_columns[j] = constant_columns[static_cast<std::size_t>(src)];
    }
  }
  return out;
}

FeatureFrame FeatureFrame::select_rows(const std::vector<std::size_t>& idx) const {
  FeatureFrame out;
  out.columns = columns;
  out.constant_columns = constant_columns;
  out.values.resize(static_cast<Eigen::Index>(idx.size()), values.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.values.row(static_cast<Eigen::Index>(r)) = values.row(static_cast<Eigen::Index>(idx[r]));
    out.timestamps_s.push_back(timestamps_s[idx[r]]);
    out.labels.push_back(labels[idx[r]]);
    out.subject_ids.push_back(subject_ids[idx[r]]);
    out.session_kinds.push_back(session_kinds[idx[r]]);
  }
  return out;
}

void FeatureFrame::append(const FeatureFrame& other) {
  if (columns.empty() && rows() == 0) {
    *this = other;
    return;
  }
  if (other.columns != columns) throw Error(ErrorKind::kShape, "cannot append frames with different columns");
  const Eigen::Index r0 = values.rows();
  values.conservativeResize(r0 + other.values.rows(), values.cols());
  values.bottomRows(other.values.rows()) = other.values;
  timestamps_s.insert(timestamps_s.end(), other.timestamps_s.begin(), other.timestamps_s.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  subject_ids.insert(subject_ids.end(), other.subject_ids.begin(), other.subject_ids.end());
  session_kinds.insert(session_kinds.end(), other.session_kinds.begin(), other.session_kinds.end());
}

SktFeatures skt_features(const SignalTrace& skt, const TimeInterval& window) {
  SktFeatures f;
  const auto w = skt.window(window);
  if (!w.empty()) f.t_mean = mean_of(w);
  if (w.size() >= 2) f.t_slope = linear_slope(w, 1.0 / skt.sample_rate_hz());
  return f;
}

double sample_entropy(std::span<const double> x, int m, double r) {
  const std::size_t n = x.size();
  if (n == 0) return kMissing;
  if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) return 0.0;
  const auto mm = static_cast<std::size_t>(m);
  if (n <= mm + 1) return kMissing;
  const std::size_t templates = n - mm;
  long long b = 0, a = 0;
  for (std::size_t i = 0; i + 1 < templates; ++i) {
    for (std::size_t j = i + 1; j < templates; ++j) {
      bool match = true;
      for (std::size_t k = 0; k < mm; ++k) {
        if (std::abs(x[i + k] - x[j + k]) > r) {
          match = false;
          break;
        }
      }
      if (!match) continue;
      ++b;
      if (std::abs(x[i + mm] - x[j + mm]) <= r) ++a;
    }
  }
  if (a == 0 || b == 0) return kMissing;
  return -std::log(static_cast<double>(a) / static_cast<double>(b));
}

namespace {

double population_std(std::span<const double> v) {
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size()));
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct PedalStats {
  double rate_pct = kMissing;
  double magnitude = kMissing;
  double entropy = kMissing;
};

PedalStats pedal_stats(std::span<const double> w, double fs) {
  PedalStats p;
  if (w.empty()) return p;
  std::size_t pressed = 0;
  double sum = 0.0;
  for (double v : w) {
    if (v > kPedalPressThreshold) {
      ++pressed;
      sum += v;
    }
  }
  p.rate_pct = 100.0 * static_cast<double>(pressed) / static_cast<double>(w.size());
  if (pressed > 0) p.magnitude = sum / static_cast<double>(pressed);

  const auto block = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fs / kEntropyRateHz)));
  std::vector<double> coarse;
  for (std::size_t i = 0; i + block <= w.size(); i += block) {
    coarse.push_back(mean_of(w.subspan(i, block)));
  }
  if (coarse.empty()) return p;
  p.entropy = sample_entropy(coarse, 2, 0.2 * sample_std(coarse));
  return p;
}

struct Extracted {
  RPeakSeries peaks;
  IbiSeries ibis;
  BreathCycleSeries cycles;
  std::optional<EdaDecomposition> eda;
  std::vector<ScrEvent> scr;
  bool ecg_ok = true, rsp_ok = true, eda_ok = true;
};

std::vector<double> row_times(const Session& s, const FrameOptions& o) {
  if (!(o.window_s > 0.0) || !(o.hop_s > 0.0)) {
    throw Error(ErrorKind::kValidation, "window and hop must be positive");
  }
  const double half = o.window_s / 2.0;
  const double dur = s.duration_s();
  std::vector<double> t;
  for (std::size_t k = 0;; ++k) {
    const double c = half + static_cast<double>(k) * o.hop_s;
    if (c + half > dur + 1e-9) break;
    t.push_back(c);
  }
  return t;
}

FeatureFrame empty_frame(const Session& s, const std::vector<std::string>& cols,
                         const std::vector<double>& times) {
  FeatureFrame f;
  f.columns = cols;
  f.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(times.size()),
                                       static_cast<Eigen::Index>(cols.size()), kMissing);
  f.timestamps_s = times;
  f.constant_columns.assign(cols.size(), false);
  for (double t : times) {
    f.labels.push_back(label_at(s.phases, t));
    f.subject_ids.push_back(s.subject_id);
    f.session_kinds.push_back(s.kind);
  }
  return f;
}

}  // namespace

VehicleFeatures vehicle_features(const VehicleTelemetry& v, const TimeInterval& window) {
  VehicleFeatures f;
  const auto speed = v.speed.window(window);
  const auto steer = v.steering_angle.window(window);
  if (!speed.empty()) f.speed_mean = mean_of(speed);
  if (!steer.empty()) f.steering_std = population_std(steer);
  const double fs = v.throttle.sample_rate_hz();
  const PedalStats th = pedal_stats(v.throttle.window(window), fs);
  const PedalStats br = pedal_stats(v.brake.window(window), fs);
  f.throttle_rate_pct = th.rate_pct;
  f.throttle_magnitude = th.magnitude;
  f.throttle_entropy = th.entropy;
  f.brake_rate_pct = br.rate_pct;
  f.brake_magnitude = br.magnitude;
  f.brake_entropy = br.entropy;
  return f;
}

RowLabel label_at(const Phases& phases, double t) {
  if (phases.free_driving && phases.free_driving->contains(t)) return RowLabel::kFree;
  if (phases.stressor_driving && phases.stressor_driving->contains(t)) return RowLabel::kStress;
  return RowLabel::kExcluded;
}

FeatureFrame build_feature_frame(const Session& session, bool include_vehicle,
                                 const FrameOptions& options) {
  const SignalTrace& ecg = session.trace(channel::kEcg);
  const SignalTrace& eda = session.trace(channel::kEda);
  const SignalTrace& rsp = session.trace(channel::kRspFused);
  const SignalTrace& skt = session.trace(channel::kSkt);
  if (include_vehicle && !session.vehicle) {
    throw Error(ErrorKind::kMissingChannel, "session " + session.key() + " has no VEHICLE telemetry");
  }

  Extracted ex;
  try {
    ex.peaks = detect_r_peaks(ecg);
    ex.ibis = ibi_series(ex.peaks);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNoSignal) throw;
    ex.ecg_ok = false;
  }
  try {
    ex.cycles = detect_breath_cycles(rsp);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNoSignal) throw;
    ex.rsp_ok = false;
  }
  ex.eda = cvxeda_decompose(eda, options.cvxeda);
  ex.scr = extract_scr_events(*ex.eda, options.scr_min_amplitude_us);

  std::vector<std::string> cols = physiological_columns();
  if (include_vehicle) {
    for (const auto& c : vehicle_model_columns()) cols.push_back(c);
  }
  const std::vector<double> times = row_times(session, options);
  FeatureFrame frame = empty_frame(session, cols, times);
  const double half = options.window_s / 2.0;

  parallel_for(times.size(), options.jobs, [&](std::size_t r) {
    const TimeInterval w{times[r] - half, times[r] + half};
    auto row = frame.values.row(static_cast<Eigen::Index>(r));
    if (ex.ecg_ok && ecg.window_valid(w)) {
      row[0] = heart_rate(ex.peaks, w);
      row[1] = ex.rsp_ok && rsp.window_valid(w) ? rsa_p2t(ex.ibis, ex.cycles, w) : kMissing;
    }
    if (eda.window_valid(w)) {
      const EdaFeatures e = eda_features(*ex.eda, ex.scr, w);
      row[2] = e.scl_mean_us;
      row[3] = e.scl_slope_us_per_s;
      row[4] = e.scr_frequency_per_min;
      row[5] = e.scr_amplitude_us;
      row[6] = e.scr_rise_time_s;
    }
    if (ex.rsp_ok && rsp.window_valid(w)) {
      const RspFeatures f = rsp_features(ex.cycles, w);
      row[7] = f.period_s;
      row[8] = f.depth;
      row[9] = f.rvt;
    }
    if (skt.window_valid(w)) {
      const SktFeatures f = skt_features(skt, w);
      row[10] = f.t_mean;
      row[11] = f.t_slope;
    }
    if (include_vehicle) {
      const VehicleFeatures v = vehicle_features(*session.vehicle, w);
      row[12] = v.speed_mean;
      row[13] = v.steering_std;
      row[14] = v.throttle_magnitude;
      row[15] = v.throttle_entropy;
      row[16] = v.brake_magnitude;
      row[17] = v.brake_entropy;
    }
  });
  return frame;
}

FeatureFrame build_vehicle_frame(const Session& session, const FrameOptions& options) {
  if (!session.vehicle) {
    throw Error(ErrorKind::kMissingChannel, "session " + session.key() + " has no VEHICLE telemetry");
  }
  const std::vector<double> times = row_times(session, options);
  FeatureFrame frame = empty_frame(session, vehicle_metric_columns(), times);
  const double half = options.window_s / 2.0;
  parallel_for(times.size(), options.jobs, [&](std::size_t r) {
    const VehicleFeatures v = vehicle_features(*session.vehicle, {times[r] - half, times[r] + half});
    auto row = frame.values.row(static_cast<Eigen::Index>(r));
    row[0] = v.speed_mean;
    row[1] = v.steering_std;
    row[2] = v.throttle_rate_pct;
    row[3] = v.throttle_magnitude;
    row[4] = v.throttle_entropy;
    row[5] = v.brake_rate_pct;
    row[6] = v.brake_magnitude;
    row[7] = v.brake_entropy;
  });
  return frame;
}

TimeInterval baseline_interval(const Phases& phases, double duration_s) {
  if (!phases.free_driving) {
    throw Error(ErrorKind::kInvalidBaseline, "session has no free-driving phase");
  }
  const TimeInterval& f = *phases.free_driving;
  return {f.start_s, std::min(f.end_s, f.start_s + duration_s)};
}

FeatureFrame zscore_baseline(const FeatureFrame& frame, const TimeInterval& baseline) {
  std::vector<std::size_t> base_rows;
  for (std::size_t r = 0; r < frame.rows(); ++r) {
    if (baseline.contains(frame.timestamps_s[r])) base_rows.push_back(r);
  }
  if (base_rows.size() < 30) {
    throw Error(ErrorKind::kInvalidBaseline,
                "baseline interval holds " + std::to_string(base_rows.size()) + " rows, need 30");
  }
  FeatureFrame out = frame;
  out.constant_columns.assign(frame.cols(), false);
  bool any_scaled = false;
  for (std::size_t c = 0; c < frame.cols(); ++c) {
    const auto col = static_cast<Eigen::Index>(c);
    std::vector<double> ref;
    for (std::size_t r : base_rows) {
      const double v = frame.values(static_cast<Eigen::Index>(r), col);
      if (!is_missing(v)) ref.push_back(v);
    }
    if (ref.empty()) {
      for (std::size_t r = 0; r < frame.rows(); ++r) {
        const double v = frame.values(static_cast<Eigen::Index>(r), col);
        if (!is_missing(v)) ref.push_back(v);
      }
    }
    if (ref.empty()) {
      out.constant_columns[c] = true;
      continue;
    }
    const double mu = mean_of(ref);
    const double sd = population_std(ref);
    double scale = 1.0;
    if (sd < 1e-12) {
      out.constant_columns[c] = true;
    } else {
      scale = sd;
      any_scaled = true;
    }
    for (Eigen::Index r = 0; r < out.values.rows(); ++r) {
      double& v = out.values(r, col);
      if (!is_missing(v)) v = (v - mu) / scale;
    }
  }
  if (!any_scaled) {
    throw Error(ErrorKind::kInvalidBaseline, "every column is constant over the baseline");
  }
  return out;
}

FeatureFrame knn_impute(const FeatureFrame& frame, int k, bool allow_empty_columns) {
  if (k < 1) throw Error(ErrorKind::kValidation, "k must be positive");
  const auto n = static_cast<Eigen::Index>(frame.rows());
  const auto p = static_cast<Eigen::Index>(frame.cols());
  const Eigen::MatrixXd& X = frame.values;

  std::vector<std::vector<Eigen::Index>> donors(static_cast<std::size_t>(p));
  for (Eigen::Index c = 0; c < p; ++c) {
    for (Eigen::Index r = 0; r < n; ++r) {
      if (!is_missing(X(r, c))) donors[static_cast<std::size_t>(c)].push_back(r);
    }
    if (donors[static_cast<std::size_t>(c)].empty() && n > 0 && !allow_empty_columns) {
      throw Error(ErrorKind::kUnimputableColumn, "column " + frame.columns[static_cast<std::size_t>(c)] +
                                                     " has no observed values");
    }
  }

  FeatureFrame out = frame;
  std::vector<double> dist(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> order;
  for (Eigen::Index r = 0; r < n; ++r) {
    bool has_missing = false;
    for (Eigen::Index c = 0; c < p; ++c) has_missing |= is_missing(X(r, c));
    if (!has_missing) continue;

    for (Eigen::Index o = 0; o < n; ++o) {
      double sum = 0.0;
      int shared = 0;
      for (Eigen::Index c = 0; c < p; ++c) {
        const double a = X(r, c), b = X(o, c);
        if (is_missing(a) || is_missing(b)) continue;
        sum += (a - b) * (a - b);
        ++shared;
      }
      dist[static_cast<std::size_t>(o)] =
          shared == 0 ? std::numeric_limits<double>::infinity()
                      : std::sqrt(sum * static_cast<double>(p) / shared);
    }
    for (Eigen::Index c = 0; c < p; ++c) {
      if (!is_missing(X(r, c))) continue;
      const auto& pool = donors[static_cast<std::size_t>(c)];
      if (pool.empty()) continue;
      order.assign(pool.begin(), pool.end());
      const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                        [&](Eigen::Index a, Eigen::Index b) {
                          const double da = dist[static_cast<std::size_t>(a)];
                          const double db = dist[static_cast<std::size_t>(b)];
                          return da < db || (da == db && a < b);
                        });
      double s = 0.0;
      for (std::size_t i = 0; i < take; ++i) s += X(order[i], c);
      out.values(r, c) = s / static_cast<double>(take);
    }
  }
  return out;
}

}  // namespace stressor
