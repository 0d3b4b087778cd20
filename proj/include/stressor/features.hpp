#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <vector>

#include "stressor/eda.hpp"
#include "stressor/session.hpp"
#include "stressor/signal.hpp"

namespace stressor {

enum class RowLabel { kFree, kStress, kExcluded };
std::string_view to_string(RowLabel label);
RowLabel parse_row_label(std::string_view text);

enum class Modality { kEcg, kEda, kRsp, kSkt, kVehicle };
std::string_view to_string(Modality m);
Modality parse_modality(std::string_view text);

namespace column {
inline constexpr const char* kHr = "hr_bpm";
inline constexpr const char* kRsa = "rsa_s";
inline constexpr const char* kSclMean = "scl_mean_us";
inline constexpr const char* kSclSlope = "scl_slope_us_per_s";
inline constexpr const char* kScrFrequency = "scr_frequency_per_min";
inline constexpr const char* kScrAmplitude = "scr_amplitude_us";
inline constexpr const char* kScrRiseTime = "scr_rise_time_s";
inline constexpr const char* kRspPeriod = "rsp_period_s";
inline constexpr const char* kRspDepth = "rsp_depth";
inline constexpr const char* kRvt = "rvt";
inline constexpr const char* kTMean = "t_mean_c";
inline constexpr const char* kTSlope = "t_slope_c_per_s";
inline constexpr const char* kSpeedMean = "speed_mean";
inline constexpr const char* kSteeringStd = "steering_std";
inline constexpr const char* kThrottleRate = "throttle_rate_pct";
inline constexpr const char* kThrottleMagnitude = "throttle_magnitude";
inline constexpr const char* kThrottleEntropy = "throttle_entropy";
inline constexpr const char* kBrakeRate = "brake_rate_pct";
inline constexpr const char* kBrakeMagnitude = "brake_magnitude";
inline constexpr const char* kBrakeEntropy = "brake_entropy";
}  // namespace column

// The 12 physiological columns in canonical order.
const std::vector<std::string>& physiological_columns();
// The 6 vehicle columns used as model inputs.
const std::vector<std::string>& vehicle_model_columns();
// All 8 vehicle metrics used in the behaviour analysis.
const std::vector<std::string>& vehicle_metric_columns();
Modality column_modality(const std::string& column);

// Per-second feature matrix. Missing cells are NaN. Rows may come from several
// sessions once frames are concatenated.
struct FeatureFrame {
  std::vector<std::string> columns;
  Eigen::MatrixXd values;  // rows x columns
  std::vector<double> timestamps_s;
  std::vector<RowLabel> labels;
  std::vector<std::string> subject_ids;
  std::vector<SessionKind> session_kinds;
  std::vector<bool> constant_columns;  // set by zscore_baseline

  std::size_t rows() const { return timestamps_s.size(); }
  std::size_t cols() const { return columns.size(); }
  int column_index(const std::string& name) const;  // -1 if absent
  std::size_t missing_count() const;

  FeatureFrame select_columns(const std::vector<std::string>& names) const;
  FeatureFrame select_rows(const std::vector<std::size_t>& rows) const;
  void append(const FeatureFrame& other);
};

struct SktFeatures {
  double t_mean = kMissing;
  double t_slope = kMissing;
};
SktFeatures skt_features(const SignalTrace& skt, const TimeInterval& window);

inline constexpr double kPedalPressThreshold = 0.05;
inline constexpr double kEntropyRateHz = 10.0;

struct VehicleFeatures {
  double speed_mean = kMissing;
  double steering_std = kMissing;
  double throttle_rate_pct = kMissing;
  double throttle_magnitude = kMissing;
  double throttle_entropy = kMissing;
  double brake_rate_pct = kMissing;
  double brake_magnitude = kMissing;
  double brake_entropy = kMissing;
};
VehicleFeatures vehicle_features(const VehicleTelemetry& v, const TimeInterval& window);

// SampEn(m, r) with Chebyshev distance and a <= r match. Constant input gives
// 0; undefined (no template matches) gives missing.
double sample_entropy(std::span<const double> x, int m, double r);

struct FrameOptions {
  double window_s = 30.0;
  double hop_s = 1.0;
  CvxEdaParams cvxeda;
  double scr_min_amplitude_us = kScrMinAmplitudeUs;
  int jobs = 1;
};

RowLabel label_at(const Phases& phases, double t);

// One row per hop where the whole centred window lies inside the session.
FeatureFrame build_feature_frame(const Session& session, bool include_vehicle,
                                 const FrameOptions& options = {});
// The 8 vehicle metrics on the same row grid.
FeatureFrame build_vehicle_frame(const Session& session, const FrameOptions& options = {});

// First `duration_s` of free driving, the per-subject normalisation reference.
TimeInterval baseline_interval(const Phases& phases, double duration_s = 60.0);

// Per-column (x - mean) / std over baseline rows (population std). Columns
// with no observed baseline values fall back to all rows of the frame.
FeatureFrame zscore_baseline(const FeatureFrame& frame, const TimeInterval& baseline);

// Each missing cell becomes the mean of that column over the k nearest rows
// (nan-euclidean distance on mutually observed columns, ties by row index).
// Columns with no observed values throw, unless `allow_empty_columns`.
FeatureFrame knn_impute(const FeatureFrame& frame, int k, bool allow_empty_columns = false);

}  // namespace stressor
