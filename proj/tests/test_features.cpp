#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stressor/error.hpp"
#include "stressor/features.hpp"
#include "stressor/synth.hpp"

using namespace stressor;

namespace {

// Textbook SampEn: count template pairs over the first n-m templates for both
// lengths, independent of the incremental loop in the library.
double sampen_oracle(const std::vector<double>& x, int m, double r) {
  const int n = static_cast<int>(x.size());
  auto count = [&](int len) {
    long long c = 0;
    for (int i = 0; i < n - m; ++i) {
      for (int j = 0; j < n - m; ++j) {
        if (i == j) continue;
        double d = 0.0;
        for (int k = 0; k < len; ++k) d = std::max(d, std::abs(x[i + k] - x[j + k]));
        if (d <= r) ++c;
      }
    }
    return c;
  };
  const long long b = count(m), a = count(m + 1);
  if (a == 0 || b == 0) return kMissing;
  return -std::log(static_cast<double>(a) / static_cast<double>(b));
}

FeatureFrame toy_frame(const Eigen::MatrixXd& v) {
  FeatureFrame f;
  for (Eigen::Index c = 0; c < v.cols(); ++c) f.columns.push_back("c" + std::to_string(c));
  f.values = v;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    f.timestamps_s.push_back(static_cast<double>(r));
    f.labels.push_back(r % 2 ? RowLabel::kStress : RowLabel::kFree);
    f.subject_ids.push_back("S001");
    f.session_kinds.push_back(SessionKind::kImpatience);
  }
  f.constant_columns.assign(f.cols(), false);
  return f;
}

}  // namespace

TEST(SampleEntropy, MatchesBruteForce) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 40; ++rep) {
    std::vector<double> x(20 + rep * 3);
    for (double& v : x) v = std::round(4.0 * z(rng)) / 4.0;  // quantised, so ties at r occur
    const double r = 0.25 * (1 + rep % 4);
    const double got = sample_entropy(x, 2, r);
    const double want = sampen_oracle(x, 2, r);
    if (is_missing(want)) {
      EXPECT_TRUE(is_missing(got));
    } else {
      EXPECT_NEAR(got, want, 1e-12) << rep;
    }
  }
}

TEST(SampleEntropy, ConstantIsZeroAndNoMatchesIsMissing) {
  EXPECT_EQ(sample_entropy(std::vector<double>(50, 0.3), 2, 0.1), 0.0);
  std::vector<double> ramp(30);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i);
  EXPECT_TRUE(is_missing(sample_entropy(ramp, 2, 0.5)));
}

TEST(SktFeatures, MeanAndSlopeOfLine) {
  std::vector<double> x(250 * 60);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 33.0 - 0.004 * (i / 250.0);
  const SignalTrace skt(std::move(x), 250.0, 0.0, channel::kSkt);
  const SktFeatures f = skt_features(skt, {10.0, 40.0});
  // Samples 2500..9999: mean time 25 - 0.5/250.
  EXPECT_NEAR(f.t_mean, 33.0 - 0.004 * (25.0 - 0.5 / 250.0), 1e-9);
  EXPECT_NEAR(f.t_slope, -0.004, 1e-9);
  EXPECT_TRUE(is_missing(skt_features(skt, {70.0, 80.0}).t_mean));
}

TEST(VehicleFeatures, PedalsSpeedAndSteering) {
  const double fs = 50.0;
  const std::size_t n = 50 * 60;
  std::vector<double> speed(n), steer(n), throttle(n), brake(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    speed[i] = 40.0 + (i % 10);
    steer[i] = (i % 2) ? 3.0 : -1.0;
    throttle[i] = (i % 4 == 0) ? 0.6 : 0.01;
  }
  VehicleTelemetry v{SignalTrace(speed, fs, 0.0, "speed"), SignalTrace(steer, fs, 0.0, "steer"),
                     SignalTrace(throttle, fs, 0.0, "throttle"), SignalTrace(brake, fs, 0.0, "brake")};
  const VehicleFeatures f = vehicle_features(v, {0.0, 30.0});
  EXPECT_NEAR(f.speed_mean, 44.5, 1e-9);
  EXPECT_NEAR(f.steering_std, 2.0, 1e-9);
  EXPECT_NEAR(f.throttle_rate_pct, 25.0, 1e-9);
  EXPECT_NEAR(f.throttle_magnitude, 0.6, 1e-12);
  EXPECT_NEAR(f.brake_rate_pct, 0.0, 1e-12);
  EXPECT_TRUE(is_missing(f.brake_magnitude));
  // 5-sample blocks of a period-4 pattern: block means cycle with period 4.
  std::vector<double> coarse;
  for (std::size_t i = 0; i + 5 <= 1500; i += 5) {
    double s = 0.0;
    for (std::size_t k = 0; k < 5; ++k) s += throttle[i + k];
    coarse.push_back(s / 5.0);
  }
  double mu = 0.0, ss = 0.0;
  for (double c : coarse) mu += c;
  mu /= coarse.size();
  for (double c : coarse) ss += (c - mu) * (c - mu);
  const double r = 0.2 * std::sqrt(ss / (coarse.size() - 1));
  EXPECT_NEAR(f.throttle_entropy, sampen_oracle(coarse, 2, r), 1e-12);
  EXPECT_EQ(f.brake_entropy, 0.0);
}

TEST(LabelAt, PhasesMapToClasses) {
  Phases p;
  p.free_driving = TimeInterval{100.0, 200.0};
  p.stressor_driving = TimeInterval{200.0, 300.0};
  p.recovery = TimeInterval{300.0, 350.0};
  EXPECT_EQ(label_at(p, 99.9), RowLabel::kExcluded);
  EXPECT_EQ(label_at(p, 100.0), RowLabel::kFree);
  EXPECT_EQ(label_at(p, 200.0), RowLabel::kStress);
  EXPECT_EQ(label_at(p, 320.0), RowLabel::kExcluded);
}

TEST(Zscore, BaselineRowsHaveZeroMeanUnitStd) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  Eigen::MatrixXd v(200, 3);
  for (Eigen::Index r = 0; r < 200; ++r) {
    v(r, 0) = 10.0 + 3.0 * z(rng);
    v(r, 1) = 7.0;
    v(r, 2) = r == 5 ? kMissing : -2.0 + z(rng);
  }
  const FeatureFrame f = zscore_baseline(toy_frame(v), {0.0, 60.0});
  for (Eigen::Index c : {0, 2}) {
    double s = 0.0, ss = 0.0;
    int n = 0;
    for (Eigen::Index r = 0; r < 60; ++r) {
      const double x = f.values(r, c);
      if (is_missing(x)) continue;
      s += x;
      ss += x * x;
      ++n;
    }
    EXPECT_NEAR(s / n, 0.0, 1e-12);
    EXPECT_NEAR(ss / n, 1.0, 1e-12);
  }
  EXPECT_TRUE(f.constant_columns[1]);
  EXPECT_FALSE(f.constant_columns[0]);
  EXPECT_EQ(f.values(150, 1), 0.0);
  EXPECT_TRUE(is_missing(f.values(5, 2)));
}

TEST(Zscore, ShortBaselineThrows) {
  Eigen::MatrixXd v = Eigen::MatrixXd::Random(100, 2);
  try {
    zscore_baseline(toy_frame(v), {0.0, 20.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidBaseline);
  }
}

TEST(KnnImpute, MatchesHandComputedNeighbours) {
  Eigen::MatrixXd v(5, 3);
  v << 0.0, 0.0, 1.0,
       1.0, 0.0, 2.0,
       5.0, 5.0, 9.0,
       0.5, kMissing, kMissing,
       6.0, 5.0, 11.0;
  const FeatureFrame f = knn_impute(toy_frame(v), 2);
  // Row 3 sees only column 0: nearest are rows 0 and 1 (distances 0.5 each, ties by index).
  EXPECT_DOUBLE_EQ(f.values(3, 1), 0.0);
  EXPECT_DOUBLE_EQ(f.values(3, 2), 1.5);
  EXPECT_EQ(f.missing_count(), 0u);
  // Observed cells never change.
  for (Eigen::Index r : {0, 1, 2, 4}) EXPECT_EQ(f.values.row(r), v.row(r));
}

TEST(KnnImpute, EmptyColumnPolicy) {
  Eigen::MatrixXd v(3, 2);
  v << 1.0, kMissing, 2.0, kMissing, 3.0, kMissing;
  try {
    knn_impute(toy_frame(v), 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUnimputableColumn);
  }
  EXPECT_EQ(knn_impute(toy_frame(v), 3, true).missing_count(), 3u);
}

TEST(FeatureFrame, SelectAndAppend) {
  Eigen::MatrixXd v(4, 3);
  v << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  FeatureFrame f = toy_frame(v);
  const FeatureFrame c = f.select_columns({"c2", "c0"});
  EXPECT_EQ(c.values(1, 0), 6.0);
  EXPECT_EQ(c.values(1, 1), 4.0);
  EXPECT_THROW(f.select_columns({"nope"}), Error);
  const FeatureFrame r = f.select_rows({3, 0});
  EXPECT_EQ(r.values(0, 0), 10.0);
  EXPECT_EQ(r.timestamps_s[1], 0.0);
  f.append(r);
  EXPECT_EQ(f.rows(), 6u);
  EXPECT_EQ(f.values(5, 2), 3.0);
  EXPECT_THROW(f.append(c), Error);
}

TEST(ColumnModality, CoversAllColumns) {
  EXPECT_EQ(physiological_columns().size(), 12u);
  EXPECT_EQ(column_modality(column::kRsa), Modality::kEcg);
  EXPECT_EQ(column_modality(column::kRvt), Modality::kRsp);
  EXPECT_EQ(column_modality(column::kBrakeRate), Modality::kVehicle);
  EXPECT_THROW(column_modality("x"), Error);
  EXPECT_EQ(parse_modality("SKT"), Modality::kSkt);
}

TEST(BuildFeatureFrame, RowGridAndLabels) {
  SynthConfig cfg;
  cfg.n_subjects = 1;
  cfg.raw_rate_hz = 500.0;
  cfg.phases = {10.0, 10.0, 60.0, 40.0, 20.0};
  cfg.seed = 3;
  const Session s = preprocess_session(generate_session(cfg, 0, SessionKind::kImpatience).session);
  const FeatureFrame f = build_feature_frame(s, true);
  // Centres 15, 16, ... while centre + 15 <= duration (140 s): 111 rows.
  ASSERT_EQ(f.rows(), 111u);
  EXPECT_EQ(f.cols(), 18u);
  EXPECT_DOUBLE_EQ(f.timestamps_s.front(), 15.0);
  for (std::size_t r = 0; r < f.rows(); ++r) {
    EXPECT_EQ(f.labels[r], label_at(s.phases, f.timestamps_s[r]));
  }
  EXPECT_EQ(f.labels[5], RowLabel::kFree);    // t = 20
  EXPECT_EQ(f.labels[75], RowLabel::kStress);  // t = 90
  FrameOptions wide;
  wide.window_s = 10.0;
  wide.hop_s = 2.0;
  EXPECT_EQ(build_vehicle_frame(s, wide).rows(), 66u);
}
