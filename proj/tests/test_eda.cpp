#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "stressor/eda.hpp"
#include "stressor/error.hpp"
#include "stressor/synth.hpp"

using namespace stressor;

namespace {

constexpr double kDt = 0.04;  // 25 Hz solver grid

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> pulses(std::size_t n, double dt, const std::vector<std::pair<double, double>>& events) {
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [t0, amp] : events) out[i] += amp * bateman_kernel(i * dt - t0, 2.0, 0.7);
  }
  return out;
}

EdaDecomposition hand_decomposition(std::vector<double> tonic, std::vector<double> phasic, double fs) {
  const std::size_t n = tonic.size();
  return EdaDecomposition{SignalTrace(std::move(tonic), fs, 0.0, "EDA"), SignalTrace(std::move(phasic), fs, 0.0, "EDA"),
                          SignalTrace(std::vector<double>(n, 0.0), fs, 0.0, "EDA"),
                          SignalTrace(std::vector<double>(n, 0.0), fs, 0.0, "EDA"), CvxEdaSolution{}};
}

}  // namespace

TEST(Bateman, UnitAreaImpulseApproximatesBiexponential) {
  const double dt = 0.001;
  std::vector<double> d(20000, 0.0);
  d[0] = 1.0 / dt;
  const std::vector<double> r = bateman_response(d, dt, 2.0, 0.7);
  for (std::size_t i = 100; i < r.size(); i += 500) {
    const double t = i * dt;
    EXPECT_NEAR(r[i], std::exp(-t / 2.0) - std::exp(-t / 0.7), 2e-3) << t;
  }
}

TEST(Bateman, StepResponseSettlesAtAnalogDcGain) {
  const double a0 = 1.0 / 2.0, a1 = 1.0 / 0.7;
  const std::vector<double> r = bateman_response(std::vector<double>(5000, 1.0), kDt, 2.0, 0.7);
  EXPECT_NEAR(r.back(), (a1 - a0) / (a0 * a1), 1e-9);
}

TEST(Bateman, KernelIsPeakNormalised) {
  double peak = 0.0;
  for (double t = 0.0; t < 20.0; t += 1e-4) peak = std::max(peak, bateman_kernel(t, 2.0, 0.7));
  EXPECT_NEAR(peak, 1.0, 1e-6);
  EXPECT_EQ(bateman_kernel(-0.5, 2.0, 0.7), 0.0);
}

TEST(CvxEda, LinearRampHasNoPhasicContent) {
  const std::size_t n = 60 * 25;
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 4.0 + 0.01 * i * kDt;
  const CvxEdaSolution s = cvxeda_solve(y, kDt);
  const double l1 = std::accumulate(s.driver.begin(), s.driver.end(), 0.0);
  EXPECT_LT(l1, 1e-3 * (y.back() - y.front()));
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(s.tonic[i], y[i], 1e-3);
}

TEST(CvxEda, SinglePulseRecovered) {
  const std::size_t n = 60 * 25;
  const double t0 = 20.0;
  const std::vector<double> ph = pulses(n, kDt, {{t0, 1.0}});
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 3.0 + ph[i];
  const CvxEdaSolution s = cvxeda_solve(y, kDt);
  double near = 0.0, total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += s.driver[i];
    if (std::abs(i * kDt - t0) <= 1.0) near += s.driver[i];
  }
  EXPECT_GT(near / total, 0.9);
  const double peak = *std::max_element(s.phasic.begin(), s.phasic.end());
  EXPECT_NEAR(peak, 1.0, 0.1);
  EXPECT_LT(s.report.kkt_residual, 1e-6);
}

TEST(CvxEda, PulsesOnSlowSineTonic) {
  const std::size_t n = 90 * 25;
  const std::vector<double> ph = pulses(n, kDt, {{15.0, 0.6}, {40.0, 1.0}, {65.0, 0.4}});
  std::vector<double> tonic(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    tonic[i] = 5.0 + 0.5 * std::sin(2.0 * std::numbers::pi * i * kDt / 90.0);
    y[i] = tonic[i] + ph[i];
  }
  const CvxEdaSolution s = cvxeda_solve(y, kDt);
  EXPECT_GT(pearson(s.phasic, ph), 0.9);
  double se = 0.0;
  for (std::size_t i = 0; i < n; ++i) se += (s.tonic[i] - tonic[i]) * (s.tonic[i] - tonic[i]);
  const auto [lo, hi] = std::minmax_element(tonic.begin(), tonic.end());
  EXPECT_LT(std::sqrt(se / n), 0.05 * (*hi - *lo));
}

TEST(CvxEda, DecompositionInvariants) {
  const std::size_t n = 60 * 25;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  const std::vector<double> ph = pulses(n, kDt, {{10.0, 0.3}, {30.0, 0.8}, {33.0, 0.2}});
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 2.0 + 0.005 * i * kDt + ph[i] + 0.003 * z(rng);
  const CvxEdaParams p;
  const CvxEdaSolution s = cvxeda_solve(y, kDt, p);
  const std::vector<double> conv = bateman_response(s.driver, kDt, p.tau0_s, p.tau1_s);
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_GE(s.driver[i], 0.0);
    EXPECT_NEAR(s.tonic[i] + s.phasic[i] + s.residual[i], y[i], 1e-9);
    EXPECT_NEAR(conv[i], s.phasic[i], 1e-9);
  }
  EXPECT_LT(s.report.kkt_residual, 1e-6);
  EXPECT_NEAR(cvxeda_objective(y, kDt, s.driver, s.spline_coefs, s.drift_coefs, p), s.report.objective,
              1e-6 * std::abs(s.report.objective));

  // Trivial feasible point: no driver, ridge least-squares tonic.
  const auto basis = spline_basis(n, static_cast<std::size_t>(std::lround(p.knot_spacing_s / kDt)));
  const auto nb = static_cast<Eigen::Index>(basis.size());
  Eigen::MatrixXd B(static_cast<Eigen::Index>(n), nb + 2);
  for (Eigen::Index j = 0; j < nb; ++j) {
    for (std::size_t i = 0; i < n; ++i) B(static_cast<Eigen::Index>(i), j) = basis[static_cast<std::size_t>(j)][i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    B(static_cast<Eigen::Index>(i), nb) = 1.0;
    B(static_cast<Eigen::Index>(i), nb + 1) = static_cast<double>(i + 1) / n;
  }
  Eigen::MatrixXd K = B.transpose() * B;
  for (Eigen::Index j = 0; j < nb; ++j) K(j, j) += p.gamma;
  const Eigen::VectorXd coef = K.ldlt().solve(B.transpose() * Eigen::Map<const Eigen::VectorXd>(y.data(), n));
  const std::vector<double> l(coef.data(), coef.data() + nb);
  const std::vector<double> d{coef[nb], coef[nb + 1]};
  const double trivial = cvxeda_objective(y, kDt, std::vector<double>(n, 0.0), l, d, p);
  EXPECT_LE(s.report.objective, trivial + 1e-9);
}

TEST(CvxEda, PositivelyHomogeneousWithScaledAlpha) {
  const std::size_t n = 45 * 25;
  const std::vector<double> ph = pulses(n, kDt, {{12.0, 0.5}, {28.0, 0.9}});
  std::vector<double> y(n), y3(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = 1.5 + ph[i];
    y3[i] = 3.0 * y[i];
  }
  CvxEdaParams p;
  const CvxEdaSolution a = cvxeda_solve(y, kDt, p);
  p.alpha *= 3.0;
  const CvxEdaSolution b = cvxeda_solve(y3, kDt, p);
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_NEAR(b.tonic[i], 3.0 * a.tonic[i], 1e-5);
    EXPECT_NEAR(b.phasic[i], 3.0 * a.phasic[i], 1e-5);
  }
}

TEST(CvxEda, RejectsBadParameters) {
  const std::vector<double> y(1000, 1.0);
  CvxEdaParams p;
  p.tau0_s = 0.5;
  EXPECT_THROW(cvxeda_solve(y, kDt, p), Error);
  const SignalTrace short_trace(std::vector<double>(250 * 10, 1.0), 250.0, 0.0, "EDA");
  EXPECT_THROW(cvxeda_decompose(short_trace), Error);
}

TEST(CvxEda, SessionDecompositionOnInputGrid) {
  const double fs = 250.0;
  const std::size_t n = static_cast<std::size_t>(60 * fs);
  const std::vector<double> ph = pulses(n, 1.0 / fs, {{20.0, 0.7}});
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 4.0 + ph[i];
  const EdaDecomposition d = cvxeda_decompose(SignalTrace(y, fs, 0.0, "EDA"));
  ASSERT_EQ(d.tonic.size(), n);
  ASSERT_EQ(d.phasic.size(), n);
  EXPECT_DOUBLE_EQ(d.driver.sample_rate_hz(), 25.0);
  for (std::size_t i = 0; i < n; i += 97) {
    EXPECT_NEAR(d.tonic.samples()[i] + d.phasic.samples()[i] + d.residual.samples()[i], y[i], 1e-12);
  }
}

TEST(ScrEvents, FlatPhasicHasNone) {
  const auto d = hand_decomposition(std::vector<double>(1000, 5.0), std::vector<double>(1000, 0.0), 25.0);
  EXPECT_TRUE(extract_scr_events(d).empty());
}

TEST(ScrEvents, CleanPulseAmplitudeAndRise) {
  const double fs = 250.0;
  const std::size_t n = static_cast<std::size_t>(30 * fs);
  const auto d = hand_decomposition(std::vector<double>(n, 5.0), pulses(n, 1.0 / fs, {{10.0, 1.0}}), fs);
  const auto ev = extract_scr_events(d);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_NEAR(ev[0].amplitude_us, 1.0, 0.05);
  EXPECT_GT(ev[0].peak_time_s, ev[0].onset_time_s);
  EXPECT_DOUBLE_EQ(ev[0].rise_time_s, ev[0].peak_time_s - ev[0].onset_time_s);
  // The peak-normalised kernel peaks at t* = ln(tau0/tau1) tau0 tau1 / (tau0 - tau1).
  const double t_peak = std::log(2.0 / 0.7) * 2.0 * 0.7 / 1.3;
  EXPECT_NEAR(ev[0].peak_time_s, 10.0 + t_peak, 2.0 / fs);
}

TEST(ScrEvents, TwoPulsesInTimeOrder) {
  const double fs = 250.0;
  const std::size_t n = static_cast<std::size_t>(30 * fs);
  const auto d = hand_decomposition(std::vector<double>(n, 5.0), pulses(n, 1.0 / fs, {{8.0, 0.5}, {13.0, 0.8}}), fs);
  const auto ev = extract_scr_events(d);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_LT(ev[0].peak_time_s, ev[1].peak_time_s);
  EXPECT_NEAR(ev[0].amplitude_us, 0.5, 0.05);
}

TEST(ScrEvents, ProminenceThreshold) {
  const double fs = 250.0;
  const std::size_t n = static_cast<std::size_t>(30 * fs);
  const auto d = hand_decomposition(std::vector<double>(n, 5.0), pulses(n, 1.0 / fs, {{8.0, 0.005}, {15.0, 0.02}}), fs);
  EXPECT_EQ(extract_scr_events(d).size(), 1u);
  EXPECT_EQ(extract_scr_events(d, 0.001).size(), 2u);
}

TEST(EdaFeatures, ConstantTonicNoEvents) {
  const auto d = hand_decomposition(std::vector<double>(250 * 40, 5.0), std::vector<double>(250 * 40, 0.0), 250.0);
  const EdaFeatures f = eda_features(d, {}, {5.0, 35.0});
  EXPECT_DOUBLE_EQ(f.scl_mean_us, 5.0);
  EXPECT_NEAR(f.scl_slope_us_per_s, 0.0, 1e-12);
  EXPECT_EQ(f.scr_frequency_per_min, 0.0);
  EXPECT_TRUE(is_missing(f.scr_amplitude_us));
  EXPECT_TRUE(is_missing(f.scr_rise_time_s));
}

TEST(EdaFeatures, SlopeAndEventArithmetic) {
  const double fs = 250.0;
  std::vector<double> tonic(250 * 40);
  for (std::size_t i = 0; i < tonic.size(); ++i) tonic[i] = 5.0 + 0.1 * (i / fs);
  const auto d = hand_decomposition(tonic, std::vector<double>(tonic.size(), 0.0), fs);
  const std::vector<ScrEvent> ev{{4.0, 6.0, 0.2, 2.0},  {9.0, 10.0, 0.4, 1.0}, {14.0, 15.5, 0.1, 1.5},
                                 {20.0, 21.0, 0.3, 1.0}, {29.0, 30.0, 0.5, 1.0}, {33.0, 36.0, 0.9, 3.0}};
  const EdaFeatures f = eda_features(d, ev, {5.0, 35.0});
  EXPECT_NEAR(f.scl_slope_us_per_s, 0.1, 1e-9);
  // Peaks at 6, 10, 15.5, 21, 30 fall in [5, 35); 36 does not.
  EXPECT_NEAR(f.scr_frequency_per_min, 10.0, 1e-12);
  EXPECT_NEAR(f.scr_amplitude_us, (0.2 + 0.4 + 0.1 + 0.3 + 0.5) / 5.0, 1e-12);
  EXPECT_NEAR(f.scr_rise_time_s, (2.0 + 1.0 + 1.5 + 1.0 + 1.0) / 5.0, 1e-12);
  const std::vector<ScrEvent> four(ev.begin(), ev.begin() + 4);
  EXPECT_NEAR(eda_features(d, four, {5.0, 35.0}).scr_frequency_per_min, 8.0, 1e-12);
}
