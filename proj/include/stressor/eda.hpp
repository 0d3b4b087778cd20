#pragma once

#include <span>
#include <vector>

#include "stressor/signal.hpp"

namespace stressor {

struct CvxEdaParams {
  double tau0_s = 2.0;  // slow (decay) time constant
  double tau1_s = 0.7;  // fast (rise) time constant
  double alpha = 8e-4;  // L1 weight on the driver
  double gamma = 1e-2;  // ridge weight on the spline coefficients
  double knot_spacing_s = 10.0;
  double solver_rate_hz = 25.0;
  int max_iterations = 10000;
  double tolerance = 1e-8;  // relative duality gap
};

struct SolverReport {
  int iterations = 0;
  double duality_gap = 0.0;
  double relative_gap = 0.0;
  double objective = 0.0;
  double kkt_residual = 0.0;  // natural residual, in units of the standardized input
};

// Components on the solver grid. phasic = bateman_response(driver) exactly and
// input = tonic + phasic + residual exactly.
struct CvxEdaSolution {
  std::vector<double> input;
  std::vector<double> tonic;
  std::vector<double> phasic;
  std::vector<double> driver;
  std::vector<double> residual;
  std::vector<double> spline_coefs;
  std::vector<double> drift_coefs;  // offset and slope of the linear trend
  double dt_s = 0.0;
  SolverReport report;
};

struct EdaDecomposition {
  SignalTrace tonic;
  SignalTrace phasic;
  SignalTrace residual;
  SignalTrace driver;  // on the solver grid
  CvxEdaSolution solver;
};

struct ScrEvent {
  double onset_time_s = 0.0;
  double peak_time_s = 0.0;
  double amplitude_us = 0.0;
  double rise_time_s = 0.0;
};

inline constexpr double kScrMinAmplitudeUs = 0.01;

// Discretized Bateman response to `driver`: the bilinear transform of
// (a1 - a0) / ((s + a0)(s + a1)), a0 = 1/tau0, a1 = 1/tau1, zero initial state.
std::vector<double> bateman_response(std::span<const double> driver, double dt_s, double tau0_s,
                                     double tau1_s);

// Cubic B-spline basis columns (knot spacing in samples) as dense vectors.
std::vector<std::vector<double>> spline_basis(std::size_t n, std::size_t knot_spacing);

// Solves the decomposition QP directly on `y` sampled every `dt_s` seconds.
CvxEdaSolution cvxeda_solve(std::span<const double> y, double dt_s, const CvxEdaParams& params = {});

// cvxEDA objective for an arbitrary (driver, spline, drift) point.
double cvxeda_objective(std::span<const double> y, double dt_s, std::span<const double> driver,
                        std::span<const double> spline_coefs, std::span<const double> drift_coefs,
                        const CvxEdaParams& params);

// Whole-session decomposition: decimate to <= solver_rate_hz, solve, and
// interpolate the components back onto the input grid.
EdaDecomposition cvxeda_decompose(const SignalTrace& eda, const CvxEdaParams& params = {});

std::vector<ScrEvent> extract_scr_events(const EdaDecomposition& decomp,
                                         double min_amplitude_us = kScrMinAmplitudeUs);

struct EdaFeatures {
  double scl_mean_us = kMissing;
  double scl_slope_us_per_s = kMissing;
  double scr_frequency_per_min = kMissing;
  double scr_amplitude_us = kMissing;
  double scr_rise_time_s = kMissing;
};

EdaFeatures eda_features(const EdaDecomposition& decomp, const std::vector<ScrEvent>& events,
                         const TimeInterval& window);

}  // namespace stressor
