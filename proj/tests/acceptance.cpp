// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Pass criterion numbers as arguments to run a subset.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <complex>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "stressor/cardiac.hpp"
#include "stressor/eda.hpp"
#include "stressor/error.hpp"
#include "stressor/experiments.hpp"
#include "stressor/features.hpp"
#include "stressor/gbt.hpp"
#include "stressor/io.hpp"
#include "stressor/respiration.hpp"
#include "stressor/signal.hpp"
#include "stressor/stats.hpp"
#include "stressor/synth.hpp"

#ifndef STRESSOR_CLI_PATH
#define STRESSOR_CLI_PATH "stressor"
#endif
#ifndef ACCEPTANCE_WORK_DIR
#define ACCEPTANCE_WORK_DIR "acceptance_work"
#endif

using namespace stressor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [x]");
  }
};

std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double ols_slope(const std::vector<double>& t, const std::vector<double>& y) {
  const double mt = mean(t), my = mean(y);
  double sty = 0.0, stt = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    sty += (t[i] - mt) * (y[i] - my);
    stt += (t[i] - mt) * (t[i] - mt);
  }
  return sty / stt;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> gaussian_smooth(const std::vector<double>& x, double dt, double sigma) {
  const int h = static_cast<int>(std::ceil(4.0 * sigma / dt));
  std::vector<double> k(static_cast<std::size_t>(2 * h + 1));
  for (int i = -h; i <= h; ++i) k[static_cast<std::size_t>(i + h)] = std::exp(-0.5 * std::pow(i * dt / sigma, 2));
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (int j = -h; j <= h; ++j) {
      const long q = static_cast<long>(i) + j;
      if (q >= 0 && q < static_cast<long>(x.size())) y[i] += k[static_cast<std::size_t>(j + h)] * x[static_cast<std::size_t>(q)];
    }
  }
  return y;
}

// ---------------------------------------------------------------- 1

Outcome filters() {
  Outcome o;
  const auto t0 = Clock::now();
  const double fs = 2000.0;
  const double half_power = 20.0 * std::log10(std::sqrt(0.5));
  const auto ecg = design_butterworth(IirFilterSpec::highpass(5, 0.5), fs);
  const auto eda = design_butterworth(IirFilterSpec::lowpass(4, 3.0), fs);
  const auto rsp = design_butterworth(IirFilterSpec::bandpass(2, 0.05, 3.0), fs);
  // Evaluate the cascade directly from its coefficients at z = e^{jw}.
  auto response_db = [&](const BiquadCascade& f, double hz) {
    const std::complex<double> z = std::polar(1.0, 2.0 * std::numbers::pi * hz / fs);
    std::complex<double> h = 1.0;
    for (const auto& s : f.sections) {
      h *= (s.b0 + s.b1 / z + s.b2 / (z * z)) / (1.0 + s.a1 / z + s.a2 / (z * z));
    }
    return 20.0 * std::log10(std::abs(h));
  };
  double worst = 0.0;
  for (const auto& [f, hz] : std::vector<std::pair<const BiquadCascade*, double>>{
           {&ecg, 0.5}, {&eda, 3.0}, {&rsp, 0.05}, {&rsp, 3.0}}) {
    worst = std::max(worst, std::abs(response_db(*f, hz) - half_power));
  }
  o.require(worst < 0.01, "max |gain(fc) + 3.01 dB| = " + fmt("%.2e dB", worst));

  std::vector<double> x(20001, 0.0);
  x[10000] = 1.0;
  bool zero_lag = true;
  for (const BiquadCascade* f : {&ecg, &eda, &rsp}) {
    const std::vector<double> y = filtfilt(x, *f);
    // Cross-correlation of a unit impulse with y is y itself shifted by the impulse position.
    std::size_t best = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (std::abs(y[i]) > std::abs(y[best])) best = i;
    }
    zero_lag &= best == 10000;
  }
  o.require(zero_lag, "impulse cross-correlation peaks at lag 0");
  const double secs = seconds_since(t0);
  o.require(secs < 1.0, "runtime " + fmt("%.3f s", secs));
  return o;
}

// ---------------------------------------------------------------- 2

Outcome detectors() {
  Outcome o;
  double worst_recall = 1.0, worst_precision = 1.0, worst_period = 0.0, worst_match = 1.0;
  double worst_corr = 1.0, worst_kkt = 0.0, worst_secs = 0.0;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto t0 = Clock::now();
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.include_vehicle = false;
    const SynthSession raw = generate_session(cfg, 0, SessionKind::kSurprise);
    const Session s = preprocess_session(raw.session);
    const RPeakSeries peaks = detect_r_peaks(s.trace(channel::kEcg));
    const BreathCycleSeries cycles = detect_breath_cycles(s.trace(channel::kRspFused));
    const EdaDecomposition dec = cvxeda_decompose(s.trace(channel::kEda));
    worst_secs = std::max(worst_secs, seconds_since(t0));

    auto matched = [](const std::vector<double>& from, const std::vector<double>& to) {
      std::size_t hit = 0;
      for (double a : from) {
        const auto it = std::lower_bound(to.begin(), to.end(), a - 0.02);
        if (it != to.end() && *it <= a + 0.02) ++hit;
      }
      return static_cast<double>(hit) / static_cast<double>(from.size());
    };
    worst_recall = std::min(worst_recall, matched(raw.truth.beat_times_s, peaks.peak_times_s));
    worst_precision = std::min(worst_precision, matched(peaks.peak_times_s, raw.truth.beat_times_s));

    // Each true breath pairs with the detected cycle whose onset is nearest (within 0.5 s).
    std::vector<double> err;
    for (const auto& b : raw.truth.breaths) {
      const BreathCycle* best = nullptr;
      for (const auto& c : cycles.cycles) {
        if (std::abs(c.onset_s - b.onset_s) < 0.5 && (!best || std::abs(c.onset_s - b.onset_s) < std::abs(best->onset_s - b.onset_s))) {
          best = &c;
        }
      }
      if (best) err.push_back(std::abs(best->period_s() - (b.end_s - b.onset_s)));
    }
    worst_match = std::min(worst_match, static_cast<double>(err.size()) / static_cast<double>(raw.truth.breaths.size()));
    worst_period = std::max(worst_period, err.empty() ? 1e9 : mean(err));

    const auto& d = dec.driver;
    const double dt = 1.0 / d.sample_rate_hz();
    std::vector<double> truth(d.size(), 0.0);
    for (std::size_t e = 0; e < raw.truth.scr_times_s.size(); ++e) {
      const auto i = static_cast<std::size_t>(std::llround(raw.truth.scr_times_s[e] / dt));
      if (i < truth.size()) truth[i] += raw.truth.scr_amplitudes_us[e];
    }
    worst_corr = std::min(worst_corr, pearson(gaussian_smooth(d.values(), dt, 0.25), gaussian_smooth(truth, dt, 0.25)));
    worst_kkt = std::max(worst_kkt, dec.solver.report.kkt_residual);
  }
  o.require(worst_recall >= 0.95, "R-peak recall " + fmt("%.4f", worst_recall));
  o.require(worst_precision >= 0.95, "precision " + fmt("%.4f", worst_precision));
  o.require(worst_period <= 0.1 && worst_match >= 0.9,
            "breath period MAE " + fmt("%.3f s", worst_period) + " over " + fmt("%.1f%%", 100 * worst_match) + " matched");
  o.require(worst_corr > 0.9, "driver corr " + fmt("%.4f", worst_corr));
  o.require(worst_kkt < 1e-6, "KKT " + fmt("%.1e", worst_kkt));
  o.require(worst_secs < 30.0, "slowest session " + fmt("%.1f s", worst_secs));
  return o;
}

// ---------------------------------------------------------------- 3

Outcome feature_oracle() {
  Outcome o;
  const TimeInterval w{100.0, 130.0};
  const double fs = 250.0;

  // Heart: irregular beats from 90 to 140 s.
  RPeakSeries peaks;
  for (double t = 90.0; t < 140.0;) {
    peaks.peak_times_s.push_back(t);
    t += 0.8 + 0.15 * std::sin(0.9 * t);
  }
  const IbiSeries ibis = ibi_series(peaks);

  // Breaths of varying length, a cycle straddling each window edge.
  BreathCycleSeries cycles;
  double on = 96.5;
  for (int k = 0; on < 135.0; ++k) {
    const double per = 3.0 + 0.4 * (k % 3);
    cycles.cycles.push_back({on, on + 0.45 * per, on + per, 0.6 + 0.1 * (k % 4)});
    on += per;
  }

  // EDA tonic, SCR events and SKT on the 250 Hz grid.
  std::vector<double> tonic(static_cast<std::size_t>(200 * fs)), skt(tonic.size());
  for (std::size_t i = 0; i < tonic.size(); ++i) {
    const double t = static_cast<double>(i) / fs;
    tonic[i] = 2.0 + 0.01 * t + 0.1 * std::sin(0.3 * t);
    skt[i] = 33.0 - 0.002 * t + 0.05 * std::cos(0.2 * t);
  }
  EdaDecomposition dec;
  dec.tonic = SignalTrace(tonic, fs, 0.0, "tonic");
  const std::vector<ScrEvent> scr{{97.0, 99.5, 0.2, 2.5},  {101.0, 103.0, 0.3, 2.0}, {110.0, 111.2, 0.05, 1.2},
                                  {118.0, 120.0, 0.5, 2.0}, {128.0, 130.0, 0.4, 2.0}};
  const SignalTrace skt_trace(skt, fs, 0.0, channel::kSkt);

  const double hr = heart_rate(peaks, w);
  const double rsa = rsa_p2t(ibis, cycles, w);
  const EdaFeatures e = eda_features(dec, scr, w);
  const RspFeatures r = rsp_features(cycles, w);
  const SktFeatures k = skt_features(skt_trace, w);

  // Oracles in straight-line code.
  int n_peaks = 0;
  for (double p : peaks.peak_times_s) n_peaks += (p >= 100.0 && p < 130.0);
  const double hr_o = n_peaks / 0.5;

  std::vector<double> ranges, periods, depths;
  for (const auto& c : cycles.cycles) {
    if (c.onset_s < 100.0 || c.end_s > 130.0) continue;
    periods.push_back(c.end_s - c.onset_s);
    depths.push_back(c.depth);
    double lo = 1e9, hi = -1e9;
    int n = 0;
    for (std::size_t i = 1; i < peaks.peak_times_s.size(); ++i) {
      const double onset = peaks.peak_times_s[i - 1];
      const double ibi = peaks.peak_times_s[i] - onset;
      if (onset >= c.onset_s && onset < c.end_s && ibi >= 0.3 && ibi <= 2.0) {
        lo = std::min(lo, ibi);
        hi = std::max(hi, ibi);
        ++n;
      }
    }
    if (n >= 3) ranges.push_back(hi - lo);
  }
  const double rsa_o = mean(ranges);
  const double period_o = mean(periods), depth_o = mean(depths), rvt_o = depth_o / period_o;

  std::vector<double> tt, ty, sy;
  for (std::size_t i = 25000; i < 32500; ++i) {
    tt.push_back(static_cast<double>(i) / fs);
    ty.push_back(tonic[i]);
    sy.push_back(skt[i]);
  }
  int n_scr = 0;
  double amp = 0.0, rise = 0.0;
  for (const auto& ev : scr) {
    if (ev.peak_time_s >= 100.0 && ev.peak_time_s < 130.0) {
      ++n_scr;
      amp += ev.amplitude_us;
      rise += ev.rise_time_s;
    }
  }

  const std::vector<std::tuple<const char*, double, double, double>> checks{
      {column::kHr, hr, hr_o, 1e-9},
      {column::kRsa, rsa, rsa_o, 1e-9},
      {column::kSclMean, e.scl_mean_us, mean(ty), 1e-9},
      {column::kSclSlope, e.scl_slope_us_per_s, ols_slope(tt, ty), 1e-9},
      {column::kScrFrequency, e.scr_frequency_per_min, n_scr / 0.5, 1e-9},
      {column::kScrAmplitude, e.scr_amplitude_us, amp / n_scr, 1e-9},
      {column::kScrRiseTime, e.scr_rise_time_s, rise / n_scr, 1e-9},
      {column::kRspPeriod, r.period_s, period_o, 1e-9},
      {column::kRspDepth, r.depth, depth_o, 1e-9},
      {column::kRvt, r.rvt, rvt_o, 1e-9},
      {column::kTMean, k.t_mean, mean(sy), 1e-9},
      {column::kTSlope, k.t_slope, ols_slope(tt, sy), 1e-9}};
  double worst = 0.0;
  std::string bad;
  for (const auto& [name, got, want, tol] : checks) {
    const double d = std::abs(got - want);
    if (!(d <= tol)) bad += std::string(" ") + name;
    worst = std::max(worst, std::isnan(d) ? 1e300 : d);
  }
  o.require(bad.empty() && ranges.size() >= 3 && n_scr == 3,
            "12 features, max |diff| " + fmt("%.1e", worst) + (bad.empty() ? "" : ", off:" + bad));
  return o;
}

// ---------------------------------------------------------------- 4

Outcome statistics() {
  Outcome o;
  std::mt19937_64 rng(40);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.0, 1.0);

  int auroc_ok = 0;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> pos(2 + rep % 37), neg(3 + rep % 23);
    for (double& v : pos) v = rep % 2 ? std::floor(4 * u(rng)) : z(rng) + 0.4;
    for (double& v : neg) v = rep % 2 ? std::floor(4 * u(rng)) : z(rng);
    double s = 0.0;
    for (double a : pos) {
      for (double b : neg) s += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
    }
    auroc_ok += std::abs(auroc(pos, neg) - s / (pos.size() * neg.size())) < 1e-12;
  }
  o.require(auroc_ok == 200, "AUROC brute force " + std::to_string(auroc_ok) + "/200");

  int fdr_ok = 0;
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> p(5 + rep % 40);
    for (double& v : p) v = u(rng) < 0.25 ? 0.02 * u(rng) : u(rng);
    std::vector<double> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    std::size_t k = 0;
    for (std::size_t i = 1; i <= sorted.size(); ++i) {
      if (sorted[i - 1] <= 0.05 * static_cast<double>(i) / static_cast<double>(sorted.size())) k = i;
    }
    const FdrResult r = fdr_bh(p, 0.05);
    bool same = true;
    for (std::size_t i = 0; i < p.size(); ++i) same &= r.rejected[i] == (k > 0 && p[i] <= sorted[k - 1]);
    fdr_ok += same;
  }
  o.require(fdr_ok == 100, "BH step-up " + std::to_string(fdr_ok) + "/100");

  int wil_ok = 0, wil_n = 0;
  for (std::size_t n = 5; n <= 12; ++n) {
    for (int rep = 0; rep < 5; ++rep, ++wil_n) {
      std::vector<double> d(n);
      for (double& v : d) v = rep % 2 ? (u(rng) < 0.6 ? 1.0 : -1.0) * (1 + std::floor(3 * u(rng))) : z(rng) + 0.2;
      const std::vector<double> ranks = average_ranks([&] {
        std::vector<double> m;
        for (double v : d) m.push_back(std::abs(v));
        return m;
      }());
      double w = 0.0;
      for (std::size_t i = 0; i < n; ++i) w += d[i] > 0 ? ranks[i] : 0.0;
      double ge = 0.0;
      for (unsigned mask = 0; mask < (1u << n); ++mask) {
        double t = 0.0;
        for (std::size_t i = 0; i < n; ++i) t += (mask >> i) & 1u ? ranks[i] : 0.0;
        ge += t >= w - 1e-9;
      }
      wil_ok += std::abs(wilcoxon_signed_rank(d, Alternative::kGreater).p - ge / std::ldexp(1.0, static_cast<int>(n))) < 1e-12;
    }
  }
  o.require(wil_ok == wil_n, "Wilcoxon exact " + std::to_string(wil_ok) + "/" + std::to_string(wil_n));

  // LMM at theta = 0 against OLS via normal equations.
  {
    const int n = 240;
    std::vector<double> x(n), y(n);
    std::vector<std::string> g(n);
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd Y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = z(rng);
      y[i] = -0.5 + 1.2 * x[i] + z(rng);
      g[i] = std::to_string(i % 8);
      X(i, 0) = 1.0;
      X(i, 1) = x[i];
      Y(i) = y[i];
    }
    const Eigen::Vector2d b = (X.transpose() * X).ldlt().solve(X.transpose() * Y);
    const LmmFit f = lmm_fit_fixed_theta(y, x, g, 0.0);
    const double diff = std::max(std::abs(f.beta[0] - b(0)), std::abs(f.beta[1] - b(1)));
    o.require(diff < 1e-6, "LMM vs OLS " + fmt("%.1e", diff));
  }

  int covered = 0;
  for (int rep = 0; rep < 100; ++rep) {
    std::mt19937_64 r2(1000 + rep);
    std::vector<double> x, y;
    std::vector<std::string> g;
    for (int s = 0; s < 15; ++s) {
      const double us = 0.8 * z(r2);
      for (int k = 0; k < 12; ++k) {
        x.push_back(z(r2));
        y.push_back(1.0 - 0.6 * x.back() + us + 0.5 * z(r2));
        g.push_back(std::to_string(s));
      }
    }
    const LmmFit f = lmm_fit(y, x, g);
    covered += f.beta_ci[1].low <= -0.6 && -0.6 <= f.beta_ci[1].high;
  }
  o.require(covered >= 90, "beta1 CI coverage " + std::to_string(covered) + "/100");
  return o;
}

// ---------------------------------------------------------------- 5

double cond_expectation(const RegressionTree& t, int node, const std::vector<double>& x, unsigned mask) {
  const TreeNode& n = t.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) return n.weight;
  if (mask & (1u << n.feature)) {
    const double v = x[static_cast<std::size_t>(n.feature)];
    const bool left = is_missing(v) ? n.default_left : v < n.threshold;
    return cond_expectation(t, left ? n.left : n.right, x, mask);
  }
  const double cl = t.nodes[static_cast<std::size_t>(n.left)].cover;
  const double cr = t.nodes[static_cast<std::size_t>(n.right)].cover;
  return (cl * cond_expectation(t, n.left, x, mask) + cr * cond_expectation(t, n.right, x, mask)) / (cl + cr);
}

Outcome tree_shap_checks() {
  Outcome o;
  std::mt19937_64 rng(50);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto data = [&](int n, int p) {
    Eigen::MatrixXd X(n, p);
    std::vector<double> y(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < p; ++c) X(r, c) = u(rng) < 0.05 ? kMissing : z(rng);
      const double a = is_missing(X(r, 0)) ? 0.0 : X(r, 0);
      const double b = p > 1 && !is_missing(X(r, 1)) ? X(r, 1) : 0.0;
      y[static_cast<std::size_t>(r)] = u(rng) < 1.0 / (1.0 + std::exp(-(1.5 * a - b + a * b))) ? 1.0 : 0.0;
    }
    return std::pair(X, y);
  };

  {
    const auto [X, y] = data(1000, 8);
    GbtConfig cfg;
    cfg.n_trees = 50;
    cfg.max_depth = 5;
    const GbtModel m = fit_gbt(X, y, cfg);
    double worst = 0.0;
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(X.cols()));
      for (Eigen::Index c = 0; c < X.cols(); ++c) row[static_cast<std::size_t>(c)] = X(r, c);
      const ShapAttribution a = tree_shap(m, row);
      double s = a.base_value;
      for (double v : a.values) s += v;
      worst = std::max(worst, std::abs(s - m.margin(row)));
    }
    o.require(worst < 1e-6, "local accuracy max " + fmt("%.1e", worst) + " on 1000 rows");
  }

  double worst = 0.0;
  int trees = 0;
  for (int p = 1; p <= 4; ++p) {
    const auto [X, y] = data(400, p);
    GbtConfig cfg;
    cfg.n_trees = 5;
    cfg.max_depth = 6;
    cfg.lambda_l2 = 1.0;
    const GbtModel m = fit_gbt(X, y, cfg);
    const double fact[] = {1, 1, 2, 6, 24};
    for (const auto& tree : m.trees) {
      ++trees;
      for (Eigen::Index r = 0; r < 50; ++r) {
        std::vector<double> row(static_cast<std::size_t>(p));
        for (int c = 0; c < p; ++c) row[static_cast<std::size_t>(c)] = X(r, c);
        const auto fast = tree_shap_single(tree, row, p);
        for (int i = 0; i < p; ++i) {
          double phi = 0.0;
          for (unsigned s = 0; s < (1u << p); ++s) {
            if (s & (1u << i)) continue;
            const int k = __builtin_popcount(s);
            phi += fact[k] * fact[p - k - 1] / fact[p] *
                   (cond_expectation(tree, 0, row, s | (1u << i)) - cond_expectation(tree, 0, row, s));
          }
          worst = std::max(worst, std::abs(phi - fast[static_cast<std::size_t>(i)]));
        }
      }
    }
  }
  o.require(worst < 1e-9, "brute-force Shapley max diff " + fmt("%.1e", worst) + " over " + std::to_string(trees) + " trees");
  return o;
}

// ---------------------------------------------------------------- 6, 7

std::vector<SessionFrames> cohort_frames(const SynthConfig& cfg) {
  const auto cohort = generate_cohort(cfg);
  std::vector<Session> pre;
  for (const auto& s : cohort) pre.push_back(preprocess_session(s.session));
  return build_dataset_frames(pre);
}

constexpr std::uint64_t kCohortSeed = 1;

LosoConfig e2e_config() {
  LosoConfig c;
  c.n_seeds = 3;
  c.bootstrap_iters = 200;
  c.master_seed = kCohortSeed;
  return c;
}

std::optional<std::vector<SessionFrames>> g_default_frames;
std::optional<double> g_default_frames_secs;

const std::vector<SessionFrames>& default_frames() {
  if (!g_default_frames) {
    const auto t0 = Clock::now();
    SynthConfig cfg;
    cfg.n_subjects = 12;
    cfg.seed = kCohortSeed;
    g_default_frames = cohort_frames(cfg);
    g_default_frames_secs = seconds_since(t0);
  }
  return *g_default_frames;
}

Outcome end_to_end() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto& frames = default_frames();
  const LosoConfig cfg = e2e_config();
  const LosoResult all = run_loso(frames, cfg);
  o.require(all.report.auroc.auroc >= 0.90, "All AUROC " + fmt("%.3f", all.report.auroc.auroc));

  std::string singles;
  bool gain = true;
  for (Modality m : {Modality::kEcg, Modality::kEda, Modality::kRsp, Modality::kSkt}) {
    LosoConfig c = cfg;
    c.modalities = {m};
    c.bootstrap_iters = 0;
    const double a = run_loso(frames, c).report.auroc.auroc;
    gain &= all.report.auroc.auroc >= a - 0.02;
    singles += std::string(singles.empty() ? "" : " ") + std::string(to_string(m)) + " " + fmt("%.3f", a);
  }
  o.require(gain, "All >= single - 0.02 (" + singles + ")");

  SynthConfig zero;
  zero.n_subjects = 12;
  zero.seed = kCohortSeed + 100;
  zero.effects = zero.effects.scaled(0.0);
  const LosoResult null = run_loso(cohort_frames(zero), cfg);
  const double za = null.report.auroc.auroc;
  o.require(za >= 0.45 && za <= 0.55, "zero-effect AUROC " + fmt("%.3f", za));
  const double secs = seconds_since(t0);
  o.require(secs < 600.0, "runtime " + fmt("%.0f s", secs));
  return o;
}

std::string row_bytes(const Eigen::MatrixXd& X, Eigen::Index r) {
  std::string b(static_cast<std::size_t>(X.cols()) * sizeof(double), '\0');
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    double v = X(r, c);
    if (is_missing(v)) v = kMissing;
    std::memcpy(b.data() + static_cast<std::size_t>(c) * sizeof(double), &v, sizeof v);
  }
  return b;
}

Outcome loso_hygiene() {
  Outcome o;
  const auto& frames = default_frames();
  LosoConfig cfg = e2e_config();
  cfg.bootstrap_iters = 0;
  const LosoResult res = run_loso(frames, cfg);
  const NormalizedDataset data = normalize_sessions(frames, cfg.knn_k, cfg.baseline_s);
  const auto columns = res.columns;

  // Independent audit: rebuild each fold's input and look for any held-out row.
  int leaked = 0, mismatched = 0;
  for (const FoldAudit& a : res.audits) {
    leaked += a.leaked;
    const FoldData fold = fold_training_data(data.sessions, a.held_out, a.seed_index, cfg, columns);
    mismatched += fold_fingerprint(fold) != a.fingerprint;
    std::set<std::string> held;
    for (const auto& s : data.sessions) {
      if (s.meta.subject_id != a.held_out) continue;
      Eigen::MatrixXd X(static_cast<Eigen::Index>(s.features.rows()), static_cast<Eigen::Index>(columns.size()));
      for (std::size_t c = 0; c < columns.size(); ++c) X.col(static_cast<Eigen::Index>(c)) = s.features.values.col(s.features.column_index(columns[c]));
      for (Eigen::Index r = 0; r < X.rows(); ++r) held.insert(row_bytes(X, r));
    }
    bool hit = std::find(fold.train_subjects.begin(), fold.train_subjects.end(), a.held_out) != fold.train_subjects.end();
    for (const auto& p : fold.provenance) hit |= p.rfind(a.held_out + "/", 0) == 0;
    for (Eigen::Index r = 0; r < fold.X.rows() && !hit; ++r) hit |= held.count(row_bytes(fold.X, r)) > 0;
    leaked += hit;
  }
  o.require(leaked == 0 && mismatched == 0, std::to_string(res.audits.size()) + " folds, " + std::to_string(leaked) +
                                                " leaks, " + std::to_string(mismatched) + " fingerprint mismatches");
  return o;
}

// ---------------------------------------------------------------- 8

Outcome event_steps() {
  Outcome o;
  int correct_flags = 0, missed = 0, false_flags = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(800 + seed);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> level(0.15, 0.5);
    Phases ph;
    ph.free_driving = TimeInterval{120.0, 420.0};
    ph.stressor_driving = TimeInterval{420.0, 660.0};
    ph.recovery = TimeInterval{660.0, 780.0};
    std::vector<SessionPredictions> preds;
    for (int s = 0; s < 12; ++s) {
      const std::string subj = "S" + std::to_string(s);
      const double base = level(rng);
      // Injected session: noisy, +0.3 for 60 s after each onset, seen through a 30 s centred mean.
      SessionPredictions inj;
      inj.meta.subject_id = subj;
      inj.meta.kind = SessionKind::kSurprise;
      inj.meta.phases = ph;
      inj.meta.events = {{"crash", 450.0}, {"explosion", 560.0}};
      std::vector<double> raw(781);
      for (std::size_t t = 0; t < raw.size(); ++t) {
        double v = base + 0.02 * z(rng);
        for (const auto& e : inj.meta.events) v += (t >= e.onset_s && t < e.onset_s + 60.0) ? 0.3 : 0.0;
        raw[t] = v;
      }
      for (int t = 15; t <= 765; ++t) {
        double m = 0.0;
        for (int k = t - 15; k < t + 15; ++k) m += raw[static_cast<std::size_t>(k)];
        inj.times_s.push_back(t);
        inj.p_stress.push_back(m / 30.0);
        inj.labels.push_back(label_at(ph, t));
      }
      preds.push_back(inj);
      // Control session: flat predictions around its own events.
      SessionPredictions ctl = inj;
      ctl.meta.kind = SessionKind::kIrritation;
      ctl.meta.events = {{"fog", 450.0}, {"slow_van", 560.0}};
      std::fill(ctl.p_stress.begin(), ctl.p_stress.end(), base);
      preds.push_back(ctl);
    }
    for (const auto& ev : event_sensitivity(preds)) {
      const bool injected = ev.event_name == "crash" || ev.event_name == "explosion";
      if (injected) (ev.flagged ? correct_flags : missed)++;
      else false_flags += ev.flagged;
    }
  }
  o.require(missed == 0, std::to_string(correct_flags) + "/40 injected events flagged");
  o.require(false_flags == 0, std::to_string(false_flags) + " false flags on 40 flat controls");
  return o;
}

// ---------------------------------------------------------------- 9

Outcome behavior_recovery() {
  Outcome o;
  const double beta = BehaviorCouplings{}.speed;
  int covered = 0, fitted = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SynthConfig cfg;
    cfg.n_subjects = 12;
    cfg.raw_rate_hz = 250.0;
    cfg.session_kinds = {SessionKind::kImpatience};
    cfg.seed = 9000 + seed;
    std::vector<SessionFrames> frames;
    std::vector<SessionPredictions> preds;
    for (const auto& s : generate_cohort(cfg)) {
      SessionFrames f;
      f.meta = SessionMeta::of(s.session);
      f.vehicle_metrics = build_vehicle_frame(s.session);
      SessionPredictions p;
      p.meta = f.meta;
      for (std::size_t r = 0; r < f.vehicle_metrics.rows(); ++r) {
        const double t = f.vehicle_metrics.timestamps_s[r];
        p.times_s.push_back(t);
        p.p_stress.push_back(s.truth.mean_stress(t - 15.0, t + 15.0));
        p.labels.push_back(f.vehicle_metrics.labels[r]);
      }
      frames.push_back(std::move(f));
      preds.push_back(std::move(p));
    }
    const BehaviorReport rep = behavior_association(preds, frames, SessionKind::kImpatience, 30);
    for (const auto& m : rep.metrics) {
      if (m.metric != column::kSpeedMean || !m.fit) continue;
      ++fitted;
      covered += m.fit->beta_ci[1].low <= beta && beta <= m.fit->beta_ci[1].high;
    }
  }
  o.require(fitted == 50 && covered >= 45, "beta_speed " + fmt("%.3f", beta) + " inside 95% CI in " +
                                               std::to_string(covered) + "/50 seeds");
  return o;
}

// ---------------------------------------------------------------- 10

Outcome cli_determinism() {
  Outcome o;
  const fs::path work = fs::path(ACCEPTANCE_WORK_DIR) / "cli";
  fs::remove_all(work);
  fs::create_directories(work);
  write_json(work / "config.json",
             {{"seed", 11},
              {"synth",
               {{"n_subjects", 4},
                {"raw_rate_hz", 500},
                {"phases",
                 {{"baseline_video_s", 20}, {"practice_s", 20}, {"free_driving_s", 120}, {"stressor_driving_s", 90},
                  {"recovery_s", 70}}}}},
              {"experiment", {{"n_seeds", 2}, {"bootstrap_iters", 50}}}});
  const std::string cli = STRESSOR_CLI_PATH;
  const std::string cfg = (work / "config.json").string();
  auto run = [&](const std::string& name, const std::string& jobs) {
    const fs::path d = work / name;
    const std::string common = " --config " + cfg + " --jobs " + jobs + " 2>>" + (work / "stderr.txt").string();
    const std::vector<std::string> steps{
        cli + " synth --out " + (d / "raw").string() + common,
        cli + " preprocess --in " + (d / "raw").string() + " --out " + (d / "pre").string() + common,
        cli + " features --in " + (d / "pre").string() + " --out " + (d / "feat").string() + common,
        cli + " experiment loso --in " + (d / "feat").string() + " --out " + (d / "loso").string() + common};
    for (const auto& s : steps) {
      if (std::system(s.c_str()) != 0) return false;
    }
    return true;
  };
  const bool ran = run("a", "1") && run("b", "2");
  o.require(ran, "two CLI pipelines completed");
  if (!ran) return o;
  bool same = true;
  std::string digest;
  for (const char* f : {"predictions.csv", "report.json"}) {
    const std::string a = sha256_file(work / "a" / "loso" / f);
    same &= a == sha256_file(work / "b" / "loso" / f);
    digest += std::string(digest.empty() ? "" : ", ") + f + " " + a.substr(0, 12);
  }
  o.require(same, "identical digests (" + digest + ")");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"filter correctness", filters},
      {"detector recovery", detectors},
      {"feature oracle", feature_oracle},
      {"statistics oracles", statistics},
      {"TreeSHAP", tree_shap_checks},
      {"end-to-end synthetic cohort", end_to_end},
      {"LOSO hygiene", loso_hygiene},
      {"event sensitivity", event_steps},
      {"behaviour recovery", behavior_recovery},
      {"CLI determinism", cli_determinism}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    failed += !out.pass;
    std::printf("%s  %2d  %-28s %s (%.1f s)\n", out.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                out.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
