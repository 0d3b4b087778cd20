#include "stressor/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "stressor/error.hpp"

namespace stressor {

std::vector<double> average_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double auroc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) {
    throw Error(ErrorKind::kUndefinedMetric, "AUROC needs at least one score in each class");
  }
  std::vector<double> all(pos.begin(), pos.end());
  all.insert(all.end(), neg.begin(), neg.end());
  const std::vector<double> ranks = average_ranks(all);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) rank_sum += ranks[i];
  const auto np = static_cast<double>(pos.size());
  const auto nn = static_cast<double>(neg.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double auroc_labeled(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorKind::kShape, "scores and labels differ in length");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(scores[i]);
  return auroc(pos, neg);
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw Error(ErrorKind::kInsufficientData, "quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace {

constexpr int kMaxRedraws = 1000;

// Draws one resample of [0, n) and evaluates `statistic`, redrawing when the
// statistic is undefined on the resample.
double resampled_statistic(std::size_t n, std::mt19937_64& rng,
                           const std::function<double(std::span<const std::size_t>)>& statistic,
                           std::vector<std::size_t>& idx) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    idx.resize(n);
    for (auto& i : idx) i = pick(rng);
    try {
      return statistic(idx);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kUndefinedMetric) throw;
    }
  }
  throw Error(ErrorKind::kUndefinedMetric, "statistic undefined on every bootstrap resample");
}

}  // namespace

Interval bootstrap_ci(std::size_t n, const std::function<double(std::span<const std::size_t>)>& statistic,
                      int n_iter, std::uint64_t seed, double level) {
  if (n < 2) throw Error(ErrorKind::kInsufficientData, "bootstrap needs at least two observations");
  if (n_iter < 1) throw Error(ErrorKind::kValidation, "bootstrap needs at least one iteration");
  std::vector<double> stats(static_cast<std::size_t>(n_iter));
  std::vector<std::size_t> idx;
  for (int i = 0; i < n_iter; ++i) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(i));
    stats[static_cast<std::size_t>(i)] = resampled_statistic(n, rng, statistic, idx);
  }
  const double tail = (1.0 - level) / 2.0;
  return {quantile(stats, tail), quantile(stats, 1.0 - tail)};
}

Interval bootstrap_ci_values(std::span<const double> values,
                             const std::function<double(std::span<const double>)>& statistic,
                             int n_iter, std::uint64_t seed) {
  std::vector<double> buf;
  return bootstrap_ci(
      values.size(),
      [&](std::span<const std::size_t> idx) {
        buf.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) buf[i] = values[idx[i]];
        return statistic(buf);
      },
      n_iter, seed);
}

AurocResult auroc_with_ci(std::span<const double> scores, std::span<const int> labels, int n_iter,
                          std::uint64_t seed) {
  AurocResult r;
  r.auroc = auroc_labeled(scores, labels);
  for (int l : labels) (l == 1 ? r.n_pos : r.n_neg)++;
  std::vector<double> s;
  std::vector<int> l;
  const Interval ci = bootstrap_ci(
      scores.size(),
      [&](std::span<const std::size_t> idx) {
        s.resize(idx.size());
        l.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
          s[i] = scores[idx[i]];
          l[i] = labels[idx[i]];
        }
        return auroc_labeled(s, l);
      },
      n_iter, seed);
  r.ci_low = std::min(ci.low, r.auroc);
  r.ci_high = std::max(ci.high, r.auroc);
  return r;
}

double permutation_pvalue_from_null(double observed, std::span<const double> null_values) {
  std::size_t exceed = 0;
  for (double v : null_values) exceed += v >= observed ? 1 : 0;
  return (1.0 + static_cast<double>(exceed)) / (1.0 + static_cast<double>(null_values.size()));
}

double permutation_pvalue(double observed, const std::function<ScoredSample(std::uint64_t)>& null_run,
                          int n_models, int n_boot, std::uint64_t seed) {
  if (n_models < 1 || n_boot < 1) throw Error(ErrorKind::kValidation, "permutation needs n_models, n_boot >= 1");
  std::vector<double> nulls;
  std::vector<std::size_t> idx;
  std::vector<double> s;
  std::vector<int> l;
  for (int m = 0; m < n_models; ++m) {
    const ScoredSample sample = null_run(seed + static_cast<std::uint64_t>(m));
    const auto stat = [&](std::span<const std::size_t> ix) {
      s.resize(ix.size());
      l.resize(ix.size());
      for (std::size_t i = 0; i < ix.size(); ++i) {
        s[i] = sample.scores[ix[i]];
        l[i] = sample.labels[ix[i]];
      }
      return auroc_labeled(s, l);
    };
    for (int b = 0; b < n_boot; ++b) {
      std::mt19937_64 rng(seed + static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(n_boot) +
                          static_cast<std::uint64_t>(b));
      nulls.push_back(resampled_statistic(sample.scores.size(), rng, stat, idx));
    }
  }
  return permutation_pvalue_from_null(observed, nulls);
}

FdrResult fdr_bh(std::span<const double> p, double alpha) {
  const std::size_t m = p.size();
  FdrResult r;
  r.rejected.assign(m, false);
  r.adjusted.assign(m, 1.0);
  if (m == 0) return r;
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::size_t cutoff = 0;  // number rejected
  for (std::size_t i = 0; i < m; ++i) {
    if (p[order[i]] <= static_cast<double>(i + 1) * alpha / static_cast<double>(m)) cutoff = i + 1;
  }
  for (std::size_t i = 0; i < cutoff; ++i) r.rejected[order[i]] = true;
  double running = 1.0;
  for (std::size_t i = m; i-- > 0;) {
    running = std::min(running, static_cast<double>(m) * p[order[i]] / static_cast<double>(i + 1));
    r.adjusted[order[i]] = std::min(1.0, running);
  }
  return r;
}

double normal_two_sided_p(double z) {
  const boost::math::normal nd;
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(nd, std::abs(z))));
}

double student_t_two_sided_p(double t, double df) {
  if (std::isinf(t)) return 0.0;
  const boost::math::students_t dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> d, Alternative alt) {
  std::vector<double> nz;
  for (double v : d) {
    if (v != 0.0) nz.push_back(v);
  }
  if (nz.empty()) throw Error(ErrorKind::kUndefinedTest, "all differences are zero");
  if (nz.size() < 5) {
    throw Error(ErrorKind::kUndefinedTest, "signed-rank test needs at least 5 non-zero differences");
  }
  const std::size_t n = nz.size();
  std::vector<double> mag(n);
  for (std::size_t i = 0; i < n; ++i) mag[i] = std::abs(nz[i]);
  const std::vector<double> ranks = average_ranks(mag);

  WilcoxonResult r;
  r.n = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (nz[i] > 0) r.statistic += ranks[i];
  }

  double p_greater = 0.0, p_less = 0.0;
  if (n <= 25) {
    // Doubled ranks are integers even with ties.
    std::vector<int> dr(n);
    int total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dr[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
      total += dr[i];
    }
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    int reach = 0;
    for (int v : dr) {
      for (int s = reach; s >= 0; --s) {
        if (count[static_cast<std::size_t>(s)] != 0.0) count[static_cast<std::size_t>(s + v)] += count[static_cast<std::size_t>(s)];
      }
      reach += v;
    }
    const double denom = std::ldexp(1.0, static_cast<int>(n));
    const int w = static_cast<int>(std::lround(2.0 * r.statistic));
    double ge = 0.0, le = 0.0;
    for (int s = 0; s <= total; ++s) {
      if (s >= w) ge += count[static_cast<std::size_t>(s)];
      if (s <= w) le += count[static_cast<std::size_t>(s)];
    }
    p_greater = ge / denom;
    p_less = le / denom;
  } else {
    r.exact = false;
    const auto nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
    std::map<double, int> ties;
    for (double v : mag) ties[v]++;
    for (const auto& [v, t] : ties) var -= (static_cast<double>(t) * t * t - t) / 48.0;
    const double z = (r.statistic - mean) / std::sqrt(var);
    const boost::math::normal nd;
    p_greater = boost::math::cdf(boost::math::complement(nd, z));
    p_less = boost::math::cdf(nd, z);
  }
  switch (alt) {
    case Alternative::kGreater: r.p = p_greater; break;
    case Alternative::kLess: r.p = p_less; break;
    case Alternative::kTwoSided: r.p = std::min(1.0, 2.0 * std::min(p_greater, p_less)); break;
  }
  return r;
}

CorrelationResult spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::kShape, "spearman inputs differ in length");
  if (x.size() < 3) throw Error(ErrorKind::kUndefinedTest, "spearman needs at least 3 pairs");
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw Error(ErrorKind::kUndefinedTest, "zero rank variance");
  CorrelationResult r;
  r.n = x.size();
  r.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  if (std::abs(r.rho) >= 1.0) {
    r.p = 0.0;
  } else {
    const double t = r.rho * std::sqrt((n - 2.0) / (1.0 - r.rho * r.rho));
    r.p = student_t_two_sided_p(t, n - 2.0);
  }
  return r;
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw Error(ErrorKind::kUndefinedTest, "welch test needs n >= 2 per group");
  auto moments = [](std::span<const double> v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::pair<double, double>(m, s / static_cast<double>(v.size() - 1));
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  if (va <= 0.0 && vb <= 0.0) throw Error(ErrorKind::kUndefinedTest, "both groups have zero variance");
  const double sa = va / static_cast<double>(a.size());
  const double sb = vb / static_cast<double>(b.size());
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) /
         (sa * sa / static_cast<double>(a.size() - 1) + sb * sb / static_cast<double>(b.size() - 1));
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

namespace {

struct GroupedData {
  // Per group: n_g, sum x, sum y, sum xx, sum xy, sum yy, plus raw rows for residuals.
  std::vector<std::vector<std::size_t>> rows;
};

GroupedData group_rows(std::span<const std::string> groups) {
  std::map<std::string, std::size_t> id;
  GroupedData g;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    auto [it, fresh] = id.emplace(groups[i], g.rows.size());
    if (fresh) g.rows.emplace_back();
    g.rows[it->second].push_back(i);
  }
  return g;
}

struct GlsResult {
  double b0 = 0.0, b1 = 0.0;
  double inv00 = 0.0, inv01 = 0.0, inv11 = 0.0;  // (X' W X)^-1
  double sigma2 = 0.0;
  double loglik = 0.0;
};

GlsResult gls_at(std::span<const double> y, std::span<const double> x, const GroupedData& g, double theta) {
  double a00 = 0.0, a01 = 0.0, a11 = 0.0, c0 = 0.0, c1 = 0.0;
  double logdet = 0.0;
  for (const auto& rows : g.rows) {
    const auto ng = static_cast<double>(rows.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i : rows) {
      sx += x[i];
      sy += y[i];
      sxx += x[i] * x[i];
      sxy += x[i] * y[i];
    }
    const double c = theta / (1.0 + theta * ng);
    a00 += ng - c * ng * ng;
    a01 += sx - c * ng * sx;
    a11 += sxx - c * sx * sx;
    c0 += sy - c * ng * sy;
    c1 += sxy - c * sx * sy;
    logdet += std::log1p(theta * ng);
  }
  const double det = a00 * a11 - a01 * a01;
  if (!(std::abs(det) > 1e-12 * std::max(1.0, std::abs(a00 * a11)))) {
    throw Error(ErrorKind::kRankDeficiency, "mixed-model design matrix is singular");
  }
  GlsResult r;
  r.inv00 = a11 / det;
  r.inv01 = -a01 / det;
  r.inv11 = a00 / det;
  r.b0 = r.inv00 * c0 + r.inv01 * c1;
  r.b1 = r.inv01 * c0 + r.inv11 * c1;
  double q = 0.0;
  for (const auto& rows : g.rows) {
    const auto ng = static_cast<double>(rows.size());
    double s = 0.0, ss = 0.0;
    for (std::size_t i : rows) {
      const double e = y[i] - r.b0 - r.b1 * x[i];
      s += e;
      ss += e * e;
    }
    q += ss - theta / (1.0 + theta * ng) * s * s;
  }
  const auto n = static_cast<double>(y.size());
  r.sigma2 = std::max(q / n, 1e-300);
  r.loglik = -0.5 * (n * std::log(2.0 * M_PI * r.sigma2) + logdet + n);
  return r;
}

void check_lmm_inputs(std::span<const double> y, std::span<const double> x, std::span<const std::string> groups,
                      const GroupedData& g) {
  if (y.size() != x.size() || y.size() != groups.size()) {
    throw Error(ErrorKind::kShape, "mixed-model inputs differ in length");
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i]) || !std::isfinite(x[i])) {
      throw Error(ErrorKind::kValidation, "mixed-model inputs must be finite");
    }
  }
  if (g.rows.size() < 2) throw Error(ErrorKind::kRankDeficiency, "mixed model needs at least two groups");
}

LmmFit finish(const GlsResult& r, double theta, const GroupedData& g, std::size_t n) {
  LmmFit f;
  f.theta = theta;
  f.beta = {r.b0, r.b1};
  f.beta_se = {std::sqrt(r.sigma2 * r.inv00), std::sqrt(r.sigma2 * r.inv11)};
  const double z975 = 1.959963984540054;
  for (std::size_t k = 0; k < 2; ++k) {
    f.beta_ci.push_back({f.beta[k] - z975 * f.beta_se[k], f.beta[k] + z975 * f.beta_se[k]});
    f.beta_p.push_back(f.beta_se[k] > 0.0 ? normal_two_sided_p(f.beta[k] / f.beta_se[k]) : 0.0);
  }
  f.sigma2_residual = r.sigma2;
  f.sigma2_intercept = theta * r.sigma2;
  f.group_count = g.rows.size();
  f.n = n;
  f.log_likelihood = r.loglik;
  return f;
}

}  // namespace

double lmm_profile_loglik(std::span<const double> y, std::span<const double> x,
                          std::span<const std::string> groups, double theta) {
  const GroupedData g = group_rows(groups);
  check_lmm_inputs(y, x, groups, g);
  return gls_at(y, x, g, theta).loglik;
}

LmmFit lmm_fit_fixed_theta(std::span<const double> y, std::span<const double> x,
                           std::span<const std::string> groups, double theta) {
  if (!(theta >= 0.0)) throw Error(ErrorKind::kValidation, "theta must be non-negative");
  const GroupedData g = group_rows(groups);
  check_lmm_inputs(y, x, groups, g);
  return finish(gls_at(y, x, g, theta), theta, g, y.size());
}

LmmFit lmm_fit(std::span<const double> y, std::span<const double> x, std::span<const std::string> groups) {
  const GroupedData g = group_rows(groups);
  check_lmm_inputs(y, x, groups, g);

  auto negll = [&](double log_theta) { return -gls_at(y, x, g, std::exp(log_theta)).loglik; };
  constexpr double lo = -16.0, hi = 12.0;
  constexpr int steps = 57;
  int best_i = 0;
  double best_v = negll(lo);
  for (int i = 1; i < steps; ++i) {
    const double v = negll(lo + (hi - lo) * i / (steps - 1));
    if (v < best_v) {
      best_v = v;
      best_i = i;
    }
  }
  const double step = (hi - lo) / (steps - 1);
  const double a = lo + step * std::max(0, best_i - 1);
  const double b = lo + step * std::min(steps - 1, best_i + 1);
  const auto [arg, val] = boost::math::tools::brent_find_minima(negll, a, b, 52);
  double theta = std::exp(arg);
  double best = val;
  if (best_v < best) {
    best = best_v;
    theta = std::exp(lo + step * best_i);
  }
  // The boundary theta = 0 is the nested ordinary least squares model.
  if (-gls_at(y, x, g, 0.0).loglik <= best) theta = 0.0;
  return finish(gls_at(y, x, g, theta), theta, g, y.size());
}

nlohmann::json stat_record(const std::string& test, double statistic, double p, std::optional<Interval> ci,
                           std::size_t n, nlohmann::json params) {
  nlohmann::json j;
  j["test"] = test;
  j["statistic"] = statistic;
  j["p"] = p;
  j["ci"] = ci ? nlohmann::json::array({ci->low, ci->high}) : nlohmann::json(nullptr);
  j["n"] = n;
  j["params"] = std::move(params);
  return j;
}

}  // namespace stressor
