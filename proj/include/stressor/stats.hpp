#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace stressor {

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

struct AurocResult {
  double auroc = 0.5;
  double ci_low = 0.5;
  double ci_high = 0.5;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

// Mann-Whitney AUROC with half credit for ties.
double auroc(std::span<const double> scores_pos, std::span<const double> scores_neg);
// Same, from scores and 0/1 labels.
double auroc_labeled(std::span<const double> scores, std::span<const int> labels);

// Percentile interval (2.5 %, 97.5 %) of `statistic` over resamples of
// indices [0, n). Resample i draws from a generator seeded with seed + i.
// Resamples on which the statistic throws kUndefinedMetric are redrawn.
Interval bootstrap_ci(std::size_t n, const std::function<double(std::span<const std::size_t>)>& statistic,
                      int n_iter = 1000, std::uint64_t seed = 0, double level = 0.95);

// Bootstrap over the values themselves.
Interval bootstrap_ci_values(std::span<const double> values,
                             const std::function<double(std::span<const double>)>& statistic,
                             int n_iter = 1000, std::uint64_t seed = 0);

// AUROC point estimate with a pooled-row bootstrap CI.
AurocResult auroc_with_ci(std::span<const double> scores, std::span<const int> labels, int n_iter,
                          std::uint64_t seed);

// Linear-interpolated quantile of unsorted data, q in [0, 1].
double quantile(std::vector<double> values, double q);

struct ScoredSample {
  std::vector<double> scores;
  std::vector<int> labels;
};

// p = (1 + #{null bootstrap means >= observed}) / (1 + N). Each of the
// n_models null runs receives seed + model index and returns predictions made
// by a model trained on permuted labels; n_boot bootstrap AUROCs are drawn
// from each.
double permutation_pvalue(double observed, const std::function<ScoredSample(std::uint64_t)>& null_run,
                          int n_models = 20, int n_boot = 50, std::uint64_t seed = 0);

// Same counting rule for a precomputed null distribution.
double permutation_pvalue_from_null(double observed, std::span<const double> null_values);

struct FdrResult {
  std::vector<bool> rejected;
  std::vector<double> adjusted;
};

FdrResult fdr_bh(std::span<const double> pvalues, double alpha = 0.05);

enum class Alternative { kGreater, kLess, kTwoSided };

struct WilcoxonResult {
  double statistic = 0.0;  // W+ (sum of positive ranks)
  double p = 1.0;
  std::size_t n = 0;       // after dropping zeros
  bool exact = true;
};

// Signed-rank test; zeros dropped. Exact distribution for n <= 25 (ties
// handled on doubled ranks), normal approximation with tie correction above.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences, Alternative alternative);

struct CorrelationResult {
  double rho = 0.0;
  double p = 1.0;
  std::size_t n = 0;
};

// Average ranks (ties share the mean rank), 1-based.
std::vector<double> average_ranks(std::span<const double> x);
CorrelationResult spearman_rho(std::span<const double> x, std::span<const double> y);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

// Two-sided p from a standard normal statistic / Student t statistic.
double normal_two_sided_p(double z);
double student_t_two_sided_p(double t, double df);

struct LmmFit {
  std::vector<double> beta;       // intercept, slope
  std::vector<double> beta_se;
  std::vector<Interval> beta_ci;  // 95 % Wald
  std::vector<double> beta_p;
  double sigma2_residual = 0.0;
  double sigma2_intercept = 0.0;
  double theta = 0.0;  // sigma2_intercept / sigma2_residual
  std::size_t group_count = 0;
  std::size_t n = 0;
  double log_likelihood = 0.0;
};

// Random-intercept model y = b0 + b1 x + u_group + e, profiled maximum
// likelihood over theta = s2_u / s2_e.
LmmFit lmm_fit(std::span<const double> y, std::span<const double> x, std::span<const std::string> groups);
// Same model with theta held fixed.
LmmFit lmm_fit_fixed_theta(std::span<const double> y, std::span<const double> x,
                           std::span<const std::string> groups, double theta);
// Profiled log-likelihood at a given theta.
double lmm_profile_loglik(std::span<const double> y, std::span<const double> x,
                          std::span<const std::string> groups, double theta);

// {test, statistic, p, ci, n, params}
nlohmann::json stat_record(const std::string& test, double statistic, double p,
                           std::optional<Interval> ci, std::size_t n,
                           nlohmann::json params = nlohmann::json::object());

}  // namespace stressor
