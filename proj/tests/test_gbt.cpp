#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stressor/error.hpp"
#include "stressor/gbt.hpp"
#include "stressor/signal.hpp"

using namespace stressor;

namespace {

struct Data {
  Eigen::MatrixXd X;
  std::vector<double> y;
};

// Logistic ground truth on the first two features, with optional missing cells.
Data make_data(int n, int p, double missing_rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Data d;
  d.X.resize(n, p);
  d.y.resize(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < p; ++c) d.X(r, c) = z(rng);
    const double m = 2.0 * d.X(r, 0) - 1.5 * d.X(r, 1) + 0.5 * d.X(r, 0) * d.X(r, 1);
    d.y[static_cast<std::size_t>(r)] = u(rng) < 1.0 / (1.0 + std::exp(-m)) ? 1.0 : 0.0;
    for (int c = 0; c < p; ++c) {
      if (u(rng) < missing_rate) d.X(r, c) = kMissing;
    }
  }
  return d;
}

std::vector<double> row_of(const Eigen::MatrixXd& X, Eigen::Index r) {
  std::vector<double> v(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index c = 0; c < X.cols(); ++c) v[static_cast<std::size_t>(c)] = X(r, c);
  return v;
}

// Path-dependent conditional expectation E[f(x) | x_S]: unknown features
// average the children by training cover.
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

std::vector<double> brute_shapley(const RegressionTree& t, const std::vector<double>& x, int p) {
  std::vector<double> fact(static_cast<std::size_t>(p) + 1, 1.0);
  for (int i = 1; i <= p; ++i) fact[static_cast<std::size_t>(i)] = fact[static_cast<std::size_t>(i) - 1] * i;
  std::vector<double> phi(static_cast<std::size_t>(p), 0.0);
  for (int i = 0; i < p; ++i) {
    for (unsigned s = 0; s < (1u << p); ++s) {
      if (s & (1u << i)) continue;
      const int k = __builtin_popcount(s);
      const double w = fact[static_cast<std::size_t>(k)] * fact[static_cast<std::size_t>(p - k - 1)] /
                       fact[static_cast<std::size_t>(p)];
      phi[static_cast<std::size_t>(i)] +=
          w * (cond_expectation(t, 0, x, s | (1u << i)) - cond_expectation(t, 0, x, s));
    }
  }
  return phi;
}

}  // namespace

TEST(Gbt, SingleLeafWeightIsShrunkNewtonStep) {
  const Data d = make_data(300, 3, 0.0, 1);
  GbtConfig cfg;
  cfg.n_trees = 1;
  cfg.max_depth = 0;
  for (double lambda : {0.0, 1.0, 10.0, 100.0}) {
    cfg.lambda_l2 = lambda;
    const GbtModel m = fit_gbt(d.X, d.y, cfg);
    double pos = 0.0;
    for (double v : d.y) pos += v;
    // At margin 0: g = 0.5 - y, h = 0.25.
    const double G = 0.5 * 300 - pos, H = 0.25 * 300;
    ASSERT_EQ(m.trees[0].nodes.size(), 1u);
    EXPECT_NEAR(m.trees[0].nodes[0].weight, -cfg.learning_rate * G / (H + lambda), 1e-12);
  }
}

TEST(Gbt, LearnsSignalAndRespectsDepth) {
  const Data train = make_data(2000, 5, 0.0, 2);
  const Data test = make_data(1000, 5, 0.0, 3);
  GbtConfig cfg;
  cfg.n_trees = 40;
  cfg.max_depth = 3;
  const GbtModel m = fit_gbt(train.X, train.y, cfg);
  for (const auto& t : m.trees) EXPECT_LE(t.depth(), 3);
  const auto p = predict_proba(m, test.X);
  double correct = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) correct += (p[i] > 0.5) == (test.y[i] == 1.0);
  EXPECT_GT(correct / p.size(), 0.75);
}

TEST(Gbt, MissingValuesFollowLearnedDefault) {
  // Feature 0 is missing exactly when the label is positive.
  Eigen::MatrixXd X(200, 1);
  std::vector<double> y(200);
  for (int r = 0; r < 200; ++r) {
    y[static_cast<std::size_t>(r)] = r % 2;
    X(r, 0) = r % 2 ? kMissing : static_cast<double>(r);
  }
  GbtConfig cfg;
  cfg.n_trees = 5;
  cfg.max_depth = 2;
  cfg.lambda_l2 = 1.0;
  const GbtModel m = fit_gbt(X, y, cfg);
  EXPECT_GT(predict_proba(m, std::vector<double>{kMissing}), 0.8);
  EXPECT_LT(predict_proba(m, std::vector<double>{50.0}), 0.2);
}

TEST(Gbt, SingleClassIsDegenerate) {
  const Data d = make_data(50, 2, 0.0, 4);
  const std::vector<double> ones(50, 1.0);
  try {
    fit_gbt(d.X, ones, GbtConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerateLabels);
  }
}

TEST(Gbt, SameSeedSameModel) {
  const Data d = make_data(400, 4, 0.1, 5);
  GbtConfig cfg;
  cfg.n_trees = 10;
  cfg.subsample = 0.7;
  cfg.seed = 9;
  EXPECT_EQ(model_to_json(fit_gbt(d.X, d.y, cfg)).dump(), model_to_json(fit_gbt(d.X, d.y, cfg)).dump());
}

TEST(TreeShap, LocalAccuracyOn1000Rows) {
  const Data d = make_data(1000, 6, 0.1, 6);
  GbtConfig cfg;
  cfg.n_trees = 30;
  cfg.max_depth = 4;
  const GbtModel m = fit_gbt(d.X, d.y, cfg);
  double worst = 0.0;
  for (Eigen::Index r = 0; r < d.X.rows(); ++r) {
    const auto x = row_of(d.X, r);
    const ShapAttribution a = tree_shap(m, x);
    double s = a.base_value;
    for (double v : a.values) s += v;
    worst = std::max(worst, std::abs(s - m.margin(x)));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(TreeShap, MatchesBruteForceShapley) {
  for (int p = 1; p <= 4; ++p) {
    const Data d = make_data(500, p, 0.05, 10 + p);
    GbtConfig cfg;
    cfg.n_trees = 3;
    cfg.max_depth = 5;
    cfg.lambda_l2 = 1.0;
    const GbtModel m = fit_gbt(d.X, d.y, cfg);
    for (const auto& tree : m.trees) {
      EXPECT_NEAR(tree_expected_value(tree), cond_expectation(tree, 0, {}, 0u), 1e-12);
      for (Eigen::Index r = 0; r < 40; ++r) {
        const auto x = row_of(d.X, r);
        const auto fast = tree_shap_single(tree, x, p);
        const auto slow = brute_shapley(tree, x, p);
        for (int i = 0; i < p; ++i) EXPECT_NEAR(fast[static_cast<std::size_t>(i)], slow[static_cast<std::size_t>(i)], 1e-9);
      }
    }
  }
}

TEST(TreeShap, SummaryRanksByMeanAbs) {
  const Data d = make_data(600, 4, 0.0, 20);
  GbtConfig cfg;
  cfg.n_trees = 20;
  cfg.max_depth = 3;
  const GbtModel m = fit_gbt(d.X, d.y, cfg);
  const ShapSummary s = shap_summary(m, d.X, {"a", "b", "c", "d"});
  ASSERT_EQ(s.ranking.size(), 4u);
  for (std::size_t i = 1; i < s.ranking.size(); ++i) EXPECT_GE(s.ranking[i - 1].mean_abs, s.ranking[i].mean_abs);
  // The two informative features lead.
  EXPECT_TRUE((s.ranking[0].feature == "a" || s.ranking[0].feature == "b"));
  EXPECT_DOUBLE_EQ(s.ranking[0].mean_abs, s.values.col(s.ranking[0].feature == "a" ? 0 : 1).cwiseAbs().mean());
}

TEST(GbtJson, ModelRoundTripPredictsIdentically) {
  const Data d = make_data(300, 3, 0.2, 7);
  GbtConfig cfg;
  cfg.n_trees = 8;
  const GbtModel m = fit_gbt(d.X, d.y, cfg);
  const GbtModel back = model_from_json(nlohmann::json::parse(model_to_json(m).dump()));
  const auto a = predict_margin(m, d.X);
  const auto b = predict_margin(back, d.X);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(GbtJson, ConfigRejectsUnknownKeysAndBadValues) {
  const GbtConfig c = gbt_config_from_json({{"max_depth", 4}, {"lambda_l2", 2.5}});
  EXPECT_EQ(c.max_depth, 4);
  EXPECT_EQ(c.lambda_l2, 2.5);
  EXPECT_EQ(c.n_trees, 100);
  EXPECT_THROW(gbt_config_from_json({{"depth", 4}}), Error);
  GbtConfig bad;
  bad.learning_rate = 0.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Gbt, RowWidthMismatchThrows) {
  const Data d = make_data(100, 3, 0.0, 8);
  GbtConfig cfg;
  cfg.n_trees = 2;
  const GbtModel m = fit_gbt(d.X, d.y, cfg);
  EXPECT_THROW(m.margin(std::vector<double>{1.0, 2.0}), Error);
}
