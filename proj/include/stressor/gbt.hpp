#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace stressor {

struct GbtConfig {
  int n_trees = 100;
  double learning_rate = 0.3;
  int max_depth = 6;
  double lambda_l2 = 10.0;
  double min_child_weight = 1.0;
  double gamma_split = 0.0;
  double subsample = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const GbtConfig& config);
// Missing keys keep `base` values; unknown keys are rejected.
GbtConfig gbt_config_from_json(const nlohmann::json& j, GbtConfig base = {});

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // x < threshold goes left
  bool default_left = true;  // routing for missing values
  int left = -1;
  int right = -1;
  double weight = 0.0;  // leaf output, learning rate already applied
  double cover = 0.0;   // hessian sum of training rows reaching the node

  bool is_leaf() const { return feature < 0; }
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> row) const;
  int leaf_index(std::span<const double> row) const;
  int depth() const;
};

struct GbtModel {
  std::vector<RegressionTree> trees;
  double base_score = 0.0;  // log-odds
  int n_features = 0;
  GbtConfig config;

  double margin(std::span<const double> row) const;
};

// Second-order logistic boosting with exact greedy depth-wise splits.
// Labels are 0 (free) / 1 (stress).
GbtModel fit_gbt(const Eigen::MatrixXd& X, std::span<const double> y, const GbtConfig& config);

double predict_proba(const GbtModel& model, std::span<const double> row);
std::vector<double> predict_proba(const GbtModel& model, const Eigen::MatrixXd& X);
std::vector<double> predict_margin(const GbtModel& model, const Eigen::MatrixXd& X);

struct ShapAttribution {
  std::vector<double> values;  // per feature, log-odds units
  double base_value = 0.0;     // expected margin under the tree covers
};

// Path-dependent TreeSHAP for one tree and for the whole ensemble.
std::vector<double> tree_shap_single(const RegressionTree& tree, std::span<const double> row,
                                     int n_features);
double tree_expected_value(const RegressionTree& tree);
ShapAttribution tree_shap(const GbtModel& model, std::span<const double> row);

struct ShapRanking {
  std::string feature;
  double mean_abs = 0.0;
};

struct ShapSummary {
  std::vector<ShapRanking> ranking;  // by mean |phi|, descending, ties by column order
  Eigen::MatrixXd values;            // rows x features
  double base_value = 0.0;
};

ShapSummary shap_summary(const GbtModel& model, const Eigen::MatrixXd& X,
                         const std::vector<std::string>& feature_names);

nlohmann::json model_to_json(const GbtModel& model);
GbtModel model_from_json(const nlohmann::json& j);

}  // namespace stressor
