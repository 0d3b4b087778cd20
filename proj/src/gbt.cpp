#include "stressor/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "stressor/error.hpp"
#include "stressor/signal.hpp"

namespace stressor {

void GbtConfig::validate() const {
  std::vector<std::string> bad;
  if (n_trees < 0) bad.push_back("n_trees");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) bad.push_back("learning_rate");
  if (max_depth < 0) bad.push_back("max_depth");
  if (!(lambda_l2 >= 0.0)) bad.push_back("lambda_l2");
  if (!(min_child_weight >= 0.0)) bad.push_back("min_child_weight");
  if (!(gamma_split >= 0.0)) bad.push_back("gamma_split");
  if (!(subsample > 0.0 && subsample <= 1.0)) bad.push_back("subsample");
  if (!bad.empty()) {
    std::string msg = "invalid gbt config:";
    for (const auto& b : bad) msg += " " + b;
    throw Error(ErrorKind::kValidation, msg);
  }
}

namespace {

double sigmoid(double m) { return 1.0 / (1.0 + std::exp(-m)); }

bool goes_left(const TreeNode& node, double v) {
  if (is_missing(v)) return node.default_left;
  return v < node.threshold;
}

struct SplitChoice {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool default_left = true;
  double gl = 0.0, hl = 0.0;
};

constexpr double kMinGain = 1e-6;

}  // namespace

double RegressionTree::predict(std::span<const double> row) const {
  return nodes[static_cast<std::size_t>(leaf_index(row))].weight;
}

int RegressionTree::leaf_index(std::span<const double> row) const {
  int i = 0;
  while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
    const TreeNode& n = nodes[static_cast<std::size_t>(i)];
    i = goes_left(n, row[static_cast<std::size_t>(n.feature)]) ? n.left : n.right;
  }
  return i;
}

int RegressionTree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const TreeNode& n = nodes[i];
    best = std::max(best, d[i]);
    if (!n.is_leaf()) {
      d[static_cast<std::size_t>(n.left)] = d[i] + 1;
      d[static_cast<std::size_t>(n.right)] = d[i] + 1;
    }
  }
  return best;
}

double GbtModel::margin(std::span<const double> row) const {
  if (static_cast<int>(row.size()) != n_features) {
    throw Error(ErrorKind::kShape, "row has " + std::to_string(row.size()) + " features, model expects " +
                                       std::to_string(n_features));
  }
  double m = base_score;
  for (const RegressionTree& t : trees) m += t.predict(row);
  return m;
}

GbtModel fit_gbt(const Eigen::MatrixXd& X, std::span<const double> y, const GbtConfig& config) {
  config.validate();
  const auto n = static_cast<std::size_t>(X.rows());
  const auto nf = static_cast<std::size_t>(X.cols());
  if (y.size() != n) throw Error(ErrorKind::kShape, "label count does not match row count");
  std::size_t pos_count = 0;
  for (double v : y) {
    if (v != 0.0 && v != 1.0) throw Error(ErrorKind::kValidation, "labels must be 0 or 1");
    pos_count += v == 1.0 ? 1 : 0;
  }
  if (pos_count == 0 || pos_count == n) {
    throw Error(ErrorKind::kDegenerateLabels, "training labels contain a single class");
  }

  // Row-major copy for cache-friendly routing.
  std::vector<double> data(n * nf);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t f = 0; f < nf; ++f) {
      data[r * nf + f] = X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f));
    }
  }
  auto at = [&](std::size_t r, std::size_t f) { return data[r * nf + f]; };

  std::vector<std::vector<std::uint32_t>> sorted(nf), missing(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    for (std::size_t r = 0; r < n; ++r) {
      (is_missing(at(r, f)) ? missing[f] : sorted[f]).push_back(static_cast<std::uint32_t>(r));
    }
    std::stable_sort(sorted[f].begin(), sorted[f].end(),
                     [&](std::uint32_t a, std::uint32_t b) { return at(a, f) < at(b, f); });
  }

  GbtModel model;
  model.config = config;
  model.n_features = static_cast<int>(nf);
  model.base_score = 0.0;

  const double lambda = config.lambda_l2;
  std::vector<double> margin(n, model.base_score), g(n), h(n);
  std::vector<int> pos(n);
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  for (int t = 0; t < config.n_trees; ++t) {
    for (std::size_t r = 0; r < n; ++r) {
      const double p = sigmoid(margin[r]);
      g[r] = p - y[r];
      h[r] = std::max(p * (1.0 - p), 1e-16);
    }
    RegressionTree tree;
    std::vector<double> node_g, node_h;
    tree.nodes.emplace_back();
    node_g.push_back(0.0);
    node_h.push_back(0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const bool use = config.subsample >= 1.0 || unif(rng) < config.subsample;
      pos[r] = use ? 0 : -1;
      if (use) {
        node_g[0] += g[r];
        node_h[0] += h[r];
      }
    }

    std::vector<int> frontier{0};
    for (int depth = 0; depth < config.max_depth && !frontier.empty(); ++depth) {
      const std::size_t nn = tree.nodes.size();
      std::vector<char> active(nn, 0);
      for (int id : frontier) active[static_cast<std::size_t>(id)] = 1;
      std::vector<SplitChoice> best(nn);
      std::vector<double> gm(nn), hm(nn), glp(nn), hlp(nn), last(nn);
      std::vector<char> seen(nn);

      for (std::size_t f = 0; f < nf; ++f) {
        std::fill(gm.begin(), gm.end(), 0.0);
        std::fill(hm.begin(), hm.end(), 0.0);
        std::fill(glp.begin(), glp.end(), 0.0);
        std::fill(hlp.begin(), hlp.end(), 0.0);
        std::fill(seen.begin(), seen.end(), 0);
        std::vector<char> has_missing(nn, 0);
        for (std::uint32_t r : missing[f]) {
          const int nd = pos[r];
          if (nd < 0 || !active[static_cast<std::size_t>(nd)]) continue;
          gm[static_cast<std::size_t>(nd)] += g[r];
          hm[static_cast<std::size_t>(nd)] += h[r];
          has_missing[static_cast<std::size_t>(nd)] = 1;
        }
        auto evaluate = [&](std::size_t nd, double thr) {
          const double G = node_g[nd], H = node_h[nd];
          const double parent = G * G / (H + lambda);
          auto consider = [&](double GL, double HL, bool dleft) {
            const double GR = G - GL, HR = H - HL;
            if (HL < config.min_child_weight || HR < config.min_child_weight) return;
            const double gain =
                0.5 * (GL * GL / (HL + lambda) + GR * GR / (HR + lambda) - parent) - config.gamma_split;
            if (gain > best[nd].gain && gain > kMinGain) {
              best[nd] = {gain, static_cast<int>(f), thr, dleft, GL, HL};
            }
          };
          if (has_missing[nd]) {
            consider(glp[nd], hlp[nd], false);
            consider(glp[nd] + gm[nd], hlp[nd] + hm[nd], true);
          } else {
            const double hr = H - hlp[nd];
            consider(glp[nd], hlp[nd], hlp[nd] >= hr);
          }
        };
        for (std::uint32_t r : sorted[f]) {
          const int ndi = pos[r];
          if (ndi < 0 || !active[static_cast<std::size_t>(ndi)]) continue;
          const auto nd = static_cast<std::size_t>(ndi);
          const double v = at(r, f);
          if (seen[nd] && v > last[nd]) {
            double thr = last[nd] + (v - last[nd]) / 2.0;
            if (!(thr > last[nd])) thr = v;
            evaluate(nd, thr);
          }
          glp[nd] += g[r];
          hlp[nd] += h[r];
          last[nd] = v;
          seen[nd] = 1;
        }
      }

      std::vector<int> next;
      for (int id : frontier) {
        const auto nd = static_cast<std::size_t>(id);
        const SplitChoice& s = best[nd];
        if (s.feature < 0) continue;
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        node_g.push_back(s.gl);
        node_h.push_back(s.hl);
        node_g.push_back(node_g[nd] - s.gl);
        node_h.push_back(node_h[nd] - s.hl);
        TreeNode& node = tree.nodes[nd];
        node.feature = s.feature;
        node.threshold = s.threshold;
        node.default_left = s.default_left;
        node.left = left;
        node.right = left + 1;
        next.push_back(left);
        next.push_back(left + 1);
      }
      for (std::size_t r = 0; r < n; ++r) {
        if (pos[r] < 0) continue;
        const TreeNode& node = tree.nodes[static_cast<std::size_t>(pos[r])];
        if (node.is_leaf()) continue;
        pos[r] = goes_left(node, at(r, static_cast<std::size_t>(node.feature))) ? node.left : node.right;
      }
      frontier = std::move(next);
    }

    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      tree.nodes[i].cover = node_h[i];
      tree.nodes[i].weight = -node_g[i] / (node_h[i] + lambda) * config.learning_rate;
    }
    for (std::size_t r = 0; r < n; ++r) {
      margin[r] += tree.predict(std::span<const double>(&data[r * nf], nf));
    }
    model.trees.push_back(std::move(tree));
  }
  return model;
}

double predict_proba(const GbtModel& model, std::span<const double> row) {
  return sigmoid(model.margin(row));
}

std::vector<double> predict_margin(const GbtModel& model, const Eigen::MatrixXd& X) {
  std::vector<double> out(static_cast<std::size_t>(X.rows()));
  std::vector<double> row(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    for (Eigen::Index c = 0; c < X.cols(); ++c) row[static_cast<std::size_t>(c)] = X(r, c);
    out[static_cast<std::size_t>(r)] = model.margin(row);
  }
  return out;
}

std::vector<double> predict_proba(const GbtModel& model, const Eigen::MatrixXd& X) {
  std::vector<double> out = predict_margin(model, X);
  for (double& v : out) v = sigmoid(v);
  return out;
}

namespace {

struct PathElement {
  int feature;
  double zero_fraction;
  double one_fraction;
  double pweight;
};

void extend_path(std::vector<PathElement>& path, double zero_fraction, double one_fraction, int feature) {
  const std::size_t depth = path.size();
  path.push_back({feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0});
  const auto d = static_cast<double>(depth);
  for (std::size_t k = depth; k-- > 0;) {
    const auto i = static_cast<double>(k);
    path[k + 1].pweight += one_fraction * path[k].pweight * (i + 1.0) / (d + 1.0);
    path[k].pweight = zero_fraction * path[k].pweight * (d - i) / (d + 1.0);
  }
}

void unwind_path(std::vector<PathElement>& path, std::size_t index) {
  const std::size_t depth = path.size() - 1;
  const auto d = static_cast<double>(depth);
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next_one = path[depth].pweight;
  for (std::size_t k = depth; k-- > 0;) {
    const auto i = static_cast<double>(k);
    if (one != 0.0) {
      const double tmp = path[k].pweight;
      path[k].pweight = next_one * (d + 1.0) / ((i + 1.0) * one);
      next_one = tmp - path[k].pweight * zero * (d - i) / (d + 1.0);
    } else {
      path[k].pweight = path[k].pweight * (d + 1.0) / (zero * (d - i));
    }
  }
  for (std::size_t k = index; k < depth; ++k) {
    path[k].feature = path[k + 1].feature;
    path[k].zero_fraction = path[k + 1].zero_fraction;
    path[k].one_fraction = path[k + 1].one_fraction;
  }
  path.pop_back();
}

double unwound_path_sum(const std::vector<PathElement>& path, std::size_t index) {
  const std::size_t depth = path.size() - 1;
  const auto d = static_cast<double>(depth);
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next_one = path[depth].pweight;
  double total = 0.0;
  for (std::size_t k = depth; k-- > 0;) {
    const auto i = static_cast<double>(k);
    if (one != 0.0) {
      const double tmp = next_one * (d + 1.0) / ((i + 1.0) * one);
      total += tmp;
      next_one = path[k].pweight - tmp * zero * (d - i) / (d + 1.0);
    } else if (zero != 0.0) {
      total += path[k].pweight / zero / ((d - i) / (d + 1.0));
    }
  }
  return total;
}

double child_fraction(const RegressionTree& tree, int parent, int child) {
  const double pc = tree.nodes[static_cast<std::size_t>(parent)].cover;
  if (!(pc > 0.0)) return 0.5;
  return tree.nodes[static_cast<std::size_t>(child)].cover / pc;
}

void shap_recurse(const RegressionTree& tree, std::span<const double> row, int node,
                  std::vector<PathElement> path, double zero_fraction, double one_fraction,
                  int feature, std::vector<double>& phi) {
  extend_path(path, zero_fraction, one_fraction, feature);
  const TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) {
    for (std::size_t i = 1; i < path.size(); ++i) {
      const double w = unwound_path_sum(path, i);
      const PathElement& e = path[i];
      phi[static_cast<std::size_t>(e.feature)] += w * (e.one_fraction - e.zero_fraction) * n.weight;
    }
    return;
  }
  const double v = row[static_cast<std::size_t>(n.feature)];
  const int hot = goes_left(n, v) ? n.left : n.right;
  const int cold = hot == n.left ? n.right : n.left;
  double incoming_zero = 1.0, incoming_one = 1.0;
  for (std::size_t k = 1; k < path.size(); ++k) {
    if (path[k].feature == n.feature) {
      incoming_zero = path[k].zero_fraction;
      incoming_one = path[k].one_fraction;
      unwind_path(path, k);
      break;
    }
  }
  shap_recurse(tree, row, hot, path, child_fraction(tree, node, hot) * incoming_zero, incoming_one,
               n.feature, phi);
  shap_recurse(tree, row, cold, path, child_fraction(tree, node, cold) * incoming_zero, 0.0,
               n.feature, phi);
}

double expected_from(const RegressionTree& tree, int node) {
  const TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) return n.weight;
  return child_fraction(tree, node, n.left) * expected_from(tree, n.left) +
         child_fraction(tree, node, n.right) * expected_from(tree, n.right);
}

}  // namespace

std::vector<double> tree_shap_single(const RegressionTree& tree, std::span<const double> row,
                                     int n_features) {
  std::vector<double> phi(static_cast<std::size_t>(n_features), 0.0);
  if (tree.nodes.empty()) return phi;
  shap_recurse(tree, row, 0, {}, 1.0, 1.0, -1, phi);
  return phi;
}

double tree_expected_value(const RegressionTree& tree) {
  return tree.nodes.empty() ? 0.0 : expected_from(tree, 0);
}

ShapAttribution tree_shap(const GbtModel& model, std::span<const double> row) {
  if (static_cast<int>(row.size()) != model.n_features) {
    throw Error(ErrorKind::kShape, "row dimension does not match the model");
  }
  ShapAttribution out;
  out.values.assign(row.size(), 0.0);
  out.base_value = model.base_score;
  for (const RegressionTree& t : model.trees) {
    const std::vector<double> phi = tree_shap_single(t, row, model.n_features);
    for (std::size_t i = 0; i < phi.size(); ++i) out.values[i] += phi[i];
    out.base_value += tree_expected_value(t);
  }
  return out;
}

ShapSummary shap_summary(const GbtModel& model, const Eigen::MatrixXd& X,
                         const std::vector<std::string>& feature_names) {
  if (static_cast<int>(feature_names.size()) != model.n_features || X.cols() != model.n_features) {
    throw Error(ErrorKind::kShape, "feature names do not match the model");
  }
  ShapSummary s;
  s.values = Eigen::MatrixXd::Zero(X.rows(), X.cols());
  std::vector<double> row(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    for (Eigen::Index c = 0; c < X.cols(); ++c) row[static_cast<std::size_t>(c)] = X(r, c);
    const ShapAttribution a = tree_shap(model, row);
    for (Eigen::Index c = 0; c < X.cols(); ++c) s.values(r, c) = a.values[static_cast<std::size_t>(c)];
    s.base_value = a.base_value;
  }
  for (std::size_t c = 0; c < feature_names.size(); ++c) {
    const double m = X.rows() > 0 ? s.values.col(static_cast<Eigen::Index>(c)).cwiseAbs().mean() : 0.0;
    s.ranking.push_back({feature_names[c], m});
  }
  std::stable_sort(s.ranking.begin(), s.ranking.end(),
                   [](const ShapRanking& a, const ShapRanking& b) { return a.mean_abs > b.mean_abs; });
  return s;
}

nlohmann::json to_json(const GbtConfig& c) {
  return {{"n_trees", c.n_trees},
          {"learning_rate", c.learning_rate},
          {"max_depth", c.max_depth},
          {"lambda_l2", c.lambda_l2},
          {"min_child_weight", c.min_child_weight},
          {"gamma_split", c.gamma_split},
          {"subsample", c.subsample},
          {"seed", c.seed}};
}

GbtConfig gbt_config_from_json(const nlohmann::json& j, GbtConfig c) {
  if (!j.is_object()) throw Error(ErrorKind::kValidation, "gbt config must be a JSON object");
  std::vector<std::string> bad;
  for (const auto& [k, v] : j.items()) {
    try {
      if (k == "n_trees") c.n_trees = v.get<int>();
      else if (k == "learning_rate") c.learning_rate = v.get<double>();
      else if (k == "max_depth") c.max_depth = v.get<int>();
      else if (k == "lambda_l2") c.lambda_l2 = v.get<double>();
      else if (k == "min_child_weight") c.min_child_weight = v.get<double>();
      else if (k == "gamma_split") c.gamma_split = v.get<double>();
      else if (k == "subsample") c.subsample = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else bad.push_back("gbt." + k);
    } catch (const nlohmann::json::exception&) {
      bad.push_back("gbt." + k);
    }
  }
  if (!bad.empty()) {
    std::string msg = "invalid gbt config fields:";
    for (const auto& b : bad) msg += " " + b;
    throw Error(ErrorKind::kValidation, msg);
  }
  c.validate();
  return c;
}

nlohmann::json model_to_json(const GbtModel& model) {
  nlohmann::json j;
  j["base_score"] = model.base_score;
  j["n_features"] = model.n_features;
  const GbtConfig& c = model.config;
  j["config"] = {{"n_trees", c.n_trees},
                 {"learning_rate", c.learning_rate},
                 {"max_depth", c.max_depth},
                 {"lambda_l2", c.lambda_l2},
                 {"min_child_weight", c.min_child_weight},
                 {"gamma_split", c.gamma_split},
                 {"subsample", c.subsample},
                 {"seed", c.seed}};
  nlohmann::json trees = nlohmann::json::array();
  for (const RegressionTree& t : model.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const TreeNode& n : t.nodes) {
      nodes.push_back({{"feature", n.feature},
                       {"threshold", n.threshold},
                       {"default_left", n.default_left},
                       {"left", n.left},
                       {"right", n.right},
                       {"weight", n.weight},
                       {"cover", n.cover}});
    }
    trees.push_back({{"nodes", nodes}});
  }
  j["trees"] = trees;
  return j;
}

GbtModel model_from_json(const nlohmann::json& j) {
  try {
    GbtModel m;
    m.base_score = j.at("base_score").get<double>();
    m.n_features = j.at("n_features").get<int>();
    const auto& c = j.at("config");
    m.config.n_trees = c.at("n_trees").get<int>();
    m.config.learning_rate = c.at("learning_rate").get<double>();
    m.config.max_depth = c.at("max_depth").get<int>();
    m.config.lambda_l2 = c.at("lambda_l2").get<double>();
    m.config.min_child_weight = c.at("min_child_weight").get<double>();
    m.config.gamma_split = c.at("gamma_split").get<double>();
    m.config.subsample = c.at("subsample").get<double>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    for (const auto& jt : j.at("trees")) {
      RegressionTree t;
      for (const auto& jn : jt.at("nodes")) {
        TreeNode n;
        n.feature = jn.at("feature").get<int>();
        n.threshold = jn.at("threshold").get<double>();
        n.default_left = jn.at("default_left").get<bool>();
        n.left = jn.at("left").get<int>();
        n.right = jn.at("right").get<int>();
        n.weight = jn.at("weight").get<double>();
        n.cover = jn.at("cover").get<double>();
        t.nodes.push_back(n);
      }
      const auto count = static_cast<int>(t.nodes.size());
      for (const TreeNode& n : t.nodes) {
        if (!n.is_leaf() && (n.left <= 0 || n.left >= count || n.right <= 0 || n.right >= count ||
                             n.feature >= m.n_features)) {
          throw Error(ErrorKind::kParse, "model JSON has a dangling tree node");
        }
      }
      m.trees.push_back(std::move(t));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("model JSON: ") + e.what());
  }
}

}  // namespace stressor
