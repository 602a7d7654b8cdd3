#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phonodec/error.hpp"
#include "phonodec/rng.hpp"

namespace phonodec::gbt {

// Row-major N x D feature matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t n, std::size_t d) : rows(n), cols(d), values(n * d, 0.0) {}

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }

  template <class Row>
  static FeatureMatrix from_rows(const std::vector<Row>& rows) {
    if (rows.empty()) return {};
    FeatureMatrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.cols) throw ValidationError("FeatureMatrix: ragged rows");
      for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) = static_cast<double>(rows[i][j]);
    }
    return m;
  }
};

enum class Objective { Auto, Logistic, Softmax };

struct GbtParams {
  int max_depth = 10;
  int rounds = 200;
  double learning_rate = 0.1;
  double lambda = 0.3;            // L2 penalty on leaf weights
  double row_subsample = 0.8;
  double column_subsample = 0.4;  // per tree
  double min_child_weight = 1.0;
  std::uint64_t seed = 0;
  Objective objective = Objective::Auto;  // Auto: logistic for 2 classes, softmax above

  void validate() const {
    if (max_depth < 1) throw ValidationError("gbt: max_depth must be >= 1");
    if (rounds < 0) throw ValidationError("gbt: rounds must be >= 0");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ValidationError("gbt: learning_rate must lie in (0, 1]");
    if (!(row_subsample > 0.0 && row_subsample <= 1.0)) throw ValidationError("gbt: row_subsample must lie in (0, 1]");
    if (!(column_subsample > 0.0 && column_subsample <= 1.0)) {
      throw ValidationError("gbt: column_subsample must lie in (0, 1]");
    }
    if (lambda < 0.0) throw ValidationError("gbt: lambda must be >= 0");
    if (min_child_weight < 0.0) throw ValidationError("gbt: min_child_weight must be >= 0");
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;   // rows with x[feature] < threshold
  int right = -1;
  double value = 0.0;  // leaf weight, learning rate already applied
};

struct Tree {
  std::vector<TreeNode> nodes;

  std::size_t leaf_index(std::span<const double> x) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0) {
      const TreeNode& n = nodes[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right);
    }
    return i;
  }
  double predict(std::span<const double> x) const { return nodes[leaf_index(x)].value; }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) {
      return n.feature < 0;
    }));
  }
};

struct GbtModel {
  std::size_t num_classes = 0;
  std::size_t num_features = 0;
  bool softmax = false;
  std::vector<double> base_score;          // one margin per tree group
  std::vector<std::vector<Tree>> rounds;   // rounds[r][g]
  std::vector<double> train_logloss;       // entry 0 = base score, then one per round

  std::size_t groups() const { return softmax ? num_classes : 1; }
};

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;

  bool valid() const { return feature >= 0; }
};

// 1/2 [G_L^2/(H_L+l) + G_R^2/(H_R+l) - (G_L+G_R)^2/(H_L+H_R+l)]
inline double split_gain(double gl, double hl, double gr, double hr, double lambda) {
  return 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - (gl + gr) * (gl + gr) / (hl + hr + lambda));
}

// Midpoint of two consecutive distinct sorted values, nudged so that lo < t <= hi.
inline double split_threshold(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  return mid > lo ? mid : hi;
}

namespace detail {

// Higher gain wins; near-ties go to the lower feature index, then the lower threshold.
inline bool better_split(const Split& cand, const Split& best) {
  if (!best.valid()) return cand.gain > 0.0;
  const double tol = 1e-12 * std::max(1.0, std::abs(best.gain));
  if (cand.gain > best.gain + tol) return true;
  if (cand.gain < best.gain - tol) return false;
  if (cand.feature != best.feature) return cand.feature < best.feature;
  return cand.threshold < best.threshold;
}

inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace detail

// Exact greedy search over the given rows and candidate columns: each column is
// sorted once and scanned with running gradient/hessian sums.
inline Split find_best_split(const FeatureMatrix& x, std::span<const std::size_t> rows,
                             std::span<const std::size_t> columns, std::span<const double> grad,
                             std::span<const double> hess, double lambda, double min_child_weight = 0.0) {
  Split best;
  if (rows.size() < 2) return best;
  double g_total = 0.0, h_total = 0.0;
  for (std::size_t r : rows) {
    g_total += grad[r];
    h_total += hess[r];
  }
  std::vector<std::size_t> sorted(rows.begin(), rows.end());
  for (std::size_t f : columns) {
    std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
      const double va = x.at(a, f), vb = x.at(b, f);
      return va < vb || (va == vb && a < b);
    });
    double gl = 0.0, hl = 0.0;
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
      gl += grad[sorted[i]];
      hl += hess[sorted[i]];
      const double lo = x.at(sorted[i], f);
      const double hi = x.at(sorted[i + 1], f);
      if (!(hi > lo)) continue;
      const double hr = h_total - hl;
      if (hl < min_child_weight || hr < min_child_weight) continue;
      const Split cand{static_cast<int>(f), split_threshold(lo, hi), split_gain(gl, hl, g_total - gl, hr, lambda)};
      if (detail::better_split(cand, best)) best = cand;
    }
  }
  return best;
}

// Brute force reference: every (feature, midpoint) pair, with both child sums
// recomputed from scratch over all rows.
inline Split best_split_oracle(const FeatureMatrix& x, std::span<const double> grad, std::span<const double> hess,
                               double lambda) {
  Split best;
  for (std::size_t f = 0; f < x.cols; ++f) {
    std::vector<double> distinct;
    for (std::size_t i = 0; i < x.rows; ++i) distinct.push_back(x.at(i, f));
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (std::size_t k = 0; k + 1 < distinct.size(); ++k) {
      const double thr = split_threshold(distinct[k], distinct[k + 1]);
      double gl = 0.0, hl = 0.0, gr = 0.0, hr = 0.0;
      for (std::size_t i = 0; i < x.rows; ++i) {
        if (x.at(i, f) < thr) {
          gl += grad[i];
          hl += hess[i];
        } else {
          gr += grad[i];
          hr += hess[i];
        }
      }
      const Split cand{static_cast<int>(f), thr, split_gain(gl, hl, gr, hr, lambda)};
      if (detail::better_split(cand, best)) best = cand;
    }
  }
  return best;
}

namespace detail {

struct TreeBuilder {
  const FeatureMatrix& x;
  std::span<const double> grad;
  std::span<const double> hess;
  std::span<const std::size_t> columns;
  const GbtParams& params;
  Tree tree;

  int build(std::vector<std::size_t> rows, int depth) {
    double g = 0.0, h = 0.0;
    for (std::size_t r : rows) {
      g += grad[r];
      h += hess[r];
    }
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(TreeNode{});
    tree.nodes[static_cast<std::size_t>(id)].value = -g / (h + params.lambda) * params.learning_rate;
    if (depth >= params.max_depth) return id;
    const Split s = find_best_split(x, rows, columns, grad, hess, params.lambda, params.min_child_weight);
    if (!s.valid()) return id;
    std::vector<std::size_t> left, right;
    for (std::size_t r : rows) {
      (x.at(r, static_cast<std::size_t>(s.feature)) < s.threshold ? left : right).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const int l = build(std::move(left), depth + 1);
    const int r = build(std::move(right), depth + 1);
    TreeNode& n = tree.nodes[static_cast<std::size_t>(id)];
    n.feature = s.feature;
    n.threshold = s.threshold;
    n.left = l;
    n.right = r;
    n.value = 0.0;
    return id;
  }
};

inline void margins_to_proba(const GbtModel& m, std::span<const double> margin, std::span<double> out) {
  if (!m.softmax) {
    const double p = sigmoid(margin[0]);
    out[0] = 1.0 - p;
    out[1] = p;
    return;
  }
  const double mx = *std::max_element(margin.begin(), margin.end());
  double total = 0.0;
  for (std::size_t k = 0; k < margin.size(); ++k) {
    out[k] = std::exp(margin[k] - mx);
    total += out[k];
  }
  for (std::size_t k = 0; k < margin.size(); ++k) out[k] /= total;
}

inline double mean_logloss(const GbtModel& m, const std::vector<double>& margins, std::span<const int> labels) {
  const std::size_t groups = m.groups();
  std::vector<double> p(m.num_classes);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    margins_to_proba(m, std::span<const double>(margins.data() + i * groups, groups), p);
    total -= std::log(std::max(p[static_cast<std::size_t>(labels[i])], 1e-300));
  }
  return total / static_cast<double>(labels.size());
}

}  // namespace detail

// Second-order boosting: logistic loss for binary tasks, softmax loss otherwise.
inline GbtModel fit(const FeatureMatrix& x, std::span<const int> labels, const GbtParams& params) {
  params.validate();
  if (x.cols == 0) throw ValidationError("gbt fit: feature matrix has no columns");
  if (x.rows < 2) throw ValidationError("gbt fit: need at least 2 rows");
  if (labels.size() != x.rows) throw ValidationError("gbt fit: label count does not match row count");
  int max_label = -1;
  for (int y : labels) {
    if (y < 0) throw ValidationError("gbt fit: negative label");
    max_label = std::max(max_label, y);
  }
  const std::size_t k = static_cast<std::size_t>(max_label) + 1;
  std::vector<std::size_t> counts(k, 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  if (k < 2) throw ValidationError("gbt fit: labels contain a single class");
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) throw ValidationError("gbt fit: class " + std::to_string(c) + " is absent");
  }

  GbtModel model;
  model.num_classes = k;
  model.num_features = x.cols;
  model.softmax = params.objective == Objective::Softmax || (params.objective == Objective::Auto && k > 2);
  if (!model.softmax && k != 2) throw ValidationError("gbt fit: logistic objective needs exactly 2 classes");
  const std::size_t groups = model.groups();
  const double n = static_cast<double>(x.rows);
  if (model.softmax) {
    for (std::size_t c = 0; c < k; ++c) model.base_score.push_back(std::log(counts[c] / n));
  } else {
    model.base_score.push_back(std::log(counts[1] / static_cast<double>(counts[0])));
  }

  std::vector<double> margins(x.rows * groups);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t g = 0; g < groups; ++g) margins[i * groups + g] = model.base_score[g];
  }
  model.train_logloss.push_back(detail::mean_logloss(model, margins, labels));

  Rng rng(params.seed);
  std::vector<double> grad(x.rows), hess(x.rows), p(k);
  std::vector<std::size_t> all_columns(x.cols);
  std::iota(all_columns.begin(), all_columns.end(), std::size_t{0});
  const std::size_t n_cols = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(params.column_subsample * static_cast<double>(x.cols))));

  for (int round = 0; round < params.rounds; ++round) {
    std::vector<std::size_t> rows;
    if (params.row_subsample < 1.0) {
      for (std::size_t i = 0; i < x.rows; ++i) {
        if (rng.uniform() < params.row_subsample) rows.push_back(i);
      }
      if (rows.empty()) rows.push_back(static_cast<std::size_t>(rng.below(x.rows)));
    } else {
      rows.resize(x.rows);
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    }

    std::vector<Tree> trees;
    std::vector<double> probs(x.rows * k);
    for (std::size_t i = 0; i < x.rows; ++i) {
      detail::margins_to_proba(model, std::span<const double>(margins.data() + i * groups, groups),
                               std::span<double>(probs.data() + i * k, k));
    }
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t cls = model.softmax ? g : 1;
      for (std::size_t i = 0; i < x.rows; ++i) {
        const double pi = probs[i * k + cls];
        const double yi = static_cast<std::size_t>(labels[i]) == cls ? 1.0 : 0.0;
        grad[i] = pi - yi;
        hess[i] = std::max((model.softmax ? 2.0 : 1.0) * pi * (1.0 - pi), 1e-16);
      }
      std::vector<std::size_t> columns = all_columns;
      if (n_cols < x.cols) {
        shuffle(columns, rng);
        columns.resize(n_cols);
        std::sort(columns.begin(), columns.end());
      }
      detail::TreeBuilder builder{x, grad, hess, columns, params, Tree{}};
      builder.build(rows, 0);
      trees.push_back(std::move(builder.tree));
    }
    for (std::size_t i = 0; i < x.rows; ++i) {
      for (std::size_t g = 0; g < groups; ++g) margins[i * groups + g] += trees[g].predict(x.row(i));
    }
    model.rounds.push_back(std::move(trees));
    model.train_logloss.push_back(detail::mean_logloss(model, margins, labels));
  }
  return model;
}

inline std::vector<double> predict_margin(const GbtModel& model, std::span<const double> features) {
  if (features.size() != model.num_features) {
    throw ValidationError("gbt predict: expected " + std::to_string(model.num_features) + " features, got " +
                          std::to_string(features.size()));
  }
  std::vector<double> margin = model.base_score;
  for (const auto& round : model.rounds) {
    for (std::size_t g = 0; g < round.size(); ++g) margin[g] += round[g].predict(features);
  }
  return margin;
}

inline std::vector<double> predict_proba(const GbtModel& model, std::span<const double> features) {
  const auto margin = predict_margin(model, features);
  std::vector<double> out(model.num_classes);
  detail::margins_to_proba(model, margin, out);
  return out;
}

inline std::size_t predict_class(const GbtModel& model, std::span<const double> features) {
  const auto p = predict_proba(model, features);
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

}  // namespace phonodec::gbt
